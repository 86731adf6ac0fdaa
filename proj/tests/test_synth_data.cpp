#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "bikop/synth_data.hpp"

using namespace bikop;

namespace {

DataConfig small_config() {
  DataConfig cfg;
  cfg.n_base = 8;
  cfg.n_val = 3;
  cfg.n_novel = 4;
  cfg.images_per_class = 20;
  cfg.master_seed = 99;
  return cfg;
}

}  // namespace

TEST_CASE("default config yields 35 classes with pairwise-disjoint splits") {
  DataConfig cfg;
  cfg.images_per_class = 4;  // keep rendering cheap; split logic is count-independent
  Dataset ds = generate_dataset(cfg);
  CHECK(ds.classes.size() == 35);
  std::set<int> base(ds.split_classes(Split::Base).begin(),
                     ds.split_classes(Split::Base).end());
  std::set<int> val(ds.split_classes(Split::Val).begin(), ds.split_classes(Split::Val).end());
  std::set<int> novel(ds.split_classes(Split::Novel).begin(),
                      ds.split_classes(Split::Novel).end());
  CHECK(base.size() == 20);
  CHECK(val.size() == 5);
  CHECK(novel.size() == 10);
  for (int c : base) {
    CHECK(val.count(c) == 0);
    CHECK(novel.count(c) == 0);
  }
  for (int c : val) CHECK(novel.count(c) == 0);
  // distinct classes differ in at least one generator parameter
  std::set<std::pair<int, int>> combos;
  for (const auto& spec : ds.classes) combos.insert({spec.shape, spec.palette});
  CHECK(combos.size() == ds.classes.size());
}

TEST_CASE("same seed twice gives byte-identical images, different seed differs") {
  DataConfig cfg = small_config();
  Dataset a = generate_dataset(cfg);
  Dataset b = generate_dataset(cfg);
  REQUIRE(a.images.size() == b.images.size());
  CHECK(std::memcmp(a.images.data(), b.images.data(), a.images.size() * sizeof(float)) == 0);

  cfg.master_seed = 100;
  Dataset c = generate_dataset(cfg);
  CHECK(std::memcmp(a.images.data(), c.images.data(), a.images.size() * sizeof(float)) != 0);
}

TEST_CASE("mean inter-class pixel distance exceeds mean intra-class distance") {
  // brute-force oracle over all class pairs on a subsample of images
  DataConfig cfg = small_config();
  Dataset ds = generate_dataset(cfg);
  const int per = 8;
  const int n_classes = static_cast<int>(ds.classes.size());
  auto dist = [&](int r1, int r2) {
    const float* a = ds.image(r1);
    const float* b = ds.image(r2);
    double s = 0.0;
    for (int i = 0; i < ds.image_floats(); ++i) {
      double d = double(a[i]) - double(b[i]);
      s += d * d;
    }
    return std::sqrt(s);
  };
  double intra = 0.0;
  long intra_n = 0;
  double inter = 0.0;
  long inter_n = 0;
  for (int c1 = 0; c1 < n_classes; ++c1) {
    for (int i = 0; i < per; ++i) {
      for (int j = i + 1; j < per; ++j) {
        intra += dist(ds.image_row(c1, i), ds.image_row(c1, j));
        intra_n++;
      }
      for (int c2 = c1 + 1; c2 < n_classes; ++c2) {
        for (int j = 0; j < per; ++j) {
          inter += dist(ds.image_row(c1, i), ds.image_row(c2, j));
          inter_n++;
        }
      }
    }
  }
  CHECK(inter / inter_n > intra / intra_n);
}

TEST_CASE("class count exceeding shape x palette combinations is rejected") {
  DataConfig cfg;
  cfg.n_shapes = 3;
  cfg.n_palettes = 3;
  cfg.n_base = 8;
  cfg.n_val = 1;
  cfg.n_novel = 1;  // 10 > 9
  CHECK_THROWS_AS(generate_dataset(cfg), ConfigError);
}

TEST_CASE("image size must divide by patch size") {
  DataConfig cfg;
  cfg.image_size = 30;
  CHECK_THROWS_AS(generate_dataset(cfg), ConfigError);
}

TEST_CASE("episode shapes: N=5 K=1 Q=15 gives 5 support and 75 query") {
  DataConfig cfg = small_config();
  Dataset ds = generate_dataset(cfg);
  Rng rng(1);
  Episode ep = sample_episode(ds, Split::Base, 5, 1, 15, rng);
  CHECK(ep.support.size() == 5);
  CHECK(ep.query.size() == 75);
  // labels bijective onto sampled classes, K and Q occurrences each
  std::vector<int> sup_count(5, 0), q_count(5, 0);
  std::set<int> sup_rows, q_rows;
  for (const auto& s : ep.support) {
    sup_count[size_t(s.label)]++;
    sup_rows.insert(s.image_row);
  }
  for (const auto& q : ep.query) {
    q_count[size_t(q.label)]++;
    q_rows.insert(q.image_row);
  }
  for (int c = 0; c < 5; ++c) {
    CHECK(sup_count[size_t(c)] == 1);
    CHECK(q_count[size_t(c)] == 15);
  }
  for (int r : sup_rows) CHECK(q_rows.count(r) == 0);
  std::set<int> uniq(ep.class_ids.begin(), ep.class_ids.end());
  CHECK(uniq.size() == 5);
}

TEST_CASE("degenerate 1-way 1-shot 1-query episode") {
  DataConfig cfg = small_config();
  Dataset ds = generate_dataset(cfg);
  Rng rng(2);
  Episode ep = sample_episode(ds, Split::Novel, 1, 1, 1, rng);
  CHECK(ep.support.size() == 1);
  CHECK(ep.query.size() == 1);
  CHECK(ep.support[0].label == 0);
  CHECK(ep.query[0].label == 0);
}

TEST_CASE("insufficient classes or images raise explicit errors") {
  DataConfig cfg = small_config();
  Dataset ds = generate_dataset(cfg);
  Rng rng(3);
  CHECK_THROWS_AS((void)sample_episode(ds, Split::Val, 4, 1, 5, rng), ConfigError);
  CHECK_THROWS_AS((void)sample_episode(ds, Split::Base, 5, 10, 15, rng), ConfigError);
}

TEST_CASE("10k episodes cover every novel class near-uniformly") {
  DataConfig cfg = small_config();  // 4 novel classes
  Dataset ds = generate_dataset(cfg);
  std::vector<long> count(ds.classes.size(), 0);
  const int episodes = 10000;
  const int n_way = 2;
  for (int i = 0; i < episodes; ++i) {
    Rng rng(derive_seed(42, "freq-test", uint64_t(i)));
    Episode ep = sample_episode(ds, Split::Novel, n_way, 1, 1, rng);
    for (int c : ep.class_ids) count[size_t(c)]++;
  }
  double expected = double(episodes) * n_way / 4.0;
  for (int c : ds.split_classes(Split::Novel)) {
    CHECK(count[size_t(c)] > 0);
    CHECK(std::abs(count[size_t(c)] - expected) / expected < 0.2);
  }
}

TEST_CASE("compositional name tokens") {
  DataConfig cfg = small_config();
  Dataset ds = generate_dataset(cfg);
  for (const auto& spec : ds.classes) {
    auto toks = ds.class_name_tokens(spec.class_id);
    REQUIRE(toks.size() == 2);
    CHECK(toks[0] == spec.shape);
    CHECK(toks[1] == cfg.n_shapes + spec.palette);
  }
  // classes sharing a shape share the first token
  for (const auto& a : ds.classes) {
    for (const auto& b : ds.classes) {
      if (a.shape == b.shape) {
        CHECK(ds.class_name_tokens(a.class_id)[0] == ds.class_name_tokens(b.class_id)[0]);
      }
    }
  }
  CHECK(ds.vocab_size() == cfg.n_shapes + cfg.n_palettes);
  CHECK_THROWS_AS((void)ds.class_name_tokens(9999), std::invalid_argument);
}

TEST_CASE("dataset round-trips through manifest + binary blob byte-exactly") {
  namespace fs = std::filesystem;
  DataConfig cfg = small_config();
  cfg.images_per_class = 6;
  Dataset ds = generate_dataset(cfg);
  fs::path dir = fs::temp_directory_path() / "bikop_ds_test";
  fs::create_directories(dir);
  save_dataset(ds, dir.string());
  Dataset back = load_dataset(dir.string());
  CHECK(back.classes.size() == ds.classes.size());
  REQUIRE(back.images.size() == ds.images.size());
  CHECK(std::memcmp(back.images.data(), ds.images.data(),
                    ds.images.size() * sizeof(float)) == 0);
  for (size_t i = 0; i < ds.classes.size(); ++i) {
    CHECK(back.classes[i].shape == ds.classes[i].shape);
    CHECK(back.classes[i].palette == ds.classes[i].palette);
    CHECK(back.classes[i].split == ds.classes[i].split);
  }
  // save -> load -> save produces identical bytes
  fs::path dir2 = fs::temp_directory_path() / "bikop_ds_test2";
  fs::create_directories(dir2);
  save_dataset(back, dir2.string());
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(dir / "images.bin") == slurp(dir2 / "images.bin"));
  CHECK(slurp(dir / "manifest.json") == slurp(dir2 / "manifest.json"));
  fs::remove_all(dir);
  fs::remove_all(dir2);

  CHECK_THROWS_AS(load_dataset("/nonexistent/bikop"), IoError);
}

TEST_CASE("episode hash changes with content and is stable") {
  DataConfig cfg = small_config();
  Dataset ds = generate_dataset(cfg);
  Rng r1(5), r2(5), r3(6);
  Episode a = sample_episode(ds, Split::Base, 3, 1, 2, r1);
  Episode b = sample_episode(ds, Split::Base, 3, 1, 2, r2);
  Episode c = sample_episode(ds, Split::Base, 3, 1, 2, r3);
  CHECK(episode_hash(a) == episode_hash(b));
  CHECK(episode_hash(a) != episode_hash(c));
}
