#include "bikop/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace bikop {

using nlohmann::json;

namespace {

constexpr char kImageMagic[8] = {'B', 'K', 'D', 'I', 'M', 'G', '0', '1'};

// Palette colors, chosen with a few near-neighbour pairs so that brightness
// jitter makes single images genuinely confusable.
constexpr double kPalette[8][3] = {
    {0.90, 0.15, 0.15},  // red
    {0.95, 0.55, 0.10},  // orange
    {0.90, 0.90, 0.20},  // yellow
    {0.20, 0.80, 0.25},  // green
    {0.15, 0.80, 0.80},  // cyan
    {0.20, 0.35, 0.90},  // blue
    {0.60, 0.25, 0.85},  // purple
    {0.90, 0.20, 0.65},  // magenta
};

bool inside_shape(int shape, double dx, double dy, double r) {
  switch (shape) {
    case 0:  // disk
      return dx * dx + dy * dy <= r * r;
    case 1:  // square
      return std::max(std::abs(dx), std::abs(dy)) <= 0.82 * r;
    case 2:  // diamond
      return std::abs(dx) + std::abs(dy) <= 1.15 * r;
    case 3:  // ring
    {
      double d = std::sqrt(dx * dx + dy * dy);
      return d >= 0.55 * r && d <= r;
    }
    case 4:  // plus
      return (std::abs(dx) <= 0.35 * r && std::abs(dy) <= r) ||
             (std::abs(dy) <= 0.35 * r && std::abs(dx) <= r);
    case 5:  // diagonal cross
    {
      double u = (dx + dy) * 0.7071067811865476;
      double v = (dx - dy) * 0.7071067811865476;
      return (std::abs(u) <= 0.35 * r && std::abs(v) <= r) ||
             (std::abs(v) <= 0.35 * r && std::abs(u) <= r);
    }
    case 6:  // upward triangle
      return dy <= r && dy >= -r && std::abs(dx) <= 0.55 * (r - dy);
    default:
      throw std::invalid_argument("unknown shape id " + std::to_string(shape));
  }
}

void render_image(const DataConfig& cfg, const ClassSpec& spec, uint64_t image_seed,
                  float* out) {
  const int s = cfg.image_size;
  Rng rng(image_seed);

  // per-image jitter
  double cx = s / 2.0 + rng.uniform(-5.0, 5.0);
  double cy = s / 2.0 + rng.uniform(-5.0, 5.0);
  double radius = 0.28 * s * rng.uniform(0.75, 1.25);
  double brightness = rng.uniform(0.45, 1.0);
  double bg_level = rng.uniform(0.05, 0.30);

  const double* color = kPalette[spec.palette % 8];
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      double dx = (x + 0.5) - cx;
      double dy = (y + 0.5) - cy;
      bool fg = inside_shape(spec.shape, dx, dy, radius);
      for (int c = 0; c < cfg.channels; ++c) {
        double v;
        if (fg) {
          v = color[c % 3] * brightness;
        } else {
          v = bg_level * rng.uniform(0.6, 1.4);
        }
        v += 0.05 * rng.normal();
        v = std::clamp(v, 0.0, 1.0);
        out[(y * s + x) * cfg.channels + c] = static_cast<float>(v);
      }
    }
  }
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("unexpected end of file");
  return v;
}

}  // namespace

void DataConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
    throw ConfigError("data: image_size (" + std::to_string(image_size) +
                      ") must be a positive multiple of patch_size (" +
                      std::to_string(patch_size) + ")");
  }
  if (n_base < 0 || n_val < 0 || n_novel < 0 || images_per_class <= 0) {
    throw ConfigError("data: class counts must be non-negative and images_per_class positive");
  }
  if (n_shapes < 1 || n_shapes > 7 || n_palettes < 1 || n_palettes > 8) {
    throw ConfigError("data: n_shapes must be in [1,7] and n_palettes in [1,8]");
  }
  if (n_classes() > n_shapes * n_palettes) {
    throw ConfigError("data: " + std::to_string(n_classes()) + " classes exceed the " +
                      std::to_string(n_shapes * n_palettes) +
                      " available shape x palette combinations");
  }
  if (channels != 3) throw ConfigError("data: channels must be 3");
}

const char* split_name(Split s) {
  switch (s) {
    case Split::Base: return "base";
    case Split::Val: return "val";
    case Split::Novel: return "novel";
  }
  return "?";
}

Split split_from_name(const std::string& s) {
  if (s == "base") return Split::Base;
  if (s == "val") return Split::Val;
  if (s == "novel") return Split::Novel;
  throw ConfigError("unknown split '" + s + "' (expected base, val or novel)");
}

std::vector<int> Dataset::class_name_tokens(int class_id) const {
  if (class_id < 0 || class_id >= static_cast<int>(classes.size())) {
    throw std::invalid_argument("class_name_tokens: unknown class_id " +
                                std::to_string(class_id));
  }
  return classes[static_cast<size_t>(class_id)].name_tokens(config.n_shapes);
}

Vec Dataset::image_as_vec(int row) const {
  const float* p = image(row);
  Vec v(image_floats());
  for (int i = 0; i < image_floats(); ++i) v(i) = static_cast<double>(p[i]);
  return v;
}

Dataset generate_dataset(const DataConfig& config) {
  config.validate();
  Dataset ds;
  ds.config = config;

  // Enumerate all shape x palette combinations, shuffle, take the first
  // n_classes and split them base / val / novel in order.
  std::vector<std::pair<int, int>> combos;
  for (int s = 0; s < config.n_shapes; ++s) {
    for (int p = 0; p < config.n_palettes; ++p) combos.emplace_back(s, p);
  }
  Rng class_rng(derive_seed(config.master_seed, "classes"));
  std::vector<int> order =
      class_rng.sample_indices(static_cast<int>(combos.size()), config.n_classes());

  ds.splits.resize(3);
  for (int c = 0; c < config.n_classes(); ++c) {
    ClassSpec spec;
    spec.class_id = c;
    spec.shape = combos[static_cast<size_t>(order[static_cast<size_t>(c)])].first;
    spec.palette = combos[static_cast<size_t>(order[static_cast<size_t>(c)])].second;
    spec.split = c < config.n_base ? 0 : (c < config.n_base + config.n_val ? 1 : 2);
    ds.splits[static_cast<size_t>(spec.split)].push_back(c);
    ds.classes.push_back(spec);
  }

  const size_t per_image =
      static_cast<size_t>(config.image_size) * config.image_size * config.channels;
  ds.images.resize(per_image * static_cast<size_t>(config.n_classes()) *
                   config.images_per_class);
  ds.image_class.resize(static_cast<size_t>(config.n_classes()) * config.images_per_class);
  for (const ClassSpec& spec : ds.classes) {
    for (int k = 0; k < config.images_per_class; ++k) {
      int row = ds.image_row(spec.class_id, k);
      ds.image_class[static_cast<size_t>(row)] = spec.class_id;
      uint64_t seed = derive_seed(config.master_seed, "image",
                                  (static_cast<uint64_t>(spec.class_id) << 32) |
                                      static_cast<uint64_t>(k));
      render_image(config, spec, seed, ds.images.data() + per_image * static_cast<size_t>(row));
    }
  }
  return ds;
}

Episode sample_episode(const Dataset& ds, Split split, int n_way, int k_shot, int n_query,
                       Rng& rng) {
  const auto& classes = ds.split_classes(split);
  if (n_way < 1 || k_shot < 1 || n_query < 1) {
    throw ConfigError("sample_episode: n_way, k_shot and n_query must be positive");
  }
  if (static_cast<int>(classes.size()) < n_way) {
    throw ConfigError("sample_episode: split '" + std::string(split_name(split)) + "' has " +
                      std::to_string(classes.size()) + " classes, need " +
                      std::to_string(n_way));
  }
  if (ds.config.images_per_class < k_shot + n_query) {
    throw ConfigError("sample_episode: class has " +
                      std::to_string(ds.config.images_per_class) + " images, need " +
                      std::to_string(k_shot + n_query));
  }

  Episode ep;
  ep.n_way = n_way;
  ep.k_shot = k_shot;
  ep.n_query = n_query;

  std::vector<int> picked = rng.sample_indices(static_cast<int>(classes.size()), n_way);
  for (int label = 0; label < n_way; ++label) {
    int class_id = classes[static_cast<size_t>(picked[static_cast<size_t>(label)])];
    ep.class_ids.push_back(class_id);
    ep.slot_of_label.push_back(label);
    std::vector<int> imgs = rng.sample_indices(ds.config.images_per_class, k_shot + n_query);
    for (int i = 0; i < k_shot; ++i) {
      ep.support.push_back(
          {ds.image_row(class_id, imgs[static_cast<size_t>(i)]), label, class_id});
    }
    for (int i = 0; i < n_query; ++i) {
      ep.query.push_back(
          {ds.image_row(class_id, imgs[static_cast<size_t>(k_shot + i)]), label});
    }
  }
  return ep;
}

uint64_t episode_hash(const Episode& ep) {
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](uint64_t v) {
    h ^= v;
    h *= 0x100000001b3ull;
  };
  mix(static_cast<uint64_t>(ep.n_way));
  mix(static_cast<uint64_t>(ep.k_shot));
  mix(static_cast<uint64_t>(ep.n_query));
  for (const auto& s : ep.support) {
    mix(static_cast<uint64_t>(s.image_row));
    mix(static_cast<uint64_t>(s.label));
  }
  for (const auto& q : ep.query) {
    mix(static_cast<uint64_t>(q.image_row));
    mix(static_cast<uint64_t>(q.label));
  }
  return h;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  json manifest;
  manifest["format"] = "bikop-dataset";
  manifest["version"] = 1;
  manifest["image_file"] = "images.bin";
  manifest["config"] = {
      {"image_size", ds.config.image_size},
      {"channels", ds.config.channels},
      {"patch_size", ds.config.patch_size},
      {"n_base", ds.config.n_base},
      {"n_val", ds.config.n_val},
      {"n_novel", ds.config.n_novel},
      {"images_per_class", ds.config.images_per_class},
      {"n_shapes", ds.config.n_shapes},
      {"n_palettes", ds.config.n_palettes},
      {"master_seed", ds.config.master_seed},
  };
  json jclasses = json::array();
  for (const auto& c : ds.classes) {
    jclasses.push_back({{"id", c.class_id},
                        {"shape", c.shape},
                        {"palette", c.palette},
                        {"split", split_name(static_cast<Split>(c.split))},
                        {"name_tokens", c.name_tokens(ds.config.n_shapes)}});
  }
  manifest["classes"] = jclasses;

  std::ofstream mf(dir + "/manifest.json");
  if (!mf) throw IoError("cannot write " + dir + "/manifest.json");
  mf << manifest.dump(2) << "\n";

  std::ofstream bf(dir + "/images.bin", std::ios::binary);
  if (!bf) throw IoError("cannot write " + dir + "/images.bin");
  bf.write(kImageMagic, sizeof(kImageMagic));
  write_pod<uint32_t>(bf, 1);  // version
  write_pod<uint32_t>(bf, static_cast<uint32_t>(ds.n_images()));
  write_pod<uint32_t>(bf, static_cast<uint32_t>(ds.config.image_size));
  write_pod<uint32_t>(bf, static_cast<uint32_t>(ds.config.image_size));
  write_pod<uint32_t>(bf, static_cast<uint32_t>(ds.config.channels));
  bf.write(reinterpret_cast<const char*>(ds.images.data()),
           static_cast<std::streamsize>(ds.images.size() * sizeof(float)));
  if (!bf) throw IoError("failed writing image data to " + dir + "/images.bin");
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw IoError("missing dataset manifest: " + dir + "/manifest.json");
  json manifest = json::parse(mf, nullptr, /*allow_exceptions=*/false);
  if (manifest.is_discarded()) throw IoError("corrupt manifest.json in " + dir);
  if (manifest.value("format", "") != "bikop-dataset") {
    throw IoError(dir + "/manifest.json is not a bikop dataset manifest");
  }

  Dataset ds;
  const json& jc = manifest.at("config");
  ds.config.image_size = jc.at("image_size").get<int>();
  ds.config.channels = jc.at("channels").get<int>();
  ds.config.patch_size = jc.at("patch_size").get<int>();
  ds.config.n_base = jc.at("n_base").get<int>();
  ds.config.n_val = jc.at("n_val").get<int>();
  ds.config.n_novel = jc.at("n_novel").get<int>();
  ds.config.images_per_class = jc.at("images_per_class").get<int>();
  ds.config.n_shapes = jc.at("n_shapes").get<int>();
  ds.config.n_palettes = jc.at("n_palettes").get<int>();
  ds.config.master_seed = jc.at("master_seed").get<uint64_t>();

  ds.splits.resize(3);
  for (const auto& c : manifest.at("classes")) {
    ClassSpec spec;
    spec.class_id = c.at("id").get<int>();
    spec.shape = c.at("shape").get<int>();
    spec.palette = c.at("palette").get<int>();
    spec.split = static_cast<int>(split_from_name(c.at("split").get<std::string>()));
    ds.splits[static_cast<size_t>(spec.split)].push_back(spec.class_id);
    ds.classes.push_back(spec);
  }

  std::string image_file = dir + "/" + manifest.value("image_file", "images.bin");
  std::ifstream bf(image_file, std::ios::binary);
  if (!bf) throw IoError("missing dataset images: " + image_file);
  char magic[8];
  bf.read(magic, sizeof(magic));
  if (!bf || std::memcmp(magic, kImageMagic, sizeof(magic)) != 0) {
    throw IoError(image_file + ": bad magic, not a bikop image file");
  }
  uint32_t version = read_pod<uint32_t>(bf);
  if (version != 1) throw IoError(image_file + ": unsupported version");
  uint32_t n = read_pod<uint32_t>(bf);
  uint32_t h = read_pod<uint32_t>(bf);
  uint32_t w = read_pod<uint32_t>(bf);
  uint32_t c = read_pod<uint32_t>(bf);
  if (static_cast<int>(h) != ds.config.image_size ||
      static_cast<int>(w) != ds.config.image_size ||
      static_cast<int>(c) != ds.config.channels) {
    throw IoError(image_file + ": image shape header disagrees with manifest");
  }
  size_t count = static_cast<size_t>(n) * h * w * c;
  ds.images.resize(count);
  bf.read(reinterpret_cast<char*>(ds.images.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (!bf) throw IoError(image_file + ": truncated image data");

  ds.image_class.resize(n);
  for (const auto& spec : ds.classes) {
    for (int k = 0; k < ds.config.images_per_class; ++k) {
      int row = ds.image_row(spec.class_id, k);
      if (row >= static_cast<int>(n)) throw IoError(image_file + ": image count mismatch");
      ds.image_class[static_cast<size_t>(row)] = spec.class_id;
    }
  }
  return ds;
}

}  // namespace bikop
