#include "bikop/evaluation.hpp"

#include <cmath>
#include <thread>

#include "bikop/checkpoint.hpp"

namespace bikop {

void EvalConfig::validate() const {
  if (n_episodes < 1) throw ConfigError("eval: n_episodes must be >= 1");
  if (n_way < 1 || k_shot < 1 || n_query < 1) {
    throw ConfigError("eval: n_way, k_shot, n_query must be positive");
  }
  if (threads < 0) throw ConfigError("eval: threads must be >= 0");
}

EvalReport summarize_accuracies(const std::vector<double>& per_episode_acc) {
  if (per_episode_acc.empty()) throw std::invalid_argument("summarize: no episodes");
  EvalReport rep;
  rep.n_episodes = static_cast<int>(per_episode_acc.size());
  rep.per_episode_acc = per_episode_acc;
  double mean = 0.0;
  for (double a : per_episode_acc) mean += a;
  mean /= static_cast<double>(per_episode_acc.size());
  rep.mean_accuracy = 100.0 * mean;
  if (per_episode_acc.size() > 1) {
    double ss = 0.0;
    for (double a : per_episode_acc) ss += (a - mean) * (a - mean);
    double sample_std = std::sqrt(ss / static_cast<double>(per_episode_acc.size() - 1));
    rep.ci95 = 100.0 * 1.96 * sample_std / std::sqrt(static_cast<double>(per_episode_acc.size()));
  }
  return rep;
}

namespace {

int resolve_threads(int requested, int jobs) {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  int t = requested == 0 ? hw : requested;
  return std::max(1, std::min(t, jobs));
}

template <typename Fn>
void parallel_indexed(int jobs, int threads, Fn&& fn) {
  if (threads <= 1) {
    for (int i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (int i = w; i < jobs; i += threads) fn(i);
      } catch (...) {
        errors[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

EvalReport evaluate(Model& model, const Dataset& ds, const EvalConfig& cfg) {
  cfg.validate();
  std::vector<double> accs(static_cast<size_t>(cfg.n_episodes));
  int threads = resolve_threads(cfg.threads, cfg.n_episodes);
  parallel_indexed(cfg.n_episodes, threads, [&](int i) {
    Rng ep_rng(derive_seed(cfg.seed, "eval-episode", static_cast<uint64_t>(i)));
    Episode ep = sample_episode(ds, cfg.split, cfg.n_way, cfg.k_shot, cfg.n_query, ep_rng);
    Tape t(/*grad_enabled=*/false);
    EpisodeOutput out = forward_episode(t, model, ds, ep, nullptr, Mode::Eval);
    accs[static_cast<size_t>(i)] = out.accuracy;
  });
  EvalReport rep = summarize_accuracies(accs);
  rep.n_way = cfg.n_way;
  rep.k_shot = cfg.k_shot;
  rep.n_query = cfg.n_query;
  rep.split = split_name(cfg.split);
  rep.seed = cfg.seed;
  return rep;
}

EvalReport evaluate_with(const std::function<Mat(const Dataset&, const Episode&)>& logits_fn,
                         const Dataset& ds, const EvalConfig& cfg) {
  cfg.validate();
  std::vector<double> accs(static_cast<size_t>(cfg.n_episodes));
  for (int i = 0; i < cfg.n_episodes; ++i) {
    Rng ep_rng(derive_seed(cfg.seed, "eval-episode", static_cast<uint64_t>(i)));
    Episode ep = sample_episode(ds, cfg.split, cfg.n_way, cfg.k_shot, cfg.n_query, ep_rng);
    Mat logits = logits_fn(ds, ep);
    if (logits.rows() != static_cast<Eigen::Index>(ep.query.size()) ||
        logits.cols() != ep.n_way) {
      throw std::invalid_argument("evaluate_with: logits must be NQ x N");
    }
    int correct = 0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index arg;
      logits.row(r).maxCoeff(&arg);
      if (static_cast<int>(arg) == ep.query[static_cast<size_t>(r)].label) correct++;
    }
    accs[static_cast<size_t>(i)] = static_cast<double>(correct) / logits.rows();
  }
  EvalReport rep = summarize_accuracies(accs);
  rep.n_way = cfg.n_way;
  rep.k_shot = cfg.k_shot;
  rep.n_query = cfg.n_query;
  rep.split = split_name(cfg.split);
  rep.seed = cfg.seed;
  return rep;
}

MmcReport compute_mmc(const Mat& features) {
  if (features.rows() < 1) throw std::invalid_argument("compute_mmc: need at least one row");
  MmcReport rep;
  rep.mmc = features.cwiseAbs().colwise().mean().transpose();
  double mean = rep.mmc.mean();
  if (mean == 0.0) {
    throw NumericError("compute_mmc: all-zero features, coefficient of variation undefined");
  }
  double var = (rep.mmc.array() - mean).square().mean();
  rep.cv = std::sqrt(var) / mean;
  return rep;
}

Mat collect_query_features(Model& model, const Dataset& ds, Split split, int max_images,
                           int threads) {
  std::vector<int> rows;
  for (int c : ds.split_classes(split)) {
    for (int k = 0; k < ds.config.images_per_class; ++k) {
      rows.push_back(ds.image_row(c, k));
      if (max_images > 0 && static_cast<int>(rows.size()) >= max_images) break;
    }
    if (max_images > 0 && static_cast<int>(rows.size()) >= max_images) break;
  }
  if (rows.empty()) throw ConfigError("collect_query_features: split is empty");

  const int batch = 64;
  int n_batches = (static_cast<int>(rows.size()) + batch - 1) / batch;
  Mat out(static_cast<Eigen::Index>(rows.size()), model.cfg.backbone.c_d);
  parallel_indexed(n_batches, resolve_threads(threads, n_batches), [&](int b) {
    int start = b * batch;
    int count = std::min(batch, static_cast<int>(rows.size()) - start);
    std::vector<int> chunk(rows.begin() + start, rows.begin() + start + count);
    Tape t(/*grad_enabled=*/false);
    Var feats = model.backbone.encode_query(t, ds, chunk);
    out.middleRows(start, count) = t.val(feats);
  });
  return out;
}

std::vector<AttentionRecord> dump_attention(Model& model, const Dataset& ds,
                                            const Episode& ep) {
  if (!model.cfg.bkp.enabled || model.cfg.bkp.fusion != Fusion::CrossAttention) {
    throw ConfigError("dump_attention: requires cross-attention knowledge permeation");
  }
  if (model.cfg.bkp.direction == Direction::TextToVision) {
    throw ConfigError("dump_attention: vision-to-text direction is disabled");
  }
  Tape t(/*grad_enabled=*/false);
  EpisodeOutput out =
      forward_episode(t, model, ds, ep, nullptr, Mode::Eval, /*record_attention=*/true);
  const int gw = model.cfg.backbone.image_w / model.cfg.backbone.patch_size;
  const int gh = model.cfg.backbone.image_h / model.cfg.backbone.patch_size;
  std::vector<AttentionRecord> records;
  for (size_t i = 0; i < ep.support.size(); ++i) {
    const Mat& a_t = out.support_a_t[i];
    AttentionRecord rec;
    rec.support_index = static_cast<int>(i);
    rec.class_id = ep.support[i].class_id;
    rec.label = ep.support[i].label;
    rec.image_row = ep.support[i].image_row;
    rec.grid.resize(gh, gw);
    for (int y = 0; y < gh; ++y) {
      for (int x = 0; x < gw; ++x) rec.grid(y, x) = a_t(0, y * gw + x);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<AblationCell> ablation_grid(const std::string& grid_name) {
  std::vector<AblationCell> cells;
  auto model_cell = [&cells](const std::string& name, std::function<void(ModelConfig&)> fn) {
    cells.push_back({name, std::move(fn), {}});
  };
  if (grid_name == "table3") {
    model_cell("baseline", [](ModelConfig& m) {
      m.text.mode = TextMode::None;
      m.bkp.enabled = false;
      m.sad.enabled = false;
    });
    model_cell("prompt_only", [](ModelConfig& m) {
      m.text.mode = TextMode::MetaPrompt;
      m.bkp.enabled = false;
      m.sad.enabled = false;
    });
    model_cell("prompt_t2v", [](ModelConfig& m) {
      m.text.mode = TextMode::MetaPrompt;
      m.bkp.enabled = true;
      m.bkp.direction = Direction::TextToVision;
      m.sad.enabled = false;
    });
    model_cell("prompt_v2t", [](ModelConfig& m) {
      m.text.mode = TextMode::MetaPrompt;
      m.bkp.enabled = true;
      m.bkp.direction = Direction::VisionToText;
      m.sad.enabled = false;
    });
    model_cell("prompt_bkp", [](ModelConfig& m) {
      m.text.mode = TextMode::MetaPrompt;
      m.bkp.enabled = true;
      m.bkp.direction = Direction::Bidirectional;
      m.sad.enabled = false;
    });
    model_cell("name_bkp_sad", [](ModelConfig& m) {
      m.text.mode = TextMode::NameOnly;
      m.bkp.enabled = true;
      m.bkp.direction = Direction::Bidirectional;
      m.sad.enabled = true;
    });
    model_cell("full", [](ModelConfig& m) {
      m.text.mode = TextMode::MetaPrompt;
      m.bkp.enabled = true;
      m.bkp.direction = Direction::Bidirectional;
      m.sad.enabled = true;
    });
  } else if (grid_name == "fusion") {
    for (Fusion f : {Fusion::Dot, Fusion::Add, Fusion::Concat, Fusion::CrossAttention}) {
      model_cell(std::string("fusion_") + fusion_name(f),
                 [f](ModelConfig& m) { m.bkp.fusion = f; });
    }
  } else if (grid_name == "mu") {
    for (double mu : {0.0, 0.1, 0.2, 0.5, 1.0}) {
      model_cell("mu_" + std::to_string(mu).substr(0, 4),
                 [mu](ModelConfig& m) { m.bkp.mu = mu; });
    }
  } else if (grid_name == "gamma") {
    for (double g : {0.0, 0.25, 0.5, 1.0, 2.0}) {
      model_cell("gamma_" + std::to_string(g).substr(0, 4),
                 [g](ModelConfig& m) { m.loss.gamma = g; });
    }
  } else if (grid_name == "w") {
    for (int w : {0, 2, 4, 8, 16}) {
      model_cell("w_" + std::to_string(w), [w](ModelConfig& m) {
        if (w == 0) {
          m.text.mode = TextMode::NameOnly;
        } else {
          m.text.mode = TextMode::MetaPrompt;
          m.text.prefix_len = w;
        }
      });
    }
  } else if (grid_name == "m") {
    for (int m : {1, 8, 16, 32, 48}) {
      model_cell("m_" + std::to_string(m), [m](ModelConfig& c) { c.sad.m = m; });
    }
  } else if (grid_name == "d_depth") {
    for (int d : {1, 2, 3}) {
      model_cell("d_depth_" + std::to_string(d), [d](ModelConfig& m) { m.sad.mlp_depth = d; });
    }
  } else {
    throw ConfigError("unknown ablation grid '" + grid_name +
                      "' (expected table3, fusion, mu, gamma, w, m or d_depth)");
  }
  return cells;
}

uint64_t training_stream_hash(const Dataset& ds, const TrainConfig& cfg) {
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](uint64_t v) {
    h ^= v;
    h *= 0x100000001b3ull;
  };
  for (int i = 0; i < cfg.finetune_episodes; ++i) {
    Rng ep_rng(derive_seed(cfg.seed, "finetune-episode", static_cast<uint64_t>(i)));
    Episode ep = sample_episode(ds, Split::Base, cfg.n_way, cfg.k_shot, cfg.n_query, ep_rng);
    mix(episode_hash(ep));
  }
  return h;
}

std::vector<AblationRow> run_ablation(const ModelConfig& base_model,
                                      const TrainConfig& base_train, const Dataset& ds,
                                      const std::vector<AblationCell>& cells,
                                      const std::vector<uint64_t>& seeds,
                                      const EvalConfig& eval_cfg,
                                      const std::function<void(const AblationRow&)>& on_row) {
  std::vector<AblationRow> rows;
  for (uint64_t seed : seeds) {
    // One backbone pretrain per seed, shared by every cell.
    ModelConfig pre_cfg = base_model;
    pre_cfg.init_seed = seed;
    Model pre_model;
    pre_model.init(pre_cfg);
    TrainConfig pre_train = base_train;
    pre_train.seed = seed;
    pretrain(pre_model, ds, pre_train);
    Checkpoint backbone_ck = snapshot_model(pre_model, "", "pretrain", "");

    for (const auto& cell : cells) {
      ModelConfig mc = base_model;
      mc.init_seed = seed;
      if (cell.mutate_model) cell.mutate_model(mc);
      TrainConfig tc = base_train;
      tc.seed = seed;
      if (cell.mutate_train) cell.mutate_train(tc);

      Model model;
      model.init(mc);  // throws on incompatible toggle combinations
      apply_checkpoint_prefix(backbone_ck, model, {"backbone."});
      finetune(model, ds, tc);

      EvalConfig ec = eval_cfg;
      ec.seed = derive_seed(seed, "ablation-eval");
      EvalReport rep = evaluate(model, ds, ec);

      AblationRow row;
      row.cell = cell.name;
      row.seed = seed;
      row.mean_accuracy = rep.mean_accuracy;
      row.ci95 = rep.ci95;
      row.n_episodes = rep.n_episodes;
      row.episode_stream_hash = training_stream_hash(ds, tc);
      rows.push_back(row);
      if (on_row) on_row(row);
    }
  }
  return rows;
}

}  // namespace bikop
