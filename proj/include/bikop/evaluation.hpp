#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bikop/meta_head.hpp"
#include "bikop/model.hpp"
#include "bikop/training.hpp"

namespace bikop {

struct EvalConfig {
  int n_episodes = 600;
  int n_way = 5;
  int k_shot = 1;
  int n_query = 15;
  Split split = Split::Novel;
  uint64_t seed = 7;
  int threads = 0;  // 0 = hardware concurrency

  void validate() const;
};

struct EvalReport {
  double mean_accuracy = 0.0;  // percent
  double ci95 = 0.0;           // percent, 1.96 * sample std / sqrt(n)
  int n_episodes = 0;
  int n_way = 0;
  int k_shot = 0;
  int n_query = 0;
  std::string split;
  uint64_t seed = 0;
  std::vector<double> per_episode_acc;  // fractions in [0, 1]
};

/// mean/ci aggregation shared by every evaluation path; per_episode_acc holds
/// fractions, the report is in percent.
EvalReport summarize_accuracies(const std::vector<double>& per_episode_acc);

/// Episode-batch evaluation with per-episode derived seeds. Model parameters
/// are read-only; episodes may be evaluated on several threads and are always
/// reduced in episode-index order.
EvalReport evaluate(Model& model, const Dataset& ds, const EvalConfig& cfg);

/// Same protocol but scoring an arbitrary logits function (used by stub-model
/// tests): fn(episode) must return NQ x N logits.
EvalReport evaluate_with(const std::function<Mat(const Dataset&, const Episode&)>& logits_fn,
                         const Dataset& ds, const EvalConfig& cfg);

struct MmcReport {
  Vec mmc;          // per-channel mean |feature|
  double cv = 0.0;  // std(mmc) / mean(mmc), population std
};

/// Per-channel mean absolute value over a feature set (n x C_d).
MmcReport compute_mmc(const Mat& features);

/// Prompt-free query features for every image of a split (optionally capped),
/// in image-row order.
Mat collect_query_features(Model& model, const Dataset& ds, Split split, int max_images = 0,
                           int threads = 0);

struct AttentionRecord {
  int support_index = 0;
  int class_id = 0;
  int label = 0;
  int image_row = 0;
  Mat grid;  // (H/P) x (W/P), rows sum to 1 across the whole grid
};

/// The vision->text similarity map of each support image, reshaped onto the
/// patch grid. Requires cross-attention permeation with the vision-to-text
/// direction active.
std::vector<AttentionRecord> dump_attention(Model& model, const Dataset& ds,
                                            const Episode& ep);

struct AblationCell {
  std::string name;
  std::function<void(ModelConfig&)> mutate_model;
  std::function<void(TrainConfig&)> mutate_train;
};

/// Named toggle grids: "table3", "fusion", "mu", "gamma", "w", "m", "d_depth".
std::vector<AblationCell> ablation_grid(const std::string& grid_name);

struct AblationRow {
  std::string cell;
  uint64_t seed = 0;
  double mean_accuracy = 0.0;
  double ci95 = 0.0;
  int n_episodes = 0;
  uint64_t episode_stream_hash = 0;  // hash of the training episode stream
};

/// Trains every cell with matched seeds (shared pretrained backbone per seed,
/// identical episode streams across cells) and evaluates on the novel split.
std::vector<AblationRow> run_ablation(const ModelConfig& base_model,
                                      const TrainConfig& base_train, const Dataset& ds,
                                      const std::vector<AblationCell>& cells,
                                      const std::vector<uint64_t>& seeds,
                                      const EvalConfig& eval_cfg,
                                      const std::function<void(const AblationRow&)>& on_row = {});

/// Hash of the episode stream a training config would consume; cells that
/// share (dataset, seed, episode shape) share this value.
uint64_t training_stream_hash(const Dataset& ds, const TrainConfig& cfg);

}  // namespace bikop
