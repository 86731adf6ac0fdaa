#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "bikop/meta_head.hpp"
#include "bikop/model.hpp"

namespace bikop {

struct TrainConfig {
  int pretrain_epochs = 12;
  int pretrain_batch = 64;
  double pretrain_lr = 1e-3;   // the backbone trains from scratch at desk scale
  int finetune_episodes = 600;
  double base_lr = 1e-4;
  double weight_decay = 1e-5;
  double lr_mult_bkp = 10.0;
  double lr_mult_sad = 50.0;
  int n_way = 5;
  int k_shot = 1;
  int n_query = 6;             // queries per class in *training* episodes
  int val_every = 200;         // evaluate on the val split every this many episodes
  int val_episodes = 60;
  int val_n_query = 15;
  uint64_t seed = 42;

  void validate() const;
};

/// Decoupled-weight-decay Adam. Groups carry per-group learning-rate
/// multipliers; decay is applied as direct shrinkage, never through the
/// gradient.
class AdamW {
public:
  AdamW(std::vector<std::pair<Param*, ParamGroup>> params, double base_lr,
        double weight_decay, double lr_mult_bkp, double lr_mult_sad);

  void step();
  double lr_of(const Param& p) const;
  void set_base_lr(double lr) { base_lr_ = lr; }

private:
  struct Slot {
    Param* param;
    ParamGroup group;
    Mat m;
    Mat v;
  };
  std::vector<Slot> slots_;
  double base_lr_;
  double weight_decay_;
  double mult_bkp_;
  double mult_sad_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long step_count_ = 0;
};

struct EpochStats {
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

struct PretrainResult {
  std::vector<EpochStats> epochs;
};

/// Supervised warm-up of the backbone on the base split with a throwaway
/// linear classifier. Text, permeation and filter parameters are untouched.
PretrainResult pretrain(Model& model, const Dataset& ds, const TrainConfig& cfg,
                        const std::function<void(int, const EpochStats&)>& on_epoch = {});

struct FinetuneRecord {
  int episode = 0;
  double loss_total = 0.0;
  double loss_cls = 0.0;
  double loss_adv = 0.0;
  double accuracy = 0.0;
};

struct FinetuneResult {
  std::vector<FinetuneRecord> log;
  std::vector<std::pair<int, double>> val_curve;  // (episode, val accuracy %)
  double best_val_accuracy = 0.0;
  int best_val_episode = 0;
};

/// Episodic fine-tuning on base-split episodes with the three-group optimizer
/// (base / permeation x lr_mult_bkp / filter x lr_mult_sad). The returned
/// model state is the best-validation snapshot.
FinetuneResult finetune(Model& model, const Dataset& ds, const TrainConfig& cfg,
                        const std::function<void(const FinetuneRecord&)>& on_episode = {});

}  // namespace bikop
