#include "bikop/training.hpp"

#include <cmath>

namespace bikop {

void TrainConfig::validate() const {
  if (pretrain_epochs < 0 || finetune_episodes < 0) {
    throw ConfigError("train: epoch/episode counts must be >= 0");
  }
  if (pretrain_batch < 1) throw ConfigError("train: pretrain_batch must be >= 1");
  if (!(base_lr > 0.0) || !(pretrain_lr > 0.0)) {
    throw ConfigError("train: learning rates must be positive");
  }
  if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
  if (lr_mult_bkp <= 0.0 || lr_mult_sad <= 0.0) {
    throw ConfigError("train: learning-rate multipliers must be positive");
  }
  if (n_way < 1 || k_shot < 1 || n_query < 1) {
    throw ConfigError("train: n_way, k_shot, n_query must be positive");
  }
  if (val_every < 1 || val_episodes < 0) {
    throw ConfigError("train: val_every must be >= 1 and val_episodes >= 0");
  }
}

AdamW::AdamW(std::vector<std::pair<Param*, ParamGroup>> params, double base_lr,
             double weight_decay, double lr_mult_bkp, double lr_mult_sad)
    : base_lr_(base_lr), weight_decay_(weight_decay), mult_bkp_(lr_mult_bkp),
      mult_sad_(lr_mult_sad) {
  for (auto& [p, g] : params) {
    if (!p->trainable) {
      throw std::invalid_argument("AdamW: frozen parameter '" + p->name +
                                  "' must not enter the update set");
    }
    slots_.push_back({p, g, Mat::Zero(p->value.rows(), p->value.cols()),
                      Mat::Zero(p->value.rows(), p->value.cols())});
  }
}

double AdamW::lr_of(const Param& p) const {
  for (const auto& s : slots_) {
    if (s.param == &p) {
      double mult = s.group == ParamGroup::Bkp ? mult_bkp_
                    : s.group == ParamGroup::Sad ? mult_sad_
                                                 : 1.0;
      return base_lr_ * mult;
    }
  }
  throw std::invalid_argument("AdamW::lr_of: parameter not in optimizer");
}

void AdamW::step() {
  step_count_++;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (auto& s : slots_) {
    double mult = s.group == ParamGroup::Bkp ? mult_bkp_
                  : s.group == ParamGroup::Sad ? mult_sad_
                                               : 1.0;
    double lr = base_lr_ * mult;
    const Mat& g = s.param->grad;
    s.m = beta1_ * s.m + (1.0 - beta1_) * g;
    s.v = beta2_ * s.v + (1.0 - beta2_) * g.cwiseProduct(g);
    Mat mhat = s.m / bc1;
    Mat vhat = s.v / bc2;
    // decoupled decay: direct shrinkage, independent of the gradient
    s.param->value *= (1.0 - lr * weight_decay_);
    s.param->value.array() -= lr * mhat.array() / (vhat.array().sqrt() + eps_);
  }
}

PretrainResult pretrain(Model& model, const Dataset& ds, const TrainConfig& cfg,
                        const std::function<void(int, const EpochStats&)>& on_epoch) {
  cfg.validate();
  const auto& base_classes = ds.split_classes(Split::Base);
  if (base_classes.empty()) throw ConfigError("pretrain: base split is empty");

  // image rows and base-class-local labels
  std::vector<int> rows;
  std::vector<int> labels;
  std::map<int, int> class_to_local;
  for (size_t i = 0; i < base_classes.size(); ++i) {
    class_to_local[base_classes[i]] = static_cast<int>(i);
  }
  for (int r = 0; r < ds.n_images(); ++r) {
    auto it = class_to_local.find(ds.image_class[static_cast<size_t>(r)]);
    if (it != class_to_local.end()) {
      rows.push_back(r);
      labels.push_back(it->second);
    }
  }
  const int n_classes = static_cast<int>(base_classes.size());

  // throwaway linear classifier over GAP features
  Rng init_rng(derive_seed(cfg.seed, "pretrain-head"));
  Mat head_w(model.cfg.backbone.c_d, n_classes);
  for (Eigen::Index i = 0; i < head_w.rows(); ++i)
    for (Eigen::Index j = 0; j < head_w.cols(); ++j) head_w(i, j) = 0.02 * init_rng.normal();
  Param classifier_w("pretrain.head.weight", head_w);
  Param classifier_b("pretrain.head.bias", Mat::Zero(1, n_classes));

  std::vector<std::pair<Param*, ParamGroup>> params;
  for (Param* p : model.backbone.params()) params.emplace_back(p, ParamGroup::Base);
  params.emplace_back(&classifier_w, ParamGroup::Base);
  params.emplace_back(&classifier_b, ParamGroup::Base);
  AdamW opt(params, cfg.pretrain_lr, cfg.weight_decay, 1.0, 1.0);

  PretrainResult result;
  Rng shuffle_rng(derive_seed(cfg.seed, "pretrain-shuffle"));
  const int n = static_cast<int>(rows.size());
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    std::vector<int> order = shuffle_rng.sample_indices(n, n);
    double loss_sum = 0.0;
    long correct = 0;
    int batches = 0;
    for (int start = 0; start < n; start += cfg.pretrain_batch) {
      int bs = std::min(cfg.pretrain_batch, n - start);
      std::vector<int> batch_rows(static_cast<size_t>(bs));
      std::vector<int> batch_labels(static_cast<size_t>(bs));
      for (int i = 0; i < bs; ++i) {
        int k = order[static_cast<size_t>(start + i)];
        batch_rows[static_cast<size_t>(i)] = rows[static_cast<size_t>(k)];
        batch_labels[static_cast<size_t>(i)] = labels[static_cast<size_t>(k)];
      }
      Tape t;
      Var feats = model.backbone.encode_query(t, ds, batch_rows);
      Var logits = t.add_rowvec(t.matmul(feats, t.param(classifier_w)),
                                t.param(classifier_b));
      Var loss = t.cross_entropy_rows(logits, batch_labels);
      double lv = t.val(loss)(0, 0);
      if (!std::isfinite(lv)) {
        throw NumericError("pretrain diverged: non-finite loss at epoch " +
                           std::to_string(epoch) + ", batch " + std::to_string(batches));
      }
      model.zero_grads();
      classifier_w.zero_grad();
      classifier_b.zero_grad();
      t.backward(loss);
      opt.step();

      loss_sum += lv * bs;
      const Mat& lm = t.val(logits);
      for (int i = 0; i < bs; ++i) {
        Eigen::Index arg;
        lm.row(i).maxCoeff(&arg);
        if (static_cast<int>(arg) == batch_labels[static_cast<size_t>(i)]) correct++;
      }
      batches++;
    }
    EpochStats stats;
    stats.mean_loss = loss_sum / n;
    stats.accuracy = static_cast<double>(correct) / n;
    result.epochs.push_back(stats);
    if (on_epoch) on_epoch(epoch, stats);
  }
  return result;
}

namespace {

double quick_val_accuracy(Model& model, const Dataset& ds, const TrainConfig& cfg) {
  if (cfg.val_episodes == 0) return 0.0;
  double sum = 0.0;
  for (int i = 0; i < cfg.val_episodes; ++i) {
    Rng ep_rng(derive_seed(cfg.seed, "finetune-val-episode", static_cast<uint64_t>(i)));
    Episode ep = sample_episode(ds, Split::Val, cfg.n_way, cfg.k_shot, cfg.val_n_query,
                                ep_rng);
    Tape t(/*grad_enabled=*/false);
    EpisodeOutput out = forward_episode(t, model, ds, ep, nullptr, Mode::Eval);
    sum += out.accuracy;
  }
  return 100.0 * sum / cfg.val_episodes;
}

}  // namespace

FinetuneResult finetune(Model& model, const Dataset& ds, const TrainConfig& cfg,
                        const std::function<void(const FinetuneRecord&)>& on_episode) {
  cfg.validate();
  AdamW opt(model.trainable_params(), cfg.base_lr, cfg.weight_decay, cfg.lr_mult_bkp,
            cfg.lr_mult_sad);

  FinetuneResult result;
  std::vector<Mat> best_state = model.snapshot_values();
  result.best_val_accuracy = -1.0;

  for (int i = 0; i < cfg.finetune_episodes; ++i) {
    Rng ep_rng(derive_seed(cfg.seed, "finetune-episode", static_cast<uint64_t>(i)));
    Episode ep = sample_episode(ds, Split::Base, cfg.n_way, cfg.k_shot, cfg.n_query, ep_rng);
    Rng gumbel_rng(derive_seed(cfg.seed, "finetune-gumbel", static_cast<uint64_t>(i)));

    Tape t;
    EpisodeOutput out = forward_episode(t, model, ds, ep, &gumbel_rng, Mode::Train);
    if (!std::isfinite(out.loss_total)) {
      throw NumericError("finetune diverged: non-finite loss at episode " + std::to_string(i));
    }
    model.zero_grads();
    t.backward(out.loss_total_var);
    opt.step();

    FinetuneRecord rec{i, out.loss_total, out.loss_cls, out.loss_adv, out.accuracy};
    result.log.push_back(rec);
    if (on_episode) on_episode(rec);

    if ((i + 1) % cfg.val_every == 0 && cfg.val_episodes > 0) {
      double acc = quick_val_accuracy(model, ds, cfg);
      result.val_curve.emplace_back(i + 1, acc);
      if (acc > result.best_val_accuracy) {
        result.best_val_accuracy = acc;
        result.best_val_episode = i + 1;
        best_state = model.snapshot_values();
      }
    }
  }
  if (!result.val_curve.empty()) {
    model.restore_values(best_state);
  }
  if (result.val_curve.empty()) {
    result.best_val_accuracy = 0.0;
  }
  return result;
}

}  // namespace bikop
