#pragma once

#include <optional>
#include <vector>

#include "bikop/model.hpp"
#include "bikop/synth_data.hpp"

namespace bikop {

enum class Mode { Train, Eval };

/// Everything a caller may want back from one episode pass. Tape handles stay
/// valid as long as the tape that produced them does.
struct EpisodeOutput {
  Mat prototypes;             // N x C_d
  Mat relevant_prototypes;    // N x C_d
  Mat irrelevant_prototypes;  // N x C_d
  Mat query_features;         // NQ x C_d
  Mat logits;                 // NQ x N
  double loss_cls = 0.0;
  double loss_adv = 0.0;
  double loss_total = 0.0;
  double accuracy = 0.0;                 // fraction of queries classified correctly
  std::vector<Mat> support_a_t;          // per support image, 1 x M (cross-attention only)
  std::vector<Mat> support_a_z;          // per support image, M x 1

  Var loss_total_var;  // valid for backward on the producing tape (Train mode)
};

/// p_c = mean of the K support features of class c. Labels must each appear
/// exactly K times.
Var compute_prototypes(Tape& t, Var support_features, const std::vector<int>& labels,
                       int n_way, int k_shot);

/// Cosine similarities divided by tau: rows = queries, cols = classes.
Var cosine_logits(Tape& t, Var query_features, Var prototypes, double tau);

/// Mean over queries of -log softmax(logits)[label].
Var loss_cls(Tape& t, Var logits, const std::vector<int>& labels);

/// Mean over queries of +log softmax(logits)[label]; minimizing the total
/// pushes that probability down.
Var loss_adv(Tape& t, Var logits, const std::vector<int>& labels);

Var loss_total(Tape& t, Var cls, Var adv, double gamma);

/// Full pipeline for one episode. Train mode samples the channel filter with
/// the given rng (hard straight-through by default); Eval mode uses the
/// deterministic top-m filter and classifies per cfg.sad.eval_prototype.
EpisodeOutput forward_episode(Tape& t, Model& model, const Dataset& ds, const Episode& ep,
                              Rng* gumbel_rng, Mode mode, bool record_attention = false);

}  // namespace bikop
