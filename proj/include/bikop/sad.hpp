#pragma once

#include <string>
#include <vector>

#include "bikop/autodiff.hpp"
#include "bikop/rng.hpp"

namespace bikop {

enum class FilterMode { Hard, Soft, Eval };
enum class EvalPrototype { Relevant, Full };

EvalPrototype eval_prototype_from_name(const std::string& s);
const char* eval_prototype_name(EvalPrototype p);

struct SadConfig {
  bool enabled = true;
  int m = 0;                 // sample count; 0 means C_d / 2
  double gumbel_temp = 1.0;
  int mlp_depth = 2;         // layers in the filter net D
  FilterMode train_mode = FilterMode::Hard;
  EvalPrototype eval_prototype = EvalPrototype::Relevant;
  int c_d = 64;

  int effective_m() const { return m > 0 ? m : c_d / 2; }
  void validate() const;
};

struct Disentangled {
  Var relevant;    // p ⊙ f
  Var irrelevant;  // p ⊙ (1 - f)
  Mat filter;      // the f that was applied, 1 x C_d
};

/// Prototype-conditioned channel filter. D maps a prototype to C_d logits;
/// training draws m Gumbel-Softmax samples and keeps the element-wise max,
/// evaluation takes a deterministic top-m mask of the logits.
struct FilterNet {
  SadConfig cfg;
  std::vector<Param> weights;
  std::vector<Param> biases;

  void init(const SadConfig& c, Rng& rng);

  Var logits(Tape& t, Var p);
  Mat logits_plain(const Mat& p) const;

  /// m x C_d standard Gumbel noise from the given stream.
  Mat sample_noise(Rng& rng) const;

  /// Stochastic filter from pre-drawn noise (kept explicit so gradient checks
  /// can fix the realization). mode must be Hard or Soft.
  Var sample_filter(Tape& t, Var p, const Mat& noise, FilterMode mode);
  Var sample_filter(Tape& t, Var p, Rng& rng, FilterMode mode);

  /// Deterministic top-min(m, C_d) mask of D(p); ties break to the lowest
  /// channel index.
  Mat eval_filter(const Mat& p) const;

  std::vector<Param*> params();
};

/// p̂ = p ⊙ f, p̌ = p ⊙ (1 - f). p and f are 1 x C_d.
Disentangled disentangle(Tape& t, Var p, Var f);

}  // namespace bikop
