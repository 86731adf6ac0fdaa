#include "bikop/sad.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bikop {

namespace {

Mat init_normal(Rng& rng, int rows, int cols, double sd) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = sd * rng.normal();
  return m;
}

}  // namespace

EvalPrototype eval_prototype_from_name(const std::string& s) {
  if (s == "relevant") return EvalPrototype::Relevant;
  if (s == "full") return EvalPrototype::Full;
  throw ConfigError("unknown eval_prototype '" + s + "' (expected relevant or full)");
}

const char* eval_prototype_name(EvalPrototype p) {
  return p == EvalPrototype::Relevant ? "relevant" : "full";
}

void SadConfig::validate() const {
  if (m < 0) throw ConfigError("sad: m must be >= 0 (0 selects c_d/2)");
  if (!(gumbel_temp > 0.0)) throw ConfigError("sad: gumbel_temp must be positive");
  if (mlp_depth < 1 || mlp_depth > 3) throw ConfigError("sad: mlp_depth must be 1, 2 or 3");
  if (c_d <= 0) throw ConfigError("sad: c_d must be positive");
  if (effective_m() < 1) throw ConfigError("sad: effective sample count must be >= 1");
}

void FilterNet::init(const SadConfig& c, Rng& rng) {
  c.validate();
  cfg = c;
  weights.clear();
  biases.clear();
  const int cd = cfg.c_d;
  const int hidden = 2 * cd;
  std::vector<std::pair<int, int>> dims;
  if (cfg.mlp_depth == 1) {
    dims = {{cd, cd}};
  } else if (cfg.mlp_depth == 2) {
    dims = {{cd, hidden}, {hidden, cd}};
  } else {
    dims = {{cd, hidden}, {hidden, hidden}, {hidden, cd}};
  }
  for (size_t i = 0; i < dims.size(); ++i) {
    auto [in, out] = dims[i];
    weights.emplace_back("sad.d.w" + std::to_string(i),
                         init_normal(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in))));
    biases.emplace_back("sad.d.b" + std::to_string(i), Mat::Zero(1, out));
  }
}

Var FilterNet::logits(Tape& t, Var p) {
  Var x = p;
  for (size_t i = 0; i < weights.size(); ++i) {
    x = t.add_rowvec(t.matmul(x, t.param(weights[i])), t.param(biases[i]));
    if (i + 1 < weights.size()) x = t.gelu(x);
  }
  return x;
}

Mat FilterNet::logits_plain(const Mat& p) const {
  Mat x = p;
  for (size_t i = 0; i < weights.size(); ++i) {
    x = (x * weights[i].value).rowwise() + biases[i].value.row(0);
    if (i + 1 < weights.size()) {
      x = x.unaryExpr(
          [](double v) { return v * 0.5 * (1.0 + std::erf(v * 0.7071067811865475)); });
    }
  }
  return x;
}

Mat FilterNet::sample_noise(Rng& rng) const {
  Mat noise(cfg.effective_m(), cfg.c_d);
  for (Eigen::Index i = 0; i < noise.rows(); ++i)
    for (Eigen::Index j = 0; j < noise.cols(); ++j) noise(i, j) = rng.gumbel();
  return noise;
}

Var FilterNet::sample_filter(Tape& t, Var p, const Mat& noise, FilterMode mode) {
  if (mode == FilterMode::Eval) {
    throw std::invalid_argument("sample_filter: eval mode uses eval_filter()");
  }
  Var l = logits(t, p);
  return t.gumbel_max_filter(l, noise, cfg.gumbel_temp, mode == FilterMode::Hard);
}

Var FilterNet::sample_filter(Tape& t, Var p, Rng& rng, FilterMode mode) {
  return sample_filter(t, p, sample_noise(rng), mode);
}

Mat FilterNet::eval_filter(const Mat& p) const {
  Mat l = logits_plain(p);
  const int cd = cfg.c_d;
  int keep = std::min(cfg.effective_m(), cd);
  std::vector<int> order(static_cast<size_t>(cd));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&l](int a, int b) {
    if (l(0, a) != l(0, b)) return l(0, a) > l(0, b);
    return a < b;  // tie-break: lowest channel index wins
  });
  Mat f = Mat::Zero(1, cd);
  for (int i = 0; i < keep; ++i) f(0, order[static_cast<size_t>(i)]) = 1.0;
  return f;
}

std::vector<Param*> FilterNet::params() {
  std::vector<Param*> out;
  for (auto& w : weights) out.push_back(&w);
  for (auto& b : biases) out.push_back(&b);
  return out;
}

Disentangled disentangle(Tape& t, Var p, Var f) {
  const Mat& pv = t.val(p);
  const Mat& fv = t.val(f);
  if (pv.rows() != fv.rows() || pv.cols() != fv.cols()) {
    throw std::invalid_argument("disentangle: prototype and filter shapes differ");
  }
  Disentangled d;
  d.filter = fv;
  d.relevant = t.mul(p, f);
  Var ones = t.input(Mat::Ones(fv.rows(), fv.cols()));
  d.irrelevant = t.mul(p, t.sub(ones, f));
  return d;
}

}  // namespace bikop
