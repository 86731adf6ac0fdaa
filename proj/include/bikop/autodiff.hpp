#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bikop/common.hpp"

namespace bikop {

/// A named trainable (or frozen) array. Modules own their parameters; the
/// optimizer and checkpoint code see them through Model::params().
struct Param {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, Mat v, bool t = true)
      : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())),
        trainable(t) {}

  void zero_grad() { grad.setZero(); }
};

/// Lightweight handle into a Tape.
struct Var {
  int id = -1;
};

/// Reverse-mode tape. Ops append nodes in topological order; backward() walks
/// them in reverse. Gradients for Param leaves are accumulated into
/// Param::grad by backward() (frozen params are skipped).
class Tape {
public:
  explicit Tape(bool grad_enabled = true) : grad_(grad_enabled) {}

  bool grad_enabled() const { return grad_; }

  Var input(Mat v);           // constant leaf
  Var param(Param& p);        // leaf backed by a Param

  const Mat& val(Var v) const { return nodes_[v.id].val; }
  const Mat& grad_of(Var v) const { return nodes_[v.id].grad; }

  // --- elementwise / broadcast ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double c);
  Var mul(Var a, Var b);                 // same shape, elementwise
  Var add_rowvec(Var m, Var r);          // r is 1 x C, added to every row
  Var mul_rowvec(Var m, Var r);          // r is 1 x C, multiplied into every row
  Var gelu(Var a);
  Var tanh_act(Var a);

  // --- linear algebra ---
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);           // A * B^T
  Var transpose(Var a);

  // --- reductions / reshaping ---
  Var mean_rows(Var a);                  // n x C -> 1 x C
  Var blocked_mean_rows(Var a, int block, int take);  // (B*block) x C -> B x C, mean of first `take` rows per block
  Var concat_rows(Var a, Var b);
  Var slice_rows(Var a, int start, int n);
  Var gather_rows(Var a, std::vector<int> rows);
  Var sum(Var a);                        // -> 1 x 1

  // --- softmax / norm ---
  Var softmax_rows(Var a);
  Var layernorm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);

  /// Scaled dot-product self-attention over B independent blocks of `block`
  /// rows, with `heads` heads (per-head scale 1/sqrt(dh)). If probs_out is
  /// given, receives per block a (heads*block) x block stack of attention maps.
  Var blocked_mhsa(Var q, Var k, Var v, int heads, int block,
                   std::vector<Mat>* probs_out = nullptr);

  /// cos(a_i, b_j) for all row pairs -> n x m. Throws NumericError on any
  /// zero-norm row.
  Var cosine_rows(Var a, Var b);

  /// mean_i -log softmax(logits_i)[labels_i] -> 1 x 1.
  Var cross_entropy_rows(Var logits, const std::vector<int>& labels);

  /// Channel filter f from m Gumbel-Softmax draws over the logit categories:
  /// O_j = softmax((logits + noise_j)/temp), f_i = max_j O_j^i. Hard mode
  /// emits the union of straight-through one-hot draws; the gradient follows
  /// the soft column maximum in both modes.
  Var gumbel_max_filter(Var logits, const Mat& noise, double temp, bool hard);

  /// Seeds d(root)=1 and runs every recorded closure in reverse order, then
  /// accumulates leaf gradients into their Params. root must be 1 x 1.
  void backward(Var root);

  size_t size() const { return nodes_.size(); }

private:
  struct Node {
    Mat val;
    Mat grad;
    std::function<void(Tape&)> back;  // empty for leaves / no-grad tapes
  };

  Var push(Mat v, std::function<void(Tape&)> back = nullptr);
  Mat& g(int id);  // grad of node, allocated on demand

  std::vector<Node> nodes_;
  std::vector<std::pair<Param*, int>> param_leaves_;
  bool grad_;
};

}  // namespace bikop
