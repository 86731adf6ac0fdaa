#include "bikop/autodiff.hpp"

#include <cmath>

namespace bikop {

namespace {

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
}

Mat softmax_rows_value(const Mat& x) {
  Mat p(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double m = x.row(i).maxCoeff();
    Eigen::RowVectorXd e = (x.row(i).array() - m).exp().matrix();
    p.row(i) = e / e.sum();
  }
  return p;
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

Var Tape::push(Mat v, std::function<void(Tape&)> back) {
  Node n;
  n.val = std::move(v);
  if (grad_) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Mat& Tape::g(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
  return n.grad;
}

Var Tape::input(Mat v) { return push(std::move(v)); }

Var Tape::param(Param& p) {
  Var v = push(p.value);
  if (grad_) param_leaves_.emplace_back(&p, v.id);
  return v;
}

Var Tape::add(Var a, Var b) {
  check_same_shape(val(a), val(b), "add");
  Mat out = val(a) + val(b);
  return push(std::move(out), [a, b, id = static_cast<int>(nodes_.size())](Tape& t) {
    t.g(a.id) += t.nodes_[id].grad;
    t.g(b.id) += t.nodes_[id].grad;
  });
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(val(a), val(b), "sub");
  Mat out = val(a) - val(b);
  return push(std::move(out), [a, b, id = static_cast<int>(nodes_.size())](Tape& t) {
    t.g(a.id) += t.nodes_[id].grad;
    t.g(b.id) -= t.nodes_[id].grad;
  });
}

Var Tape::scale(Var a, double c) {
  Mat out = val(a) * c;
  return push(std::move(out), [a, c, id = static_cast<int>(nodes_.size())](Tape& t) {
    t.g(a.id) += c * t.nodes_[id].grad;
  });
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(val(a), val(b), "mul");
  Mat out = val(a).cwiseProduct(val(b));
  return push(std::move(out), [a, b, id = static_cast<int>(nodes_.size())](Tape& t) {
    const Mat& gr = t.nodes_[id].grad;
    t.g(a.id) += gr.cwiseProduct(t.val(b));
    t.g(b.id) += gr.cwiseProduct(t.val(a));
  });
}

Var Tape::add_rowvec(Var m, Var r) {
  if (val(r).rows() != 1 || val(r).cols() != val(m).cols()) {
    throw std::invalid_argument("add_rowvec: r must be 1 x cols(m)");
  }
  Mat out = val(m).rowwise() + val(r).row(0);
  return push(std::move(out), [m, r, id = static_cast<int>(nodes_.size())](Tape& t) {
    const Mat& gr = t.nodes_[id].grad;
    t.g(m.id) += gr;
    t.g(r.id).row(0) += gr.colwise().sum();
  });
}

Var Tape::mul_rowvec(Var m, Var r) {
  if (val(r).rows() != 1 || val(r).cols() != val(m).cols()) {
    throw std::invalid_argument("mul_rowvec: r must be 1 x cols(m)");
  }
  Mat out = val(m).array().rowwise() * val(r).row(0).array();
  return push(std::move(out), [m, r, id = static_cast<int>(nodes_.size())](Tape& t) {
    const Mat& gr = t.nodes_[id].grad;
    t.g(m.id).array() += gr.array().rowwise() * t.val(r).row(0).array();
    t.g(r.id).row(0) += gr.cwiseProduct(t.val(m)).colwise().sum();
  });
}

Var Tape::gelu(Var a) {
  const Mat& x = val(a);
  Mat out = x.unaryExpr([](double v) { return v * 0.5 * (1.0 + std::erf(v * kInvSqrt2)); });
  return push(std::move(out), [a, id = static_cast<int>(nodes_.size())](Tape& t) {
    const Mat& x = t.val(a);
    const Mat& gr = t.nodes_[id].grad;
    Mat d = x.unaryExpr([](double v) {
      double phi = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      return phi + v * pdf;
    });
    t.g(a.id) += gr.cwiseProduct(d);
  });
}

Var Tape::tanh_act(Var a) {
  Mat out = val(a).array().tanh();
  return push(std::move(out), [a, id = static_cast<int>(nodes_.size())](Tape& t) {
    const Mat& y = t.nodes_[id].val;
    t.g(a.id).array() += t.nodes_[id].grad.array() * (1.0 - y.array().square());
  });
}

Var Tape::matmul(Var a, Var b) {
  if (val(a).cols() != val(b).rows()) {
    throw std::invalid_argument("matmul: inner dimension mismatch");
  }
  Mat out = val(a) * val(b);
  return push(std::move(out), [a, b, id = static_cast<int>(nodes_.size())](Tape& t) {
    const Mat& gr = t.nodes_[id].grad;
    t.g(a.id).noalias() += gr * t.val(b).transpose();
    t.g(b.id).noalias() += t.val(a).transpose() * gr;
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  if (val(a).cols() != val(b).cols()) {
    throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  }
  Mat out = val(a) * val(b).transpose();
  return push(std::move(out), [a, b, id = static_cast<int>(nodes_.size())](Tape& t) {
    const Mat& gr = t.nodes_[id].grad;
    t.g(a.id).noalias() += gr * t.val(b);
    t.g(b.id).noalias() += gr.transpose() * t.val(a);
  });
}

Var Tape::transpose(Var a) {
  Mat out = val(a).transpose();
  return push(std::move(out), [a, id = static_cast<int>(nodes_.size())](Tape& t) {
    t.g(a.id) += t.nodes_[id].grad.transpose();
  });
}

Var Tape::mean_rows(Var a) {
  const Mat& x = val(a);
  Mat out = x.colwise().mean();
  return push(std::move(out), [a, id = static_cast<int>(nodes_.size())](Tape& t) {
    const Mat& gr = t.nodes_[id].grad;
    Eigen::RowVectorXd d = gr.row(0) / static_cast<double>(t.val(a).rows());
    t.g(a.id).rowwise() += d;
  });
}

Var Tape::blocked_mean_rows(Var a, int block, int take) {
  const Mat& x = val(a);
  if (block <= 0 || x.rows() % block != 0) {
    throw std::invalid_argument("blocked_mean_rows: rows not divisible by block");
  }
  if (take <= 0 || take > block) {
    throw std::invalid_argument("blocked_mean_rows: take out of range");
  }
  int nb = static_cast<int>(x.rows()) / block;
  Mat out(nb, x.cols());
  for (int b = 0; b < nb; ++b) {
    out.row(b) = x.middleRows(b * block, take).colwise().mean();
  }
  return push(std::move(out), [a, block, take, id = static_cast<int>(nodes_.size())](Tape& t) {
    const Mat& gr = t.nodes_[id].grad;
    Mat& ga = t.g(a.id);
    for (Eigen::Index b = 0; b < gr.rows(); ++b) {
      Eigen::RowVectorXd d = gr.row(b) / static_cast<double>(take);
      ga.middleRows(b * block, take).rowwise() += d;
    }
  });
}

Var Tape::concat_rows(Var a, Var b) {
  if (val(a).cols() != val(b).cols()) {
    throw std::invalid_argument("concat_rows: column mismatch");
  }
  Mat out(val(a).rows() + val(b).rows(), val(a).cols());
  out.topRows(val(a).rows()) = val(a);
  out.bottomRows(val(b).rows()) = val(b);
  return push(std::move(out), [a, b, id = static_cast<int>(nodes_.size())](Tape& t) {
    const Mat& gr = t.nodes_[id].grad;
    Eigen::Index na = t.val(a).rows();
    t.g(a.id) += gr.topRows(na);
    t.g(b.id) += gr.bottomRows(gr.rows() - na);
  });
}

Var Tape::slice_rows(Var a, int start, int n) {
  if (start < 0 || n < 0 || start + n > val(a).rows()) {
    throw std::invalid_argument("slice_rows: out of range");
  }
  Mat out = val(a).middleRows(start, n);
  return push(std::move(out), [a, start, n, id = static_cast<int>(nodes_.size())](Tape& t) {
    t.g(a.id).middleRows(start, n) += t.nodes_[id].grad;
  });
}

Var Tape::gather_rows(Var a, std::vector<int> rows) {
  const Mat& x = val(a);
  Mat out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= x.rows()) {
      throw std::invalid_argument("gather_rows: index out of range");
    }
    out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
  }
  return push(std::move(out),
              [a, rows = std::move(rows), id = static_cast<int>(nodes_.size())](Tape& t) {
                const Mat& gr = t.nodes_[id].grad;
                Mat& ga = t.g(a.id);
                for (size_t i = 0; i < rows.size(); ++i) {
                  ga.row(rows[i]) += gr.row(static_cast<Eigen::Index>(i));
                }
              });
}

Var Tape::sum(Var a) {
  Mat out(1, 1);
  out(0, 0) = val(a).sum();
  return push(std::move(out), [a, id = static_cast<int>(nodes_.size())](Tape& t) {
    t.g(a.id).array() += t.nodes_[id].grad(0, 0);
  });
}

Var Tape::softmax_rows(Var a) {
  Mat p = softmax_rows_value(val(a));
  return push(std::move(p), [a, id = static_cast<int>(nodes_.size())](Tape& t) {
    const Mat& p = t.nodes_[id].val;
    const Mat& gr = t.nodes_[id].grad;
    Mat& ga = t.g(a.id);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      double dot = gr.row(i).dot(p.row(i));
      ga.row(i).array() += p.row(i).array() * (gr.row(i).array() - dot);
    }
  });
}

Var Tape::layernorm_rows(Var x, Var gamma, Var beta, double eps) {
  const Mat& xv = val(x);
  Eigen::Index c = xv.cols();
  if (val(gamma).rows() != 1 || val(gamma).cols() != c || val(beta).rows() != 1 ||
      val(beta).cols() != c) {
    throw std::invalid_argument("layernorm_rows: gamma/beta must be 1 x cols(x)");
  }
  Mat xhat(xv.rows(), c);
  std::vector<double> inv_std(static_cast<size_t>(xv.rows()));
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    double mean = xv.row(i).mean();
    double var = (xv.row(i).array() - mean).square().mean();
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = is;
    xhat.row(i) = (xv.row(i).array() - mean) * is;
  }
  Mat out = (xhat.array().rowwise() * val(gamma).row(0).array()).rowwise() +
            val(beta).row(0).array();
  return push(std::move(out), [x, gamma, beta, xhat = std::move(xhat),
                               inv_std = std::move(inv_std),
                               id = static_cast<int>(nodes_.size())](Tape& t) {
    const Mat& gr = t.nodes_[id].grad;
    const Mat& gm = t.val(gamma);
    Mat& gx = t.g(x.id);
    t.g(beta.id).row(0) += gr.colwise().sum();
    t.g(gamma.id).row(0) += gr.cwiseProduct(xhat).colwise().sum();
    for (Eigen::Index i = 0; i < gr.rows(); ++i) {
      Eigen::ArrayXXd dxhat = gr.row(i).array() * gm.row(0).array();
      double m1 = dxhat.mean();
      double m2 = (dxhat * xhat.row(i).array()).mean();
      gx.row(i).array() +=
          inv_std[static_cast<size_t>(i)] * (dxhat - m1 - xhat.row(i).array() * m2);
    }
  });
}

Var Tape::blocked_mhsa(Var q, Var k, Var v, int heads, int block, std::vector<Mat>* probs_out) {
  const Mat& qv = val(q);
  const Mat& kv = val(k);
  const Mat& vv = val(v);
  check_same_shape(qv, kv, "blocked_mhsa(q,k)");
  check_same_shape(qv, vv, "blocked_mhsa(q,v)");
  if (block <= 0 || qv.rows() % block != 0) {
    throw std::invalid_argument("blocked_mhsa: rows not divisible by block");
  }
  if (heads <= 0 || qv.cols() % heads != 0) {
    throw std::invalid_argument("blocked_mhsa: cols not divisible by heads");
  }
  int nb = static_cast<int>(qv.rows()) / block;
  int dh = static_cast<int>(qv.cols()) / heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat out(qv.rows(), qv.cols());
  // probs[b] stacks the per-head attention maps: rows [h*block, (h+1)*block).
  std::vector<Mat> probs(static_cast<size_t>(nb));
  for (int b = 0; b < nb; ++b) {
    probs[static_cast<size_t>(b)].resize(heads * block, block);
    for (int h = 0; h < heads; ++h) {
      auto qb = qv.block(b * block, h * dh, block, dh);
      auto kb = kv.block(b * block, h * dh, block, dh);
      auto vb = vv.block(b * block, h * dh, block, dh);
      Mat s = (qb * kb.transpose()) * scale;
      Mat p = softmax_rows_value(s);
      out.block(b * block, h * dh, block, dh).noalias() = p * vb;
      probs[static_cast<size_t>(b)].middleRows(h * block, block) = p;
    }
  }
  if (probs_out) *probs_out = probs;

  return push(std::move(out), [q, k, v, heads, block, dh, scale, nb, probs = std::move(probs),
                               id = static_cast<int>(nodes_.size())](Tape& t) {
    const Mat& gr = t.nodes_[id].grad;
    const Mat& qv = t.val(q);
    const Mat& kv = t.val(k);
    const Mat& vv = t.val(v);
    Mat& gq = t.g(q.id);
    Mat& gk = t.g(k.id);
    Mat& gv = t.g(v.id);
    for (int b = 0; b < nb; ++b) {
      for (int h = 0; h < heads; ++h) {
        auto qb = qv.block(b * block, h * dh, block, dh);
        auto kb = kv.block(b * block, h * dh, block, dh);
        auto vb = vv.block(b * block, h * dh, block, dh);
        auto go = gr.block(b * block, h * dh, block, dh);
        const auto p = probs[static_cast<size_t>(b)].middleRows(h * block, block);
        Mat dp = go * vb.transpose();
        Mat ds(block, block);
        for (int i = 0; i < block; ++i) {
          double dot = dp.row(i).dot(p.row(i));
          ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
        }
        gv.block(b * block, h * dh, block, dh).noalias() += p.transpose() * go;
        gq.block(b * block, h * dh, block, dh).noalias() += (ds * kb) * scale;
        gk.block(b * block, h * dh, block, dh).noalias() += (ds.transpose() * qb) * scale;
      }
    }
  });
}

Var Tape::cosine_rows(Var a, Var b) {
  const Mat& av = val(a);
  const Mat& bv = val(b);
  if (av.cols() != bv.cols()) throw std::invalid_argument("cosine_rows: column mismatch");
  Vec na(av.rows()), nb(bv.rows());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    na(i) = av.row(i).norm();
    if (!(na(i) > 0.0)) {
      throw NumericError("cosine_rows: zero-norm left vector at row " + std::to_string(i));
    }
  }
  for (Eigen::Index j = 0; j < bv.rows(); ++j) {
    nb(j) = bv.row(j).norm();
    if (!(nb(j) > 0.0)) {
      throw NumericError("cosine_rows: zero-norm right vector at row " + std::to_string(j));
    }
  }
  Mat out = av * bv.transpose();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) /= na(i) * nb(j);
  }
  return push(std::move(out), [a, b, na = std::move(na), nb = std::move(nb),
                               id = static_cast<int>(nodes_.size())](Tape& t) {
    const Mat& c = t.nodes_[id].val;
    const Mat& gr = t.nodes_[id].grad;
    const Mat& av = t.val(a);
    const Mat& bv = t.val(b);
    Mat& ga = t.g(a.id);
    Mat& gb = t.g(b.id);
    for (Eigen::Index i = 0; i < av.rows(); ++i) {
      for (Eigen::Index j = 0; j < bv.rows(); ++j) {
        double gij = gr(i, j);
        if (gij == 0.0) continue;
        double inv = 1.0 / (na(i) * nb(j));
        ga.row(i) += gij * (bv.row(j) * inv - c(i, j) / (na(i) * na(i)) * av.row(i));
        gb.row(j) += gij * (av.row(i) * inv - c(i, j) / (nb(j) * nb(j)) * bv.row(j));
      }
    }
  });
}

Var Tape::cross_entropy_rows(Var logits, const std::vector<int>& labels) {
  const Mat& lv = val(logits);
  if (static_cast<Eigen::Index>(labels.size()) != lv.rows()) {
    throw std::invalid_argument("cross_entropy_rows: one label per row required");
  }
  Mat p = softmax_rows_value(lv);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < lv.rows(); ++i) {
    int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= lv.cols()) {
      throw std::invalid_argument("cross_entropy_rows: label out of range");
    }
    // log softmax computed stably from the shifted logits
    double m = lv.row(i).maxCoeff();
    double lse = std::log((lv.row(i).array() - m).exp().sum()) + m;
    loss -= lv(i, y) - lse;
  }
  Mat out(1, 1);
  out(0, 0) = loss / static_cast<double>(lv.rows());
  return push(std::move(out), [logits, labels, p = std::move(p),
                               id = static_cast<int>(nodes_.size())](Tape& t) {
    double gr = t.nodes_[id].grad(0, 0);
    double inv = gr / static_cast<double>(p.rows());
    Mat& gl = t.g(logits.id);
    gl += p * inv;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      gl(i, labels[static_cast<size_t>(i)]) -= inv;
    }
  });
}

Var Tape::gumbel_max_filter(Var logits, const Mat& noise, double temp, bool hard) {
  const Mat& lv = val(logits);
  if (lv.rows() != 1) throw std::invalid_argument("gumbel_max_filter: logits must be 1 x C");
  if (noise.cols() != lv.cols()) {
    throw std::invalid_argument("gumbel_max_filter: noise must be m x C");
  }
  if (!lv.allFinite()) throw NumericError("gumbel_max_filter: non-finite logits");
  if (!(temp > 0.0)) throw std::invalid_argument("gumbel_max_filter: temp must be positive");
  Eigen::Index m = noise.rows();
  Eigen::Index c = lv.cols();

  Mat soft(m, c);
  for (Eigen::Index j = 0; j < m; ++j) {
    Mat row = (lv.row(0) + noise.row(j)) / temp;
    soft.row(j) = softmax_rows_value(row);
  }
  // Column-wise max of the soft draws; ties resolved to the lowest draw index.
  std::vector<int> amax(static_cast<size_t>(c));
  Mat fsoft(1, c);
  for (Eigen::Index i = 0; i < c; ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < m; ++j) {
      if (soft(j, i) > soft(best, i)) best = j;
    }
    amax[static_cast<size_t>(i)] = static_cast<int>(best);
    fsoft(0, i) = soft(best, i);
  }
  Mat f;
  if (hard) {
    f = Mat::Zero(1, c);
    for (Eigen::Index j = 0; j < m; ++j) {
      Eigen::Index arg;
      soft.row(j).maxCoeff(&arg);
      f(0, arg) = 1.0;
    }
  } else {
    f = fsoft;
  }
  return push(std::move(f), [logits, soft = std::move(soft), amax = std::move(amax), temp,
                             id = static_cast<int>(nodes_.size())](Tape& t) {
    const Mat& gr = t.nodes_[id].grad;
    Mat& gl = t.g(logits.id);
    // Route df through the column-max draw, then through that draw's softmax.
    Mat gs = Mat::Zero(soft.rows(), soft.cols());
    for (Eigen::Index i = 0; i < gr.cols(); ++i) {
      gs(amax[static_cast<size_t>(i)], i) = gr(0, i);
    }
    for (Eigen::Index j = 0; j < soft.rows(); ++j) {
      double dot = gs.row(j).dot(soft.row(j));
      gl.row(0).array() +=
          (soft.row(j).array() * (gs.row(j).array() - dot)) / temp;
    }
  });
}

void Tape::backward(Var root) {
  if (!grad_) throw std::logic_error("Tape::backward on a no-grad tape");
  if (val(root).rows() != 1 || val(root).cols() != 1) {
    throw std::invalid_argument("Tape::backward: root must be a scalar");
  }
  g(root.id)(0, 0) = 1.0;
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.grad.size() != 0 && n.back) n.back(*this);
  }
  for (auto& [p, id] : param_leaves_) {
    if (p->trainable && nodes_[static_cast<size_t>(id)].grad.size() != 0) {
      p->grad += nodes_[static_cast<size_t>(id)].grad;
    }
  }
}

}  // namespace bikop
