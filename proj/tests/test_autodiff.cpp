#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bikop/autodiff.hpp"
#include "bikop/rng.hpp"
#include "fd_check.hpp"

using namespace bikop;
using bikop::testing::check_param_grads;

namespace {

Mat random_mat(Rng& rng, int r, int c, double scale = 1.0) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

// Builds a scalar probe sum(w .* f(inputs)) so every output entry gets a
// distinct gradient signal.
double probe(const Mat& w, const Mat& y) { return (w.array() * y.array()).sum(); }

}  // namespace

TEST_CASE("elementwise and broadcast ops match finite differences") {
  Rng rng(101);
  Param a("a", random_mat(rng, 3, 4));
  Param b("b", random_mat(rng, 3, 4));
  Param r("r", random_mat(rng, 1, 4));
  Mat w = random_mat(rng, 3, 4);

  auto build = [&](Tape& t) {
    Var va = t.param(a);
    Var vb = t.param(b);
    Var vr = t.param(r);
    Var y = t.add(t.mul(t.gelu(va), vb), t.mul_rowvec(t.tanh_act(va), vr));
    y = t.add_rowvec(t.sub(y, t.scale(vb, 0.3)), vr);
    return t.sum(t.mul(y, t.input(w)));
  };

  Tape t;
  Var loss = build(t);
  t.backward(loss);
  auto loss_fn = [&]() {
    Tape t2;
    return t2.val(build(t2))(0, 0);
  };
  auto rep = check_param_grads({&a, &b, &r}, loss_fn);
  CHECK_MESSAGE(rep.max_rel_err < 1e-6, rep.worst);
}

TEST_CASE("matmul, transpose, reductions match finite differences") {
  Rng rng(202);
  Param a("a", random_mat(rng, 3, 5));
  Param b("b", random_mat(rng, 5, 4));
  Param c("c", random_mat(rng, 2, 4));
  Mat w1 = random_mat(rng, 3, 4);
  Mat w2 = random_mat(rng, 1, 5);

  auto build = [&](Tape& t) {
    Var va = t.param(a);
    Var vb = t.param(b);
    Var vc = t.param(c);
    Var m = t.matmul(va, vb);                      // 3x4
    Var nt = t.matmul_nt(m, vc);                   // 3x2
    Var cat = t.concat_rows(m, vc);                // 5x4
    Var s1 = t.sum(t.mul(m, t.input(w1)));
    Var s2 = t.sum(t.mul(t.mean_rows(t.transpose(nt)), t.input(random_mat(rng, 1, 3))));
    // fixed probe for slice/gather
    Var sl = t.slice_rows(cat, 1, 3);
    Var ga = t.gather_rows(cat, {0, 4, 2, 2});
    Var s3 = t.sum(sl);
    Var s4 = t.sum(ga);
    Var s5 = t.sum(t.mul(t.mean_rows(va), t.input(w2)));
    return t.add(t.add(s1, s2), t.add(t.add(s3, s4), s5));
  };

  Rng rng_probe(7);
  (void)rng_probe;
  Tape t;
  // rebuild both times with identical constants: regenerate rng-dependent inputs
  // deterministically by recreating them outside the lambda
  Mat w3 = random_mat(rng, 1, 3);
  auto build_fixed = [&](Tape& t) {
    Var va = t.param(a);
    Var vb = t.param(b);
    Var vc = t.param(c);
    Var m = t.matmul(va, vb);
    Var nt = t.matmul_nt(m, vc);
    Var cat = t.concat_rows(m, vc);
    Var s1 = t.sum(t.mul(m, t.input(w1)));
    Var s2 = t.sum(t.mul(t.mean_rows(t.transpose(nt)), t.input(w3)));
    Var sl = t.slice_rows(cat, 1, 3);
    Var ga = t.gather_rows(cat, {0, 4, 2, 2});
    Var s3 = t.sum(sl);
    Var s4 = t.sum(ga);
    Var s5 = t.sum(t.mul(t.mean_rows(va), t.input(w2)));
    return t.add(t.add(s1, s2), t.add(t.add(s3, s4), s5));
  };
  (void)build;
  Var loss = build_fixed(t);
  t.backward(loss);
  auto loss_fn = [&]() {
    Tape t2;
    return t2.val(build_fixed(t2))(0, 0);
  };
  auto rep = check_param_grads({&a, &b, &c}, loss_fn);
  CHECK_MESSAGE(rep.max_rel_err < 1e-6, rep.worst);
}

TEST_CASE("softmax and layernorm match finite differences") {
  Rng rng(303);
  Param x("x", random_mat(rng, 4, 6));
  Param gamma("gamma", Mat::Ones(1, 6) + 0.1 * random_mat(rng, 1, 6));
  Param beta("beta", 0.1 * random_mat(rng, 1, 6));
  Mat w = random_mat(rng, 4, 6);

  auto build = [&](Tape& t) {
    Var vx = t.param(x);
    Var y = t.layernorm_rows(vx, t.param(gamma), t.param(beta));
    Var p = t.softmax_rows(y);
    return t.sum(t.mul(p, t.input(w)));
  };
  Tape t;
  t.backward(build(t));
  auto loss_fn = [&]() {
    Tape t2;
    return t2.val(build(t2))(0, 0);
  };
  auto rep = check_param_grads({&x, &gamma, &beta}, loss_fn);
  CHECK_MESSAGE(rep.max_rel_err < 1e-6, rep.worst);
}

TEST_CASE("softmax rows are stochastic") {
  Rng rng(17);
  Tape t;
  Var p = t.softmax_rows(t.input(random_mat(rng, 8, 5, 3.0)));
  for (int i = 0; i < 8; ++i) {
    CHECK(t.val(p).row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(t.val(p).row(i).minCoeff() >= 0.0);
  }
}

TEST_CASE("blocked multi-head attention matches finite differences and a plain reference") {
  Rng rng(404);
  const int block = 3, heads = 2, c = 4, nb = 2;
  Param q("q", random_mat(rng, nb * block, c));
  Param k("k", random_mat(rng, nb * block, c));
  Param v("v", random_mat(rng, nb * block, c));
  Mat w = random_mat(rng, nb * block, c);

  auto build = [&](Tape& t) {
    Var o = t.blocked_mhsa(t.param(q), t.param(k), t.param(v), heads, block);
    return t.sum(t.mul(o, t.input(w)));
  };
  Tape t;
  std::vector<Mat> probs;
  Var o = t.blocked_mhsa(t.param(q), t.param(k), t.param(v), heads, block, &probs);
  Var loss = t.sum(t.mul(o, t.input(w)));
  t.backward(loss);

  // plain straight-line reference of the forward pass
  int dh = c / heads;
  Mat ref(nb * block, c);
  for (int b = 0; b < nb; ++b) {
    for (int h = 0; h < heads; ++h) {
      Mat qb = q.value.block(b * block, h * dh, block, dh);
      Mat kb = k.value.block(b * block, h * dh, block, dh);
      Mat vb = v.value.block(b * block, h * dh, block, dh);
      Mat s = qb * kb.transpose() / std::sqrt(double(dh));
      for (int i = 0; i < block; ++i) {
        double mx = s.row(i).maxCoeff();
        Eigen::RowVectorXd e = (s.row(i).array() - mx).exp();
        s.row(i) = e / e.sum();
      }
      ref.block(b * block, h * dh, block, dh) = s * vb;
    }
  }
  CHECK((t.val(o) - ref).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE(probs.size() == size_t(nb));
  for (auto& pm : probs) {
    for (int r = 0; r < pm.rows(); ++r) CHECK(pm.row(r).sum() == doctest::Approx(1.0));
  }

  auto loss_fn = [&]() {
    Tape t2;
    return t2.val(build(t2))(0, 0);
  };
  auto rep = check_param_grads({&q, &k, &v}, loss_fn);
  CHECK_MESSAGE(rep.max_rel_err < 1e-6, rep.worst);
}

TEST_CASE("cosine_rows matches finite differences and rejects zero norms") {
  Rng rng(505);
  Param a("a", random_mat(rng, 3, 5));
  Param b("b", random_mat(rng, 4, 5));
  Mat w = random_mat(rng, 3, 4);
  auto build = [&](Tape& t) {
    return t.sum(t.mul(t.cosine_rows(t.param(a), t.param(b)), t.input(w)));
  };
  Tape t;
  t.backward(build(t));
  auto loss_fn = [&]() {
    Tape t2;
    return t2.val(build(t2))(0, 0);
  };
  auto rep = check_param_grads({&a, &b}, loss_fn);
  CHECK_MESSAGE(rep.max_rel_err < 1e-6, rep.worst);

  Tape t2;
  Var za = t2.input(Mat::Zero(1, 5));
  Var vb = t2.input(random_mat(rng, 2, 5));
  CHECK_THROWS_AS((void)t2.cosine_rows(za, vb), NumericError);
}

TEST_CASE("cross_entropy_rows matches finite differences and an independent log-sum-exp oracle") {
  Rng rng(606);
  Param logits("logits", random_mat(rng, 6, 4, 2.0));
  std::vector<int> labels = {0, 3, 1, 1, 2, 0};

  Tape t;
  Var l = t.cross_entropy_rows(t.param(logits), labels);
  t.backward(l);

  // independent oracle: mean -[z_y - log sum exp(z)]
  double want = 0.0;
  for (int i = 0; i < 6; ++i) {
    double lse = 0.0;
    for (int j = 0; j < 4; ++j) lse += std::exp(logits.value(i, j));
    want += -(logits.value(i, labels[size_t(i)]) - std::log(lse));
  }
  want /= 6.0;
  CHECK(t.val(l)(0, 0) == doctest::Approx(want).epsilon(1e-10));

  auto loss_fn = [&]() {
    Tape t2;
    return t2.val(t2.cross_entropy_rows(t2.param(logits), labels))(0, 0);
  };
  auto rep = check_param_grads({&logits}, loss_fn);
  CHECK_MESSAGE(rep.max_rel_err < 1e-6, rep.worst);
}

TEST_CASE("gumbel_max_filter: soft mode matches finite differences under fixed noise") {
  Rng rng(707);
  const int c = 6, m = 4;
  Param logits("logits", random_mat(rng, 1, c));
  Mat noise(m, c);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < c; ++j) noise(i, j) = rng.gumbel();
  Mat w = random_mat(rng, 1, c);

  auto build = [&](Tape& t) {
    Var f = t.gumbel_max_filter(t.param(logits), noise, 1.0, /*hard=*/false);
    return t.sum(t.mul(f, t.input(w)));
  };
  Tape t;
  t.backward(build(t));
  auto loss_fn = [&]() {
    Tape t2;
    return t2.val(build(t2))(0, 0);
  };
  auto rep = check_param_grads({&logits}, loss_fn, 1e-6);
  CHECK_MESSAGE(rep.max_rel_err < 1e-4, rep.worst);
}

TEST_CASE("gumbel_max_filter: hard mode emits a binary union of one-hots") {
  Rng rng(808);
  const int c = 8, m = 3;
  Mat logits = random_mat(rng, 1, c);
  Mat noise(m, c);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < c; ++j) noise(i, j) = rng.gumbel();
  Tape t;
  Var f = t.gumbel_max_filter(t.input(logits), noise, 1.0, true);
  const Mat& fv = t.val(f);
  double popcount = 0;
  for (int i = 0; i < c; ++i) {
    CHECK((fv(0, i) == 0.0 || fv(0, i) == 1.0));
    popcount += fv(0, i);
  }
  CHECK(popcount >= 1);
  CHECK(popcount <= m);
}

TEST_CASE("frozen params receive no gradient") {
  Rng rng(909);
  Param w("w", random_mat(rng, 3, 3), /*trainable=*/false);
  Param x("x", random_mat(rng, 2, 3));
  Tape t;
  Var y = t.matmul(t.param(x), t.param(w));
  t.backward(t.sum(y));
  CHECK(w.grad.cwiseAbs().maxCoeff() == 0.0);
  CHECK(x.grad.cwiseAbs().maxCoeff() > 0.0);
}
