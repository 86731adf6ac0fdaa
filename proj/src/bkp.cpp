#include "bikop/bkp.hpp"

#include <cmath>

namespace bikop {

namespace {

Mat init_normal(Rng& rng, int rows, int cols, double sd) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = sd * rng.normal();
  return m;
}

}  // namespace

Fusion fusion_from_name(const std::string& s) {
  if (s == "cross_attention") return Fusion::CrossAttention;
  if (s == "dot") return Fusion::Dot;
  if (s == "add") return Fusion::Add;
  if (s == "concat") return Fusion::Concat;
  throw ConfigError("unknown fusion kind '" + s +
                    "' (expected cross_attention, dot, add or concat)");
}

const char* fusion_name(Fusion f) {
  switch (f) {
    case Fusion::CrossAttention: return "cross_attention";
    case Fusion::Dot: return "dot";
    case Fusion::Add: return "add";
    case Fusion::Concat: return "concat";
  }
  return "?";
}

Direction direction_from_name(const std::string& s) {
  if (s == "bidirectional") return Direction::Bidirectional;
  if (s == "text_to_vision") return Direction::TextToVision;
  if (s == "vision_to_text") return Direction::VisionToText;
  throw ConfigError("unknown permeation direction '" + s +
                    "' (expected bidirectional, text_to_vision or vision_to_text)");
}

const char* direction_name(Direction d) {
  switch (d) {
    case Direction::Bidirectional: return "bidirectional";
    case Direction::TextToVision: return "text_to_vision";
    case Direction::VisionToText: return "vision_to_text";
  }
  return "?";
}

void BkpConfig::validate() const {
  if (mu < 0.0) throw ConfigError("bkp: mu must be >= 0");
  if (c_d <= 0) throw ConfigError("bkp: c_d must be positive");
}

void Bkp::init(const BkpConfig& c, Rng& rng) {
  c.validate();
  cfg = c;
  const int cd = cfg.c_d;
  const double sd = 0.02;
  wq = Param("bkp.wq", init_normal(rng, cd, cd, sd));
  wk = Param("bkp.wk", init_normal(rng, cd, cd, sd));
  wv = Param("bkp.wv", init_normal(rng, cd, cd, sd));
  x_w1 = Param("bkp.x.w1", init_normal(rng, cd, 2 * cd, sd));
  x_b1 = Param("bkp.x.b1", Mat::Zero(1, 2 * cd));
  x_w2 = Param("bkp.x.w2", init_normal(rng, 2 * cd, cd, sd));
  x_b2 = Param("bkp.x.b2", Mat::Zero(1, cd));
}

Var Bkp::correction_mlp(Tape& t, Var x) {
  Var h = t.gelu(t.add_rowvec(t.matmul(x, t.param(x_w1)), t.param(x_b1)));
  return t.add_rowvec(t.matmul(h, t.param(x_w2)), t.param(x_b2));
}

std::pair<Var, Mat> Bkp::text_to_vision(Tape& t, Var z, Var text) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.c_d));
  Var zq = t.matmul(z, t.param(wq));          // M x C
  Var tk = t.matmul(text, t.param(wk));       // 1 x C
  Var logits = t.scale(t.matmul_nt(zq, tk), scale);  // M x 1
  Var a_z;
  if (cfg.az_softmax_over_patches) {
    // alternative axis: normalize over the M patches instead of the key axis
    a_z = t.transpose(t.softmax_rows(t.transpose(logits)));
  } else {
    a_z = t.softmax_rows(logits);  // softmax over the single key -> all ones
  }
  Var tv = t.matmul(text, t.param(wv));       // 1 x C
  Var mixed = t.matmul(a_z, tv);              // M x C
  Var z_hat = t.add(z, t.scale(correction_mlp(t, mixed), cfg.mu));
  return {z_hat, t.val(a_z)};
}

std::pair<Var, Mat> Bkp::vision_to_text(Tape& t, Var text, Var z) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.c_d));
  Var tq = t.matmul(text, t.param(wq));       // 1 x C
  Var zk = t.matmul(z, t.param(wk));          // M x C
  Var a_t = t.softmax_rows(t.scale(t.matmul_nt(tq, zk), scale));  // 1 x M
  Var zv = t.matmul(z, t.param(wv));          // M x C
  Var mixed = t.matmul(a_t, zv);              // 1 x C
  Var t_hat = t.add(text, t.scale(correction_mlp(t, mixed), cfg.mu));
  return {t_hat, t.val(a_t)};
}

PermeationResult Bkp::permeate(Tape& t, Var z, Var text) {
  PermeationResult out;
  out.z_hat = z;
  out.t_hat = text;
  if (cfg.direction != Direction::VisionToText) {
    auto [z_hat, a_z] = text_to_vision(t, z, text);
    out.z_hat = z_hat;
    out.a_z = a_z;
  }
  if (cfg.direction != Direction::TextToVision) {
    auto [t_hat, a_t] = vision_to_text(t, text, z);
    out.t_hat = t_hat;
    out.a_t = a_t;
  }
  return out;
}

PermeationResult Bkp::fuse_variant(Tape& t, Var z, Var text, Fusion kind) const {
  PermeationResult out;
  switch (kind) {
    case Fusion::Dot:
      out.z_hat = t.mul_rowvec(z, text);
      out.t_hat = t.mul(text, t.mean_rows(z));
      break;
    case Fusion::Add:
      out.z_hat = t.add_rowvec(z, text);
      out.t_hat = t.add(text, t.mean_rows(z));
      break;
    case Fusion::Concat:
      out.z_hat = z;
      out.t_hat = text;
      break;
    case Fusion::CrossAttention:
      throw std::invalid_argument("fuse_variant: cross_attention is handled by permeate()");
  }
  return out;
}

PermeationResult Bkp::apply(Tape& t, Var z, Var text) {
  if (!cfg.enabled) {
    PermeationResult out;
    out.z_hat = z;
    out.t_hat = text;
    return out;
  }
  if (cfg.fusion == Fusion::CrossAttention) return permeate(t, z, text);
  return fuse_variant(t, z, text, cfg.fusion);
}

std::vector<Param*> Bkp::params() {
  return {&wq, &wk, &wv, &x_w1, &x_b1, &x_w2, &x_b2};
}

}  // namespace bikop
