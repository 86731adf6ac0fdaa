#include "bikop/backbone.hpp"

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

void BackboneConfig::validate() const {
  if (layers < 2) throw ConfigError("model: layers must be >= 2");
  if (split_layer < 1 || split_layer >= layers) {
    throw ConfigError("model: split_layer must satisfy 1 <= split_layer < layers (got " +
                      std::to_string(split_layer) + " of " + std::to_string(layers) + ")");
  }
  if (c_d <= 0 || heads <= 0 || c_d % heads != 0) {
    throw ConfigError("model: c_d (" + std::to_string(c_d) +
                      ") must be a positive multiple of heads (" + std::to_string(heads) + ")");
  }
  if (image_h <= 0 || image_w <= 0 || patch_size <= 0 || image_h % patch_size != 0 ||
      image_w % patch_size != 0) {
    throw ConfigError("model: image dims must be positive multiples of patch_size");
  }
  if (mlp_ratio < 1) throw ConfigError("model: mlp_ratio must be >= 1");
}

void TransformerLayer::init(const std::string& prefix, const BackboneConfig& cfg, Rng& rng) {
  const int c = cfg.c_d;
  const double sd = 0.02;
  ln1_g = Param(prefix + ".ln1.gamma", Mat::Ones(1, c));
  ln1_b = Param(prefix + ".ln1.beta", Mat::Zero(1, c));
  wq = Param(prefix + ".attn.wq", init_normal(rng, c, c, sd));
  bq = Param(prefix + ".attn.bq", Mat::Zero(1, c));
  wk = Param(prefix + ".attn.wk", init_normal(rng, c, c, sd));
  bk = Param(prefix + ".attn.bk", Mat::Zero(1, c));
  wv = Param(prefix + ".attn.wv", init_normal(rng, c, c, sd));
  bv = Param(prefix + ".attn.bv", Mat::Zero(1, c));
  wo = Param(prefix + ".attn.wo", init_normal(rng, c, c, sd));
  bo = Param(prefix + ".attn.bo", Mat::Zero(1, c));
  ln2_g = Param(prefix + ".ln2.gamma", Mat::Ones(1, c));
  ln2_b = Param(prefix + ".ln2.beta", Mat::Zero(1, c));
  mlp_w1 = Param(prefix + ".mlp.w1", init_normal(rng, c, cfg.mlp_ratio * c, sd));
  mlp_b1 = Param(prefix + ".mlp.b1", Mat::Zero(1, cfg.mlp_ratio * c));
  mlp_w2 = Param(prefix + ".mlp.w2", init_normal(rng, cfg.mlp_ratio * c, c, sd));
  mlp_b2 = Param(prefix + ".mlp.b2", Mat::Zero(1, c));
}

Var TransformerLayer::forward(Tape& t, Var x, int heads, int block,
                              std::vector<Mat>* probs_out) {
  Var n1 = t.layernorm_rows(x, t.param(ln1_g), t.param(ln1_b));
  Var q = t.add_rowvec(t.matmul(n1, t.param(wq)), t.param(bq));
  Var k = t.add_rowvec(t.matmul(n1, t.param(wk)), t.param(bk));
  Var v = t.add_rowvec(t.matmul(n1, t.param(wv)), t.param(bv));
  Var attn = t.blocked_mhsa(q, k, v, heads, block, probs_out);
  Var proj = t.add_rowvec(t.matmul(attn, t.param(wo)), t.param(bo));
  Var x1 = t.add(x, proj);
  Var n2 = t.layernorm_rows(x1, t.param(ln2_g), t.param(ln2_b));
  Var h = t.gelu(t.add_rowvec(t.matmul(n2, t.param(mlp_w1)), t.param(mlp_b1)));
  Var mlp = t.add_rowvec(t.matmul(h, t.param(mlp_w2)), t.param(mlp_b2));
  return t.add(x1, mlp);
}

std::vector<Param*> TransformerLayer::params() {
  return {&ln1_g, &ln1_b, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo,
          &ln2_g, &ln2_b, &mlp_w1, &mlp_b1, &mlp_w2, &mlp_b2};
}

void Backbone::init(const BackboneConfig& c, Rng& rng) {
  c.validate();
  cfg = c;
  patch_w = Param("backbone.patch.weight",
                  init_normal(rng, cfg.patch_dim(), cfg.c_d,
                              1.0 / std::sqrt(static_cast<double>(cfg.patch_dim()))));
  patch_b = Param("backbone.patch.bias", Mat::Zero(1, cfg.c_d));
  pos = Param("backbone.pos", init_normal(rng, cfg.tokens(), cfg.c_d, 0.02));
  layers.resize(static_cast<size_t>(cfg.layers));
  for (int l = 0; l < cfg.layers; ++l) {
    layers[static_cast<size_t>(l)].init("backbone.layer" + std::to_string(l), cfg, rng);
  }
}

Mat Backbone::patchify(const Vec& image) const {
  const int P = cfg.patch_size;
  const int gw = cfg.image_w / P;
  const int gh = cfg.image_h / P;
  if (image.size() != cfg.image_h * cfg.image_w * cfg.channels) {
    throw std::invalid_argument("patchify: image has " + std::to_string(image.size()) +
                                " values, expected " +
                                std::to_string(cfg.image_h * cfg.image_w * cfg.channels));
  }
  Mat patches(gh * gw, cfg.patch_dim());
  for (int py = 0; py < gh; ++py) {
    for (int px = 0; px < gw; ++px) {
      int m = py * gw + px;
      int o = 0;
      for (int y = 0; y < P; ++y) {
        for (int x = 0; x < P; ++x) {
          for (int c = 0; c < cfg.channels; ++c) {
            int yy = py * P + y;
            int xx = px * P + x;
            patches(m, o++) = image((yy * cfg.image_w + xx) * cfg.channels + c);
          }
        }
      }
    }
  }
  return patches;
}

Mat Backbone::patchify_batch(const Dataset& ds, const std::vector<int>& rows) const {
  const int m = cfg.tokens();
  Mat out(static_cast<Eigen::Index>(rows.size()) * m, cfg.patch_dim());
  for (size_t b = 0; b < rows.size(); ++b) {
    out.middleRows(static_cast<Eigen::Index>(b) * m, m) = patchify(ds.image_as_vec(rows[b]));
  }
  return out;
}

Var Backbone::embed_patches(Tape& t, const Mat& patches, int batch) {
  const int m = cfg.tokens();
  if (patches.rows() != static_cast<Eigen::Index>(batch) * m) {
    throw std::invalid_argument("embed_patches: row count does not match batch * tokens");
  }
  Var x = t.add_rowvec(t.matmul(t.input(patches), t.param(patch_w)), t.param(patch_b));
  if (cfg.pos_embedding) {
    // same positional table added to every image block, tiled via gather so
    // the gradient accumulates back into the single table
    std::vector<int> idx(static_cast<size_t>(batch) * m);
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < m; ++i) idx[static_cast<size_t>(b) * m + i] = i;
    Var pos_tiled = t.gather_rows(t.param(pos), idx);
    x = t.add(x, pos_tiled);
  }
  return x;
}

Var Backbone::encode_lower(Tape& t, Var tokens, ForwardTrace* trace) {
  Var x = tokens;
  for (int l = 0; l < cfg.split_layer; ++l) {
    std::vector<Mat> probs;
    x = layers[static_cast<size_t>(l)].forward(t, x, cfg.heads, cfg.tokens(),
                                               trace ? &probs : nullptr);
    if (trace) trace->attention.push_back(std::move(probs));
  }
  return x;
}

Var Backbone::encode_joint(Tape& t, Var tokens, int block, ForwardTrace* trace) {
  if (t.val(tokens).rows() % block != 0) {
    throw std::invalid_argument("encode_joint: rows not divisible by block");
  }
  Var x = tokens;
  for (int l = cfg.split_layer; l < cfg.layers; ++l) {
    std::vector<Mat> probs;
    x = layers[static_cast<size_t>(l)].forward(t, x, cfg.heads, block,
                                               trace ? &probs : nullptr);
    if (trace) trace->attention.push_back(std::move(probs));
  }
  int take = cfg.gap_includes_prompt ? block : cfg.tokens();
  return t.blocked_mean_rows(x, block, take);
}

Var Backbone::encode_query(Tape& t, const Dataset& ds, const std::vector<int>& rows,
                           ForwardTrace* trace) {
  Mat patches = patchify_batch(ds, rows);
  Var x = embed_patches(t, patches, static_cast<int>(rows.size()));
  const int m = cfg.tokens();
  for (int l = 0; l < cfg.layers; ++l) {
    std::vector<Mat> probs;
    x = layers[static_cast<size_t>(l)].forward(t, x, cfg.heads, m, trace ? &probs : nullptr);
    if (trace) trace->attention.push_back(std::move(probs));
  }
  return t.blocked_mean_rows(x, m, m);
}

std::vector<Param*> Backbone::params() {
  std::vector<Param*> out{&patch_w, &patch_b};
  if (cfg.pos_embedding) out.push_back(&pos);
  for (auto& l : layers) {
    for (Param* p : l.params()) out.push_back(p);
  }
  return out;
}

}  // namespace bikop
