#pragma once

#include <vector>

#include "bikop/autodiff.hpp"
#include "bikop/rng.hpp"
#include "bikop/synth_data.hpp"

namespace bikop {

struct BackboneConfig {
  int layers = 6;
  int split_layer = 4;        // knowledge permeation runs after this layer
  int c_d = 64;
  int heads = 4;
  int mlp_ratio = 2;
  int patch_size = 8;
  int image_h = 32;
  int image_w = 32;
  int channels = 3;
  bool pos_embedding = true;
  bool gap_includes_prompt = true;  // pool over M+1 tokens in the joint path

  int tokens() const { return (image_h / patch_size) * (image_w / patch_size); }
  int patch_dim() const { return patch_size * patch_size * channels; }
  void validate() const;
};

/// Per-layer attention maps captured during a traced forward, stacked per
/// block (see Tape::blocked_mhsa). One entry per transformer layer.
struct ForwardTrace {
  std::vector<std::vector<Mat>> attention;
};

struct TransformerLayer {
  Param ln1_g, ln1_b;
  Param wq, bq, wk, bk, wv, bv, wo, bo;
  Param ln2_g, ln2_b;
  Param mlp_w1, mlp_b1, mlp_w2, mlp_b2;

  void init(const std::string& prefix, const BackboneConfig& cfg, Rng& rng);
  Var forward(Tape& t, Var x, int heads, int block, std::vector<Mat>* probs_out = nullptr);
  std::vector<Param*> params();
};

/// Patch embedding + L pre-norm transformer layers, split at `split_layer` so
/// a prompt token can join for the remaining layers. No CLS token; features
/// are pooled by global average.
struct Backbone {
  BackboneConfig cfg;
  Param patch_w, patch_b;  // patch_dim x c_d, 1 x c_d
  Param pos;               // tokens x c_d
  std::vector<TransformerLayer> layers;

  void init(const BackboneConfig& c, Rng& rng);

  /// Raw patch extraction in raster order: M x patch_dim, pixels of each
  /// P x P region flattened row-major as (y, x, channel). Pure data op.
  Mat patchify(const Vec& image) const;

  /// Stacked patches for a batch of images: (B*M) x patch_dim.
  Mat patchify_batch(const Dataset& ds, const std::vector<int>& rows) const;

  /// Linear patch projection plus positional embedding: (B*M) x C_d.
  Var embed_patches(Tape& t, const Mat& patches, int batch);

  /// Layers 1..split_layer over blocks of M tokens.
  Var encode_lower(Tape& t, Var tokens, ForwardTrace* trace = nullptr);

  /// Layers split_layer+1..L over blocks of `block` tokens (M+1 when a prompt
  /// token was appended), then per-block GAP -> B x C_d.
  Var encode_joint(Tape& t, Var tokens, int block, ForwardTrace* trace = nullptr);

  /// Full prompt-free path for query images: all layers + GAP -> B x C_d.
  Var encode_query(Tape& t, const Dataset& ds, const std::vector<int>& rows,
                   ForwardTrace* trace = nullptr);

  std::vector<Param*> params();
};

}  // namespace bikop
