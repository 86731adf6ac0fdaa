#pragma once

#include <string>
#include <vector>

#include "bikop/autodiff.hpp"
#include "bikop/rng.hpp"

namespace bikop {

enum class Fusion { CrossAttention, Dot, Add, Concat };
enum class Direction { Bidirectional, TextToVision, VisionToText };

Fusion fusion_from_name(const std::string& s);
const char* fusion_name(Fusion f);
Direction direction_from_name(const std::string& s);
const char* direction_name(Direction d);

struct BkpConfig {
  bool enabled = true;
  double mu = 0.2;                    // permeation weight
  Fusion fusion = Fusion::CrossAttention;
  Direction direction = Direction::Bidirectional;
  bool az_softmax_over_patches = false;  // alternative softmax axis for the
                                         // vision-side similarity map
  int c_d = 64;
  void validate() const;
};

struct PermeationResult {
  Var z_hat;  // M x C_d
  Var t_hat;  // 1 x C_d
  Mat a_z;    // M x 1 similarity map (cross-attention fusion only)
  Mat a_t;    // 1 x M similarity map (cross-attention fusion only)
};

/// Bidirectional knowledge permeation between patch features Z (M x C_d) and
/// a prompt embedding T (1 x C_d). Both directions share one set of q/k/v
/// projections and one correction MLP; each direction reads the original
/// inputs, never the other direction's output.
struct Bkp {
  BkpConfig cfg;
  Param wq, wk, wv;              // C_d x C_d, no bias
  Param x_w1, x_b1, x_w2, x_b2;  // correction MLP, hidden 2*C_d

  void init(const BkpConfig& c, Rng& rng);

  /// Text -> vision: Z + mu * X(A_Z (T Wv)).
  std::pair<Var, Mat> text_to_vision(Tape& t, Var z, Var text);
  /// Vision -> text: T + mu * X(A_T (Z Wv)).
  std::pair<Var, Mat> vision_to_text(Tape& t, Var text, Var z);

  /// Both directions from the original (Z, T), honoring cfg.direction.
  PermeationResult permeate(Tape& t, Var z, Var text);

  /// Parameter-free ablation fusions (dot / add / concat). Concat leaves both
  /// streams unchanged; the joint encoder's concatenation is the interaction.
  PermeationResult fuse_variant(Tape& t, Var z, Var text, Fusion kind) const;

  /// Dispatch on cfg: identity when disabled, cross-attention permeation or a
  /// fusion variant otherwise.
  PermeationResult apply(Tape& t, Var z, Var text);

  std::vector<Param*> params();

private:
  Var correction_mlp(Tape& t, Var x);
};

}  // namespace bikop
