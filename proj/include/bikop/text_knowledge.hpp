#pragma once

#include <vector>

#include "bikop/autodiff.hpp"
#include "bikop/rng.hpp"

namespace bikop {

enum class TextMode { None, NameOnly, MetaPrompt };

struct TextConfig {
  TextMode mode = TextMode::MetaPrompt;
  int token_dim = 32;
  int prefix_len = 8;   // w learnable prefix tokens per slot
  int n_slots = 5;      // episode positions with their own prefix block
  int vocab = 15;       // shape tokens + palette tokens
  int out_dim = 64;     // C_d, set from the model config

  int effective_prefix() const { return mode == TextMode::MetaPrompt ? prefix_len : 0; }
};

/// Frozen text encoder: seeded-random token embeddings plus a frozen two-layer
/// (linear, tanh) mixer applied to the mean token embedding. Never updated by
/// any optimizer; output is a pure function of (seed, token sequence).
struct FrozenTextEncoder {
  Param embedding;  // vocab x token_dim
  Param mix_w1, mix_b1, mix_w2, mix_b2;

  void init(const TextConfig& cfg, uint64_t seed);
  std::vector<Param*> params();

  /// Mean over sequence rows, then the frozen mixer. seq is (len x token_dim).
  Var encode(Tape& t, Var seq);
  /// Tape-free forward for deterministic inference helpers.
  Mat encode_plain(const Mat& seq) const;
};

/// Trainable per-slot prefix tokens (the meta-class-specific part of a prompt).
struct PromptBank {
  Param prefix;  // (n_slots * prefix_len) x token_dim
  int prefix_len = 0;
  int n_slots = 0;

  void init(const TextConfig& cfg, Rng& rng);
  /// Prefix rows of one slot as a tape leaf slice.
  Var slot(Tape& t, int n);
};

/// Trainable projection H: token_dim -> C_d.
struct TextProjection {
  Param weight;  // token_dim x out_dim
  Param bias;    // 1 x out_dim

  void init(const TextConfig& cfg, Rng& rng);
};

/// The whole text path: prompts -> frozen encoder -> projection.
struct TextKnowledge {
  TextConfig cfg;
  FrozenTextEncoder encoder;
  PromptBank bank;
  TextProjection proj;

  void init(const TextConfig& c, uint64_t frozen_seed, Rng& rng);

  /// Prompt sequence E_n for a slot: prefix tokens followed by name token
  /// embeddings; (w + |name|) x token_dim. NameOnly mode drops the prefix.
  Var build_prompt(Tape& t, int slot, const std::vector<int>& name_tokens);

  /// T_n = H(G(E_n)) as a 1 x C_d row.
  Var encode_prompt(Tape& t, Var prompt_seq);

  /// Convenience: build + encode.
  Var embed(Tape& t, int slot, const std::vector<int>& name_tokens);

  std::vector<Param*> trainable_params();
  std::vector<Param*> frozen_params();
};

}  // namespace bikop
