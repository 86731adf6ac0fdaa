#include "bikop/text_knowledge.hpp"

#include <cmath>

namespace bikop {

namespace {

Mat seeded_normal(Rng& rng, int rows, int cols, double std_dev) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = std_dev * rng.normal();
  return m;
}

}  // namespace

void FrozenTextEncoder::init(const TextConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  double sd = 1.0 / std::sqrt(static_cast<double>(cfg.token_dim));
  embedding = Param("text.frozen.embedding",
                    seeded_normal(rng, cfg.vocab, cfg.token_dim, 1.0), false);
  mix_w1 = Param("text.frozen.mix_w1",
                 seeded_normal(rng, cfg.token_dim, cfg.token_dim, sd), false);
  mix_b1 = Param("text.frozen.mix_b1", seeded_normal(rng, 1, cfg.token_dim, 0.1), false);
  mix_w2 = Param("text.frozen.mix_w2",
                 seeded_normal(rng, cfg.token_dim, cfg.token_dim, sd), false);
  mix_b2 = Param("text.frozen.mix_b2", seeded_normal(rng, 1, cfg.token_dim, 0.1), false);
}

std::vector<Param*> FrozenTextEncoder::params() {
  return {&embedding, &mix_w1, &mix_b1, &mix_w2, &mix_b2};
}

Var FrozenTextEncoder::encode(Tape& t, Var seq) {
  Var mean = t.mean_rows(seq);
  Var h1 = t.tanh_act(t.add_rowvec(t.matmul(mean, t.param(mix_w1)),
                                   t.param(mix_b1)));
  Var h2 = t.tanh_act(t.add_rowvec(t.matmul(h1, t.param(mix_w2)),
                                   t.param(mix_b2)));
  return h2;
}

Mat FrozenTextEncoder::encode_plain(const Mat& seq) const {
  Mat mean = seq.colwise().mean();
  Mat h1 = ((mean * mix_w1.value).rowwise() + mix_b1.value.row(0)).array().tanh();
  Mat h2 = ((h1 * mix_w2.value).rowwise() + mix_b2.value.row(0)).array().tanh();
  return h2;
}

void PromptBank::init(const TextConfig& cfg, Rng& rng) {
  prefix_len = cfg.prefix_len;
  n_slots = cfg.n_slots;
  int rows = std::max(1, n_slots * prefix_len);
  prefix = Param("text.prompt_bank", seeded_normal(rng, rows, cfg.token_dim, 0.02));
  if (prefix_len == 0) prefix.value.setZero();
}

Var PromptBank::slot(Tape& t, int n) {
  if (n < 0 || n >= n_slots) {
    throw std::invalid_argument("PromptBank::slot: slot " + std::to_string(n) +
                                " out of range [0," + std::to_string(n_slots) + ")");
  }
  Var all = t.param(prefix);
  return t.slice_rows(all, n * prefix_len, prefix_len);
}

void TextProjection::init(const TextConfig& cfg, Rng& rng) {
  weight = Param("text.proj.weight", seeded_normal(rng, cfg.token_dim, cfg.out_dim,
                                                   1.0 / std::sqrt((double)cfg.token_dim)));
  bias = Param("text.proj.bias", Mat::Zero(1, cfg.out_dim));
}

void TextKnowledge::init(const TextConfig& c, uint64_t frozen_seed, Rng& rng) {
  cfg = c;
  encoder.init(cfg, frozen_seed);
  bank.init(cfg, rng);
  proj.init(cfg, rng);
}

Var TextKnowledge::build_prompt(Tape& t, int slot, const std::vector<int>& name_tokens) {
  if (name_tokens.empty()) {
    throw std::invalid_argument("build_prompt: name_tokens must be nonempty");
  }
  for (int tok : name_tokens) {
    if (tok < 0 || tok >= cfg.vocab) {
      throw std::invalid_argument("build_prompt: token id " + std::to_string(tok) +
                                  " outside vocab of size " + std::to_string(cfg.vocab));
    }
  }
  Var names = t.gather_rows(t.param(encoder.embedding), name_tokens);
  if (cfg.effective_prefix() == 0) return names;
  return t.concat_rows(bank.slot(t, slot), names);
}

Var TextKnowledge::encode_prompt(Tape& t, Var prompt_seq) {
  Var g = encoder.encode(t, prompt_seq);
  return t.add_rowvec(t.matmul(g, t.param(proj.weight)),
                      t.param(proj.bias));
}

Var TextKnowledge::embed(Tape& t, int slot, const std::vector<int>& name_tokens) {
  return encode_prompt(t, build_prompt(t, slot, name_tokens));
}

std::vector<Param*> TextKnowledge::trainable_params() {
  std::vector<Param*> out{&proj.weight, &proj.bias};
  if (cfg.mode == TextMode::MetaPrompt && cfg.prefix_len > 0) out.push_back(&bank.prefix);
  return out;
}

std::vector<Param*> TextKnowledge::frozen_params() { return encoder.params(); }

}  // namespace bikop
