#include "bikop/model.hpp"

namespace bikop {

void ModelConfig::validate() const {
  backbone.validate();
  bkp.validate();
  sad.validate();
  loss.validate();
  if (text.token_dim <= 0 || text.n_slots <= 0 || text.prefix_len < 0 || text.vocab <= 0) {
    throw ConfigError("text: token_dim, n_slots and vocab must be positive, prefix_len >= 0");
  }
  if (bkp.c_d != backbone.c_d || sad.c_d != backbone.c_d || text.out_dim != backbone.c_d) {
    throw ConfigError("model: channel dimension must agree across modules");
  }
  if (bkp.enabled && text.mode == TextMode::None) {
    throw ConfigError("model: knowledge permeation requires a text mode (got text.mode=none)");
  }
  if (sad.enabled && loss.gamma > 0.0 && sad.effective_m() >= sad.c_d) {
    throw ConfigError("sad: m must be < c_d when the adversarial loss is active, "
                      "otherwise the irrelevant prototype is identically zero");
  }
}

void Model::init(const ModelConfig& c) {
  c.validate();
  cfg = c;
  Rng rng(derive_seed(cfg.init_seed, "model-init"));
  backbone.init(cfg.backbone, rng);
  text.init(cfg.text, derive_seed(cfg.init_seed, "frozen-text"), rng);
  bkp.init(cfg.bkp, rng);
  filter.init(cfg.sad, rng);
}

std::vector<std::pair<Param*, ParamGroup>> Model::trainable_params() {
  std::vector<std::pair<Param*, ParamGroup>> out;
  for (Param* p : backbone.params()) out.emplace_back(p, ParamGroup::Base);
  if (uses_text()) {
    for (Param* p : text.trainable_params()) out.emplace_back(p, ParamGroup::Base);
  }
  if (cfg.bkp.enabled && cfg.bkp.fusion == Fusion::CrossAttention) {
    for (Param* p : bkp.params()) out.emplace_back(p, ParamGroup::Bkp);
  }
  if (cfg.sad.enabled) {
    for (Param* p : filter.params()) out.emplace_back(p, ParamGroup::Sad);
  }
  return out;
}

std::vector<Param*> Model::frozen_params() { return text.frozen_params(); }

std::vector<Param*> Model::all_params() {
  std::vector<Param*> out;
  for (Param* p : backbone.params()) out.push_back(p);
  for (Param* p : text.trainable_params()) out.push_back(p);
  for (Param* p : text.frozen_params()) out.push_back(p);
  for (Param* p : bkp.params()) out.push_back(p);
  for (Param* p : filter.params()) out.push_back(p);
  return out;
}

Param* Model::find_param(const std::string& name) {
  for (Param* p : all_params()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

void Model::zero_grads() {
  for (Param* p : all_params()) p->zero_grad();
}

std::vector<Mat> Model::snapshot_values() {
  std::vector<Mat> out;
  for (Param* p : all_params()) out.push_back(p->value);
  return out;
}

void Model::restore_values(const std::vector<Mat>& values) {
  auto ps = all_params();
  if (values.size() != ps.size()) {
    throw std::invalid_argument("restore_values: snapshot size mismatch");
  }
  for (size_t i = 0; i < ps.size(); ++i) ps[i]->value = values[i];
}

}  // namespace bikop
