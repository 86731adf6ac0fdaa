#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bikop/backbone.hpp"
#include "bikop/bkp.hpp"
#include "bikop/sad.hpp"
#include "bikop/text_knowledge.hpp"

namespace bikop {

struct LossConfig {
  double tau = 0.2;    // cosine-logit temperature
  double gamma = 0.5;  // adversarial loss weight
  void validate() const {
    if (!(tau > 0.0)) throw ConfigError("loss: tau must be positive");
    if (gamma < 0.0) throw ConfigError("loss: gamma must be >= 0");
  }
};

enum class ParamGroup { Base, Bkp, Sad };

struct ModelConfig {
  BackboneConfig backbone;
  TextConfig text;
  BkpConfig bkp;
  SadConfig sad;
  LossConfig loss;
  uint64_t init_seed = 42;

  void validate() const;
};

/// All trainable and frozen state of the learner. Parameters are enumerated
/// with their optimizer group so the training loop can apply the per-module
/// learning-rate multipliers without guessing from names.
struct Model {
  ModelConfig cfg;
  Backbone backbone;
  TextKnowledge text;
  Bkp bkp;
  FilterNet filter;

  void init(const ModelConfig& c);

  bool uses_text() const { return cfg.text.mode != TextMode::None; }

  std::vector<std::pair<Param*, ParamGroup>> trainable_params();
  std::vector<Param*> frozen_params();
  std::vector<Param*> all_params();  // trainable + frozen, checkpoint order
  Param* find_param(const std::string& name);
  void zero_grads();

  /// Deep snapshot / restore of every parameter value (optimizer state excluded).
  std::vector<Mat> snapshot_values();
  void restore_values(const std::vector<Mat>& values);
};

}  // namespace bikop
