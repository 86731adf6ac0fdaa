#pragma once

#include <string>
#include <vector>

#include "bikop/evaluation.hpp"
#include "bikop/model.hpp"
#include "bikop/synth_data.hpp"
#include "bikop/training.hpp"

namespace bikop {

/// Merged run configuration: defaults <- config file <- command-line
/// overrides, in that precedence. Every field has a documented default;
/// unknown keys are rejected by name before any work starts.
struct RunConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  std::string eval_split = "novel";

  void validate();
  std::string to_json() const;  // config echo written into run directories
};

/// Parses `path` (empty string = pure defaults) and applies key=value
/// overrides. File syntax: one `section.key = value` per line, `#` comments.
RunConfig parse_config(const std::string& path, const std::vector<std::string>& overrides);

/// Applies one dotted key. Throws ConfigError naming the key when unknown or
/// ill-typed.
void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value);

/// Every known key with its default and one-line description, for --help-keys.
std::vector<std::string> config_key_help();

}  // namespace bikop
