#pragma once

#include <map>
#include <string>
#include <vector>

#include "bikop/model.hpp"

namespace bikop {

/// On-disk snapshot: config echo (JSON), stage tag, rng state string and every
/// named parameter array. See the format notes in docs/FORMATS.md; the file is
/// bit-stable under save -> load -> save.
struct Checkpoint {
  std::string config_json;
  std::string stage;
  std::string rng_state;
  std::vector<std::pair<std::string, Mat>> arrays;

  const Mat* find(const std::string& name) const;
};

Checkpoint snapshot_model(Model& model, const std::string& config_json,
                          const std::string& stage, const std::string& rng_state);

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Copies every checkpoint array into the matching model parameter. Throws on
/// any missing name or shape mismatch.
void apply_checkpoint(const Checkpoint& ck, Model& model);

/// Copies only arrays whose name starts with one of the prefixes (used to
/// carry a pretrained backbone into models whose other modules differ).
int apply_checkpoint_prefix(const Checkpoint& ck, Model& model,
                            const std::vector<std::string>& prefixes);

}  // namespace bikop
