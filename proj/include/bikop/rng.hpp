#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace bikop {

uint64_t splitmix64(uint64_t& state);
uint64_t hash_tag(std::string_view tag);

/// Derives an independent stream seed from (master, tag, index). Streams with
/// distinct tags or indices never collide in practice; this is the documented
/// counter scheme used for per-episode, per-image and per-stage randomness.
uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t index = 0);

/// Deterministic random source. The engine (mt19937_64) has a fully specified
/// output sequence and the distributions below are hand-rolled, so identical
/// seeds produce identical values on every platform.
class Rng {
public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  /// Uniform in the open interval (0, 1): ((x >> 11) + 0.5) * 2^-53.
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller (two uniforms per value, no caching).
  double normal();
  /// Standard Gumbel: -log(-log(U)).
  double gumbel();
  /// Integer in [0, n). n must be positive.
  int uniform_int(int n);

  /// k distinct indices from [0, n), in draw order (partial Fisher-Yates).
  std::vector<int> sample_indices(int n, int k);

  std::string state() const;
  void set_state(const std::string& s);

private:
  std::mt19937_64 eng_;
};

}  // namespace bikop
