#include "bikop/rng.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace bikop {

uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

uint64_t hash_tag(std::string_view tag) {
  uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t index) {
  uint64_t s = master ^ hash_tag(tag);
  uint64_t a = splitmix64(s);
  s ^= index * 0x9e3779b97f4a7c15ull;
  uint64_t b = splitmix64(s);
  return a ^ (b + 0x165667b19e3779f9ull);
}

double Rng::uniform() {
  return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  double u1 = uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::gumbel() { return -std::log(-std::log(uniform())); }

int Rng::uniform_int(int n) {
  if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
  int v = static_cast<int>(uniform() * n);
  return v < n ? v : n - 1;
}

std::vector<int> Rng::sample_indices(int n, int k) {
  if (k > n) throw std::invalid_argument("Rng::sample_indices: k > n");
  std::vector<int> pool(n);
  for (int i = 0; i < n; ++i) pool[i] = i;
  std::vector<int> out(k);
  for (int i = 0; i < k; ++i) {
    int j = i + uniform_int(n - i);
    std::swap(pool[i], pool[j]);
    out[i] = pool[i];
  }
  return out;
}

std::string Rng::state() const {
  std::ostringstream os;
  os << eng_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> eng_;
  if (!is) throw std::invalid_argument("Rng::set_state: malformed state string");
}

}  // namespace bikop
