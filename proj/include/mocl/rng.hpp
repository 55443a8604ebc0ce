#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace mocl {

// Counter-based PRNG (SplitMix64 over a keyed counter). Streams derived with
// derive() are statistically independent of the parent and of each other, so
// every consumer of randomness (module init, head init, per-epoch shuffles)
// can own a stream keyed by stable labels instead of by draw order. This is
// what makes matched-seed reruns (e.g. isolated FWT reference runs) land on
// bit-identical parameter draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

  // Child stream keyed by a label and up to two integer salts.
  Rng derive(std::string_view label, std::uint64_t a = 0, std::uint64_t b = 0) const {
    std::uint64_t h = fnv1a(label);
    h = mix(h ^ key_);
    h = mix(h + 0x165667b19e3779f9ull * (a + 1));
    h = mix(h + 0x27d4eb2f165667c5ull * (b + 1));
    return Rng(h, 0);
  }

  std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

  // Box-Muller with cached spare; deterministic across platforms.
  double normal(double mu = 0.0, double sigma = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mu + sigma * spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mu + sigma * r * std::cos(theta);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = next_u64() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }

 private:
  Rng(std::uint64_t key, int) : key_(key) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mocl
