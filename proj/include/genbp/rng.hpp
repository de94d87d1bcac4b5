#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "genbp/mat.hpp"

namespace genbp {

// Seedable, splittable random stream.  split() derives an independent child
// stream from the parent's base seed and a tag, without consuming state from
// the parent, so the draw schedule of one stream never affects another.
// Every stochastic operation in the library takes an explicit Rng.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : base_(seed), gen_(mix(seed, 0x1d8e4e27c47d124fULL)) {}

  Rng split(std::uint64_t tag) const { return Rng(mix(base_, tag)); }
  Rng split(std::string_view name) const { return split(fnv1a(name)); }

  std::uint64_t base_seed() const { return base_; }

  double uniform() { return unif_(gen_); }          // [0, 1)
  double normal() { return norm_(gen_); }           // N(0, 1)
  double gamma(double shape, double scale) {
    std::gamma_distribution<double> dist(shape, scale);
    return dist(gen_);
  }
  double chi_squared(double df) { return gamma(0.5 * df, 2.0); }

  void fill_normal(double* p, std::size_t n, double sd = 1.0) {
    for (std::size_t i = 0; i < n; ++i) p[i] = sd * norm_(gen_);
  }
  Vec normal_vec(std::size_t n, double sd = 1.0) {
    Vec v(n);
    fill_normal(v.data(), n, sd);
    return v;
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over the combined state
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t base_;
  std::mt19937_64 gen_;
  std::normal_distribution<double> norm_{0.0, 1.0};
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
};

}  // namespace genbp
