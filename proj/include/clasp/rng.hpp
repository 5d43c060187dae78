#pragma once

// Deterministic RNG with named substreams. Distribution math is implemented
// here rather than with std:: distributions, whose output is
// implementation-defined; every stream is reproducible from (seed, label
// path) alone.

#include <cstdint>
#include <string_view>
#include <vector>

namespace clasp {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // Decorrelate trivially related seeds.
    next_u64();
    next_u64();
  }

  // Independent child stream identified by a label, e.g. rng.derive("init").
  Rng derive(std::string_view label) const;
  Rng derive(std::string_view label, std::uint64_t index) const;

  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);

  // Uniform integer in [0, n), n > 0. Multiply-shift, no modulo bias.
  std::uint64_t uniform_int(std::uint64_t n);

  // Standard normal via Marsaglia polar; one spare value is cached.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::vector<double> normal_vec(std::size_t n, double mean, double stddev);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.empty()) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace clasp
