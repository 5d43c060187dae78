#include "clasp/rng.hpp"

#include <cmath>

namespace clasp {
namespace {

// splitmix64; passes through every 64-bit state exactly once.
inline std::uint64_t splitmix(std::uint64_t& s) {
  s += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

Rng Rng::derive(std::string_view label) const {
  std::uint64_t mixed = state_ ^ fnv1a(label);
  return Rng(splitmix(mixed));
}

Rng Rng::derive(std::string_view label, std::uint64_t index) const {
  std::uint64_t mixed = state_ ^ fnv1a(label);
  mixed = splitmix(mixed) ^ (index * 0x9e3779b97f4a7c15ull);
  return Rng(splitmix(mixed));
}

std::uint64_t Rng::next_u64() { return splitmix(state_); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  return static_cast<std::uint64_t>(
      (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  has_spare_ = true;
  return u * f;
}

std::vector<double> Rng::normal_vec(std::size_t n, double mean, double stddev) {
  std::vector<double> out(n);
  for (auto& x : out) x = normal(mean, stddev);
  return out;
}

}  // namespace clasp
