#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace fracergo::rng {

// Counter-based, splittable randomness. Every draw is a pure function of
// (seed, stream, index), so replica layouts and thread counts never change
// the values, and adding replicas never perturbs existing ones.

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t mix3(uint64_t seed, uint64_t stream, uint64_t index) {
  uint64_t h = splitmix64(seed ^ 0x6a09e667f3bcc909ULL);
  h = splitmix64(h ^ stream);
  h = splitmix64(h ^ index);
  return h;
}

// Uniform in (0,1), never exactly 0 or 1.
inline double uniform01(uint64_t seed, uint64_t stream, uint64_t index) {
  return (static_cast<double>(mix3(seed, stream, index) >> 11) + 0.5) * 0x1.0p-53;
}

// Standard normal via Box-Muller on two hashed uniforms.
inline double normal(uint64_t seed, uint64_t stream, uint64_t index) {
  const double u1 = uniform01(seed, stream, 2 * index);
  const double u2 = uniform01(seed, stream, 2 * index + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline uint64_t hash_string(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Replica seeds derive from (master seed, experiment name, replica index):
// independent of how replicas are scheduled onto threads.
inline uint64_t derive_seed(uint64_t master, std::string_view experiment, uint64_t replica) {
  return mix3(master, hash_string(experiment), replica);
}

// Stateful convenience wrapper around the counter scheme (still deterministic:
// the cursor only advances within one logical stream).
class Counter {
 public:
  Counter(uint64_t seed, uint64_t stream = 0) : seed_(seed), stream_(stream) {}
  double normal() { return rng::normal(seed_, stream_, cursor_++); }
  double uniform() { return rng::uniform01(seed_, stream_, cursor_++ + (1ULL << 62)); }
  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  uint64_t stream_;
  uint64_t cursor_ = 0;
};

}  // namespace fracergo::rng
