#pragma once
#include <cmath>
#include <cstdint>
#include <string_view>

namespace roadvol {

// Deterministic RNG with named substreams. All randomness in a run flows
// from one master seed; independent components draw from streams keyed by
// (seed, name, index...) so results do not depend on evaluation order or
// worker scheduling. Distributions are hand-rolled on top of splitmix64 to
// keep byte-level reproducibility independent of the standard library.
class Rng {
 public:
  Rng() : state_(0x9e3779b97f4a7c15ull) {}
  explicit Rng(std::uint64_t seed) : state_(seed * 0x9e3779b97f4a7c15ull + 0xbf58476d1ce4e5b9ull) {}

  static std::uint64_t hash_name(std::string_view name) {
    // FNV-1a 64-bit
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    return h;
  }

  // Substream keyed by a name plus up to three integer indices.
  static Rng stream(std::uint64_t seed, std::string_view name, std::uint64_t a = 0,
                    std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t h = hash_name(name);
    h = mix(h ^ seed);
    h = mix(h ^ (a + 0x9e3779b97f4a7c15ull));
    h = mix(h ^ (b + 0x7f4a7c159e3779b9ull));
    h = mix(h ^ (c + 0x2545f4914f6cdd1dull));
    Rng r;
    r.state_ = h;
    return r;
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t randint(std::uint64_t n) {
    // rejection-free multiply-shift; bias negligible for desk-scale n
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller (one value per call, deterministic).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t state_;
};

}  // namespace roadvol
