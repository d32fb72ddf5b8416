#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "seqxrec/common.hpp"

namespace SEQXREC_NS {

std::uint64_t splitmix64(std::uint64_t& state);

// FNV-1a 64-bit over raw bytes; used for seed derivation, parameter hashes
// and checkpoint digests.
std::uint64_t fnv1a64(const void* bytes, std::size_t length,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text);

// xoshiro256** seeded through splitmix64. Every derived quantity (uniforms,
// normals, integers) is computed here rather than through <random>
// distributions, whose outputs are implementation-defined, so a seed replays
// identically with any standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller (no cached second variate).
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

  // Independent stream keyed by a tag, e.g. a pipeline stage name.
  Rng derive(std::string_view tag) const;
  Rng derive(std::uint64_t tag) const;

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
};

}  // namespace SEQXREC_NS
