// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>
#include <string_view>

namespace leafnet {

// std::mt19937_64 is bit-specified by the standard; the std distributions are
// not, so the draws below are implemented here to stay reproducible across
// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (both outputs used).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::string serialize() const;
  void deserialize(const std::string& state);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Derives an independent stream seed from a base seed and a list of indices.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts);
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);

}  // namespace leafnet
