#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dil {

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Child seed for (parent, index...). Used everywhere a sub-stream is needed
/// so that results never depend on evaluation order or worker count.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);
std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<std::uint64_t> path);

/// Portable random stream: std::mt19937_64 is fully specified, and the
/// conversions below avoid the implementation-defined standard distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via the Box-Muller transform.
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dil
