#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace agentpose {

/// Deterministic xoshiro256** generator seeded through splitmix64.
///
/// Normal draws use Box-Muller on top of the raw stream, so a given seed
/// yields the same sequence on every platform with IEEE doubles.
class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "xoshiro256**";

  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Unbiased integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n);
  double normal();

  /// Independent child stream keyed by (seed, stream).
  Rng split(std::uint64_t stream) const;

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace agentpose
