#pragma once

#include <cstddef>
#include <cstdint>

namespace dgkit {

/// SplitMix64 (Steele, Lea & Flood 2014). All randomness in the toolkit flows
/// through this generator so seeded runs replay bit-for-bit on any platform
/// and can be re-implemented elsewhere from the published test vectors.
class SplitMix64 {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit constexpr SplitMix64(std::uint64_t seed) : state_(seed) {}

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  constexpr std::uint64_t next() {
    state_ += kGamma;
    return mix(state_);
  }

  /// Uniform on [0, n) by rejection; n must be positive.
  std::uint64_t below(std::uint64_t n);
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(below(n)); }

  /// Uniform on [0, 1) with 53 bits of precision.
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

/// Counter-based stream derivation: the seed of stream i is the (i+1)-th
/// output of SplitMix64(base), computed directly without stepping.
constexpr std::uint64_t split_seed(std::uint64_t base, std::uint64_t stream) {
  return SplitMix64::mix(base + (stream + 1) * SplitMix64::kGamma);
}

}  // namespace dgkit
