#include "dgkit/rng.hpp"

#include "dgkit/error.hpp"

namespace dgkit {

std::uint64_t SplitMix64::below(std::uint64_t n) {
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "cannot sample from an empty range");
  // Reject the low (2^64 mod n) values so every residue is equally likely.
  const std::uint64_t threshold = (0 - n) % n;
  while (true) {
    const std::uint64_t x = next();
    if (x >= threshold) return x % n;
  }
}

}  // namespace dgkit
