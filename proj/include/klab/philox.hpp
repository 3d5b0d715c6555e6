#pragma once

#include <array>
#include <cstdint>
#include <utility>

namespace klab {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key);
};

// Uniform in [0, 1) from two 32-bit words, 53-bit resolution.
inline double uniform53(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t x = (static_cast<std::uint64_t>(hi >> 5) << 26) | static_cast<std::uint64_t>(lo >> 6);
  return static_cast<double>(x) * 0x1.0p-53;
}

// Two independent standard normals for (seed, stream, counter, lane) via
// Box-Muller on one Philox block.
std::pair<double, double> normal_pair(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter,
                                      std::uint32_t lane = 0);

// Two uniforms in [0, 1) for the same addressing scheme.
std::pair<double, double> uniform_pair(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter,
                                       std::uint32_t lane = 0);

}  // namespace klab
