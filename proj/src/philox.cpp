#include "klab/philox.hpp"

#include <cmath>
#include <numbers>

namespace klab {

namespace {

constexpr std::uint32_t kM0 = 0xD2511F53u;
constexpr std::uint32_t kM1 = 0xCD9E8D57u;
constexpr std::uint32_t kW0 = 0x9E3779B9u;
constexpr std::uint32_t kW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

Philox4x32::Counter block(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter, std::uint32_t lane) {
  // Counter words: (counter lo, counter hi, stream lo, stream hi ^ lane).
  Philox4x32::Counter c{static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32),
                        static_cast<std::uint32_t>(stream),
                        static_cast<std::uint32_t>(stream >> 32) ^ (lane << 16)};
  Philox4x32::Key k{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  return Philox4x32::generate(c, k);
}

}  // namespace

Philox4x32::Counter Philox4x32::generate(Counter ctr, Key key) {
  for (int r = 0; r < 10; ++r) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kM0, ctr[0], hi0, lo0);
    mulhilo(kM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

std::pair<double, double> uniform_pair(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter,
                                       std::uint32_t lane) {
  const auto b = block(seed, stream, counter, lane);
  return {uniform53(b[0], b[1]), uniform53(b[2], b[3])};
}

std::pair<double, double> normal_pair(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter,
                                      std::uint32_t lane) {
  const auto [u1, u2] = uniform_pair(seed, stream, counter, lane);
  const double r = std::sqrt(-2.0 * std::log(1.0 - u1));  // 1 - u1 in (0, 1]
  const double a = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(a), r * std::sin(a)};
}

}  // namespace klab
