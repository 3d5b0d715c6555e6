#include "klab/philox.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace klab;

TEST_CASE("Philox4x32-10 known-answer vectors") {
  using C = Philox4x32::Counter;
  using K = Philox4x32::Key;
  CHECK(Philox4x32::generate(C{0, 0, 0, 0}, K{0, 0}) == C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(Philox4x32::generate(C{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, K{0xffffffff, 0xffffffff}) ==
        C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(Philox4x32::generate(C{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, K{0xa4093822, 0x299f31d0}) ==
        C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("uniforms lie in [0, 1) at 53-bit resolution") {
  CHECK(uniform53(0, 0) == 0.0);
  CHECK(uniform53(0xffffffff, 0xffffffff) < 1.0);
  CHECK(uniform53(0xffffffff, 0xffffffff) == 1.0 - 0x1.0p-53);
}

TEST_CASE("normal pairs are deterministic and addressable") {
  const auto a = normal_pair(9, 4, 17);
  const auto b = normal_pair(9, 4, 17);
  CHECK(a == b);
  CHECK(normal_pair(9, 5, 17) != a);
  CHECK(normal_pair(9, 4, 18) != a);
  CHECK(normal_pair(10, 4, 17) != a);
  CHECK(normal_pair(9, 4, 17, 1) != a);
}

TEST_CASE("normal moments") {
  const int n = 200000;
  double s1 = 0, s2 = 0, s4 = 0, cross = 0;
  for (int k = 0; k < n / 2; ++k) {
    const auto [x, y] = normal_pair(123, 7, static_cast<std::uint64_t>(k));
    s1 += x + y;
    s2 += x * x + y * y;
    s4 += x * x * x * x + y * y * y * y;
    cross += x * y;
  }
  CHECK(std::abs(s1 / n) < 5.0 / std::sqrt(n));
  CHECK(std::abs(s2 / n - 1.0) < 5.0 * std::sqrt(2.0 / n));
  CHECK(std::abs(s4 / n - 3.0) < 5.0 * std::sqrt(96.0 / n));
  CHECK(std::abs(cross / (n / 2)) < 5.0 / std::sqrt(n / 2));
}

TEST_CASE("streams do not collide") {
  std::set<std::pair<double, double>> seen;
  for (std::uint64_t s = 0; s < 200; ++s)
    for (std::uint64_t c = 0; c < 50; ++c) seen.insert(uniform_pair(1, s, c));
  CHECK(seen.size() == 200 * 50);
}
