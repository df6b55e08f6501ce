#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace ndlab {

// xoshiro256** seeded through splitmix64. A fixed, named algorithm so that a
// seed reproduces the same stream on every platform; std::mt19937 plus the
// standard distributions would not give that guarantee.
class Rng {
public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform double in [0, 1), 53 mantissa bits.
  double next_unit();

  // Standard normal via Box-Muller on fixed-order uniforms.
  double next_normal();

  // Unbiased integer in [0, n), n > 0. Rejection sampling.
  std::uint64_t next_below(std::uint64_t n);

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::array<std::uint64_t, 4> state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ndlab
