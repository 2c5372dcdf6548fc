#pragma once

#include <cstdint>
#include <span>
#include <utility>

#include "ccprompt/types.hpp"

namespace ccprompt {

std::uint64_t splitmix64(std::uint64_t x);

/// PCG32 (XSH-RR, 64-bit state), seeded as in the reference pcg32_srandom.
/// Every random draw in the library goes through this generator so sampled
/// episodes and initializations do not depend on the standard library.
class Pcg32 {
 public:
  using result_type = std::uint32_t;

  explicit Pcg32(std::uint64_t init_state = 0x853c49e6748fea9bULL,
                 std::uint64_t stream = 0xda3e39cb94b95bdbULL);

  std::uint32_t next();
  std::uint32_t operator()() { return next(); }
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return 0xffffffffU; }

  /// Uniform in [0, bound) without modulo bias.
  std::uint32_t bounded(std::uint32_t bound);
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

template <typename T>
void shuffle(std::span<T> items, Pcg32& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = rng.bounded(static_cast<std::uint32_t>(i));
    std::swap(items[i - 1], items[j]);
  }
}

MatrixXd normal_matrix(Index rows, Index cols, double stddev, Pcg32& rng);

}  // namespace ccprompt
