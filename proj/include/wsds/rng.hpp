#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

namespace wsds {

/// xoshiro256** seeded through splitmix64. The stream depends only on the
/// seed, so runs reproduce bit-for-bit across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of mantissa.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal (Box-Muller, no cached second value).
  double normal();

 private:
  std::array<std::uint64_t, 4> s_{};
};

/// Fisher-Yates shuffle driven by `rng`, portable unlike std::shuffle.
template <class T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[static_cast<std::size_t>(rng.below(i))]);
  }
}

}  // namespace wsds
