#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace sentinel {

// Portable seeded sampling. std::mt19937_64 has a bit-exact sequence fixed
// by the standard; bounded draws use rejection so no library-specific
// distribution code is involved.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  /// Uniform sample without replacement of `k` indices out of `n`,
  /// returned sorted ascending. k >= n returns all indices.
  std::vector<std::size_t> choose(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
};

/// Derives a per-stage seed so independent stages do not share streams.
constexpr std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t stage) noexcept {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stage + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace sentinel
