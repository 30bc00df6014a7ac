#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace opbn {

/// What a random stream is used for. Part of the stream key, so streams for
/// different purposes never overlap even when seed and indices coincide.
enum class Purpose : std::uint64_t {
  init = 1,
  batch = 2,
  reparam = 3,
  mask = 4,
  oracle = 5,
  noise = 6,
  split = 7,
  data = 8,
  probe = 9,
  monte_carlo = 10,
  eval = 11,
};

/// SplitMix64 output function.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Counter-based random stream keyed by (seed, purpose, a, b).
///
/// The n-th draw is a pure function of the key and n, so any stream can be
/// recreated from its key and counter alone. Satisfies
/// UniformRandomBitGenerator and works with the <random> distributions.
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit Stream(std::uint64_t seed, Purpose purpose = Purpose::data, std::uint64_t a = 0,
                  std::uint64_t b = 0)
      : key_(derive_key(seed, purpose, a, b)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix64(key_ + (++counter_) * kGamma); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return double((*this)() >> 11) * 0x1.0p-53; }

  double normal() { return normal_(*this); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(*this);
  }

  [[nodiscard]] std::uint64_t key() const { return key_; }
  [[nodiscard]] std::uint64_t counter() const { return counter_; }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ull;

  static constexpr std::uint64_t derive_key(std::uint64_t seed, Purpose purpose, std::uint64_t a,
                                            std::uint64_t b) {
    std::uint64_t k = mix64(seed + kGamma);
    k = mix64(k ^ (static_cast<std::uint64_t>(purpose) * 0xd1b54a32d192ed03ull));
    k = mix64(k ^ (a + 0x8cb92ba72f3d8dd7ull));
    return mix64(k ^ (b + 0x2545f4914f6cdd1dull));
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::normal_distribution<double> normal_;
};

}  // namespace opbn
