#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace vtcal {

/// xoshiro256** seeded through splitmix64.
///
/// Constants are the published ones (Blackman & Vigna): splitmix64 increment
/// 0x9E3779B97F4A7C15 with mixers 0xBF58476D1CE4E5B9 / 0x94D049BB133111EB,
/// xoshiro rotations 17/45 and the `* 5 rotl 7 * 9` scrambler. No platform
/// library generator or distribution is involved, so a seed yields the same
/// integer stream everywhere. Real-valued draws go through std::log/std::cos
/// only in normal(), which is bit-stable on a given platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Unbiased integer in [0, bound) by rejection.
  std::uint64_t uniform_int(std::uint64_t bound);
  bool bernoulli(double p);
  // Standard normal via Box-Muller; the spare value is cached.
  double normal();

  // Independent stream derived from this generator's seed and `stream_id`.
  // Does not advance this generator.
  Rng split(std::uint64_t stream_id) const;

  // `count` distinct indices from [0, population), ascending.
  std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t count);

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace vtcal
