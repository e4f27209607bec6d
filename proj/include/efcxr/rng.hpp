#pragma once

#include <cstdint>
#include <string_view>

namespace efcxr {

/// Counter-based random stream. Draw k of a stream seeded with s is
/// splitmix64(s + k * golden), so the sequence is fully determined by the
/// seed on every platform, and independent streams can be keyed on
/// arbitrary tuples with `derive`.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) noexcept : seed_(seed) {}

  /// Stream keyed on (seed, tag, index), e.g. (run seed, study_id, epoch).
  static RngStream derive(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform on [lo, hi]; returns lo when lo == hi.
  double uniform(double lo, double hi) noexcept;
  /// Uniform integer on [0, n); n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept;
  /// Standard normal via Box-Muller (one draw per call, two uniforms consumed).
  double normal() noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

}  // namespace efcxr
