#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string_view>

namespace stf {

/// Seeded pseudo-random stream. Every draw is produced from the raw 64-bit
/// engine output with fixed arithmetic, so an identical seed and call
/// sequence yields bit-identical values regardless of the standard library's
/// distribution implementations.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0);

  /// Independent stream derived from a base seed and a stream name
  /// ("init", "dropout", "augmentation", "shuffle", ...). An optional index
  /// separates e.g. per-epoch streams.
  static RngStream named(std::uint64_t seed, std::string_view name,
                         std::uint64_t index = 0);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  double normal(double mean, double stddev);
  /// Normal truncated to [mean - bound*stddev, mean + bound*stddev] by
  /// rejection.
  double truncated_normal(double mean, double stddev, double bound);
  /// Uniform integer on [0, n).
  std::size_t uniform_index(std::size_t n);
  bool bernoulli(double p);

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::optional<double> spare_normal_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace stf
