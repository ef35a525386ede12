#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace ustatlab {

/// Mixes two 64-bit words into one; used to derive stream keys such as
/// hash(n, replicate) so that parallel replicates never share a stream.
std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b);

/// Counter-based random stream.
///
/// Draw k of stream (seed, stream_id) is a pure function of
/// (seed, stream_id, k): SplitMix64's finalizer applied to key + k * golden.
/// Two streams with distinct ids are statistically independent and no
/// mutable state is shared between them, so replicates can run on any
/// number of threads and still produce identical values.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t next_u64();

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();

  /// Uniform on (0, 1).
  double uniform_open();

  /// Standard normal via Box-Muller (the sine branch is cached).
  double normal();

  bool bernoulli(double p);

  /// Index drawn from a cumulative distribution (last entry ~ 1).
  std::size_t from_cumulative(std::span<const double> cumulative);

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace ustatlab
