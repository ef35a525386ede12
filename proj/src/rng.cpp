#include "ustatlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ustatlab {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return mix64(mix64(a + kGolden) ^ (b + 0x632be59bd9b4e019ULL + (a << 6) + (a >> 2)));
}

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t stream_id)
    : key_(hash_combine(seed, stream_id)) {}

std::uint64_t RandomStream::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double RandomStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomStream::uniform_open() {
  return (static_cast<double>(next_u64() >> 12) + 0.5) * 0x1.0p-52;
}

double RandomStream::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  const double u1 = uniform_open();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  cached_normal_ = radius * std::sin(angle);
  has_cached_normal_ = true;
  return radius * std::cos(angle);
}

bool RandomStream::bernoulli(double p) { return uniform() < p; }

std::size_t RandomStream::from_cumulative(std::span<const double> cumulative) {
  const double u = uniform();
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  const auto idx = static_cast<std::size_t>(it - cumulative.begin());
  return std::min(idx, cumulative.size() - 1);
}

}  // namespace ustatlab
