#pragma once

#include <cmath>
#include <cstdint>

namespace boxip {

/// Counter-based random stream: stateless SplitMix64 mix of (key, counter).
/// Deterministic across platforms; cheap to fork into independent substreams.
class RngStream {
 public:
  explicit RngStream(uint64_t seed, uint64_t stream = 0)
      : key_(mix(seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1)))), counter_(0) {}

  uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * (++counter_)); }

  /// Uniform in [0, 1).
  double next_double() { return (next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in {0, 1, ..., n-1} via rejection-free Lemire reduction.
  uint64_t next_below(uint64_t n) {
    // 128-bit multiply keeps the distribution exactly uniform enough for tests
    // (bias < 2^-64); exactness is not needed anywhere.
    unsigned __int128 m = (unsigned __int128)next_u64() * n;
    return (uint64_t)(m >> 64);
  }

  /// Standard normal via Box-Muller (deterministic given the stream).
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 6.283185307179586476925286766559 * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Independent substream derived from this stream's key.
  RngStream fork(uint64_t stream) const { return RngStream(key_, stream + 1); }

 private:
  static uint64_t mix(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t key_;
  uint64_t counter_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace boxip
