#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace corrfuse {

namespace detail {

/// splitmix64 finalizer; good avalanche, used for seed mixing only.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a;
  const std::uint64_t h = splitmix64(s);
  s ^= b + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return splitmix64(s);
}

}  // namespace detail

/// Deterministic random stream.  Equal (seed, stream) pairs produce
/// bit-identical draws on every platform we target; derive() spawns an
/// independent child stream per logical task (chain, test set, example), so
/// results do not depend on scheduling or on how work is split across
/// threads.
class RngState {
 public:
  explicit RngState(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream), engine_(detail::mix(seed, stream)) {}

  /// Child stream for task `task_id`.  Depends only on (seed, stream,
  /// task_id), never on how much of this stream has been consumed.
  RngState derive(std::uint64_t task_id) const {
    return RngState(detail::mix(seed_, stream_), task_id + 1);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform draw in the open interval (0, 1): 53-bit mantissa, offset by
  /// half an ulp so 0 and 1 are unreachable and logs stay finite.
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via the Marsaglia polar method; the second variate of
  /// each accepted pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double scale = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * scale;
    has_spare_ = true;
    return u * scale;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace corrfuse
