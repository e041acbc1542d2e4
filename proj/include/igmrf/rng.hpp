#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

namespace igmrf {

/// Counter-based random bit generator.
///
/// Output i of stream (seed, stream) is a SplitMix64 finalisation of
/// key(seed, stream) + (i + 1) * golden. The whole state is (key, counter), so
/// two generators built from the same seed and stream produce the same
/// sequence on every platform, and independent streams are obtained by
/// changing `stream` rather than by skipping ahead.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream), key_(finalize(seed ^ finalize(stream + kGolden))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return finalize(key_ + (++counter_) * kGolden); }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  /// A generator on a different stream of the same seed.
  CounterRng split(std::uint64_t stream) const { return CounterRng(seed_, stream_ * 0x100000001b3ULL + stream + 1); }

  /// Uniform on the open interval (0, 1).
  double uniform() {
    // 53 random bits, shifted off zero.
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() { return normal_(*this); }
  double normal(double mean, double sd) { return mean + sd * normal_(*this); }

  /// Gamma(shape, rate).
  double gamma(double shape, double rate) {
    return gamma_(*this, std::gamma_distribution<double>::param_type(shape, 1.0)) / rate;
  }

  /// Inverse gamma with density proportional to x^{-shape-1} exp(-scale / x).
  double inverse_gamma(double shape, double scale) { return scale / gamma_(*this, std::gamma_distribution<double>::param_type(shape, 1.0)); }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  static constexpr std::uint64_t finalize(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::gamma_distribution<double> gamma_{1.0, 1.0};
};

}  // namespace igmrf
