#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace robust_cate {

// Deterministic, platform-independent RNG. std::mt19937_64 distributions are
// implementation-defined, so all sampling here is hand-rolled on top of
// xoshiro256++ to keep seeded runs bit-identical across toolchains.
namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

/// Mixes a master seed with stream identifiers, so concurrent components
/// (chains, folds, cells) get independent deterministic streams.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                 std::uint64_t substream = 0) {
  std::uint64_t s = master ^ 0xa0761d6478bd642fULL;
  detail::splitmix64(s);
  s ^= stream * 0xe7037ed1a0b428dbULL;
  detail::splitmix64(s);
  s ^= substream * 0x8ebc6af09c88c6e3ULL;
  return detail::splitmix64(s);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = detail::splitmix64(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result =
        detail::rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  /// Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform on (0, 1]; safe as a log argument.
  double uniform_pos() { return 1.0 - uniform(); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t uniform_index(std::uint64_t n) {
    // Lemire-style rejection-free enough for test-scale n; modulo bias is
    // negligible at n << 2^64 but we reject to keep streams exact.
    const std::uint64_t threshold = (~n + 1) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    // Box-Muller, one value per pair of uniforms (no cached state).
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double exponential() { return -std::log(uniform_pos()); }

  /// Marsaglia-Tsang for shape >= 1, boosted below 1.
  double gamma(double shape) {
    if (shape < 1.0) {
      const double u = uniform_pos();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform_pos();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
        return d * v;
      }
    }
  }

  double chi_squared(double dof) { return 2.0 * gamma(0.5 * dof); }

  double student_t(double dof) {
    return normal() / std::sqrt(chi_squared(dof) / dof);
  }

  /// Pareto with minimum x_m and tail index alpha.
  double pareto(double alpha, double x_m = 1.0) {
    return x_m * std::pow(uniform_pos(), -1.0 / alpha);
  }

  /// Symmetric alpha-stable via the Chambers-Mallows-Stuck transform
  /// (beta = 0, unit scale). alpha = 2 reduces to N(0, 2).
  double alpha_stable(double alpha) {
    const double v = uniform(-0.5 * std::numbers::pi, 0.5 * std::numbers::pi);
    const double w = exponential();
    if (std::abs(alpha - 1.0) < 1e-12) {
      return std::tan(v);
    }
    const double a = alpha * v;
    return (std::sin(a) / std::pow(std::cos(v), 1.0 / alpha)) *
           std::pow(std::cos(v - a) / w, (1.0 - alpha) / alpha);
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_index(i)]);
    }
  }

 private:
  std::uint64_t state_[4];
};

}  // namespace robust_cate
