#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <thread>
#include <vector>

/// \file core.hpp
/// Shared low-level utilities: a deterministic, splittable RNG, portable
/// samplers, compensated summation, and a worker-count-independent
/// parallel map. Everything downstream builds on these so that repeated
/// runs with the same seed are bit-identical regardless of thread count.

namespace netbound {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IntVector = Eigen::VectorXi;

/// SplitMix64 mixer; used both as a tiny standalone generator and to
/// derive independent child seeds from a (seed, stream) pair.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Deterministic RNG (xoshiro256**). Sampling routines avoid
/// std::*_distribution on purpose: their output is implementation
/// defined, which would break byte-identical result files.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (int i = 0; i < 4; ++i) s_[i] = splitmix64(sm);
  }

  /// Child generator for an independent stream; derivation is pure
  /// mixing, so (seed, k) and (seed, k') streams never collide by
  /// construction of SplitMix64.
  Rng child(std::uint64_t stream) const {
    std::uint64_t sm = s_[0] ^ (0xA0761D6478BD642FULL * (stream + 1));
    return Rng(splitmix64(sm));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (pair cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection sampling removes modulo bias; the loop terminates fast
    // because the acceptance region covers at least half of 2^64.
    const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  /// Fisher-Yates shuffle with this generator (std::shuffle is
  /// implementation defined, same portability concern as above).
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// Positive part (a)_+.
template <typename Scalar>
inline Scalar pos(Scalar a) {
  return a > Scalar(0) ? a : Scalar(0);
}

/// Division with the 0/0 -> 0 convention used in the vacuous-bound
/// limits (e.g. gamma_u / b_minus when alpha = 1 forces gamma_u = 0).
template <typename Scalar>
inline Scalar safe_div(Scalar num, Scalar den) {
  if (num == Scalar(0)) return Scalar(0);
  return num / den;
}

template <typename Scalar>
inline Scalar clamp(Scalar v, Scalar lo, Scalar hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

/// Inverse logit.
template <typename Scalar>
inline Scalar logistic(Scalar u) {
  if (u >= Scalar(0)) {
    const Scalar e = std::exp(-u);
    return Scalar(1) / (Scalar(1) + e);
  }
  const Scalar e = std::exp(u);
  return e / (Scalar(1) + e);
}

/// Standard normal pdf.
inline double norm_pdf(double u) {
  return std::exp(-0.5 * u * u) / std::sqrt(2.0 * M_PI);
}

/// Standard normal cdf via erfc (double precision accurate).
inline double norm_cdf(double u) { return 0.5 * std::erfc(-u / std::sqrt(2.0)); }

/// Standard normal quantile (Acklam's rational approximation polished
/// by one Newton step; |error| < 1e-13 on (1e-300, 1-1e-16)).
double norm_quantile(double p);

/// Pairwise (cascade) summation: O(log n) error growth and a fixed
/// association order, so reductions do not depend on worker count.
double pairwise_sum(const double* data, std::size_t n);

inline double pairwise_sum(const std::vector<double>& v) {
  return pairwise_sum(v.data(), v.size());
}

inline double pairwise_sum(const Vector& v) {
  return pairwise_sum(v.data(), static_cast<std::size_t>(v.size()));
}

inline double mean(const Vector& v) {
  if (v.size() == 0) throw std::invalid_argument("mean: empty vector");
  return pairwise_sum(v) / static_cast<double>(v.size());
}

/// Unbiased sample variance (n-1 denominator), deterministic order.
double sample_variance(const Vector& v);

/// Number of workers to use: explicit argument if > 0, else the
/// NETBOUND_WORKERS environment variable, else hardware concurrency.
int resolve_workers(int requested);

/// Runs fn(i) for i in [0, n) on a pool of workers. Tasks are
/// distributed by atomic counter; fn must write only to its own slot
/// of any shared output, which keeps results independent of the
/// worker count and of scheduling order.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace netbound
