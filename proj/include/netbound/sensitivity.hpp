#pragma once

#include "netbound/core.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

/// \file sensitivity.hpp
/// Turns a declared misspecification model into the exposure-propensity
/// ratio bounds b-(z,x) <= p(g* = z | x) / p(g = z | x) <= b+(z,x) and
/// the derived tail levels alpha+-. Three constructions are supported:
/// weight slack for weighted means, level slack for thresholds, and
/// user-specified constants or tables (marginal-sensitivity style).

namespace netbound {

enum class MisspecKind { weighted_mean, threshold, msm };

/// Candidate policy for the inf in the weighted-mean lower bound. The
/// interval endpoints contract so fast in s that candidates with an
/// empty (zero-probability) numerator appear for every z > 0 once
/// eps > 0; taking them literally drives b- to 0 and makes every bound
/// vacuous. The default therefore skips zero-numerator candidates;
/// the literal reading remains available behind this switch.
enum class WeightedMeanInfPolicy { skip_empty_numerators, literal };

/// User-supplied per-(z, x-bin) bound table for the msm setting.
/// x is binned by its first coordinate into n_bins equal-width bins
/// over [x_lo, x_hi].
struct MsmTable {
  std::vector<double> z_levels;  // distinct, ascending
  int n_bins = 1;
  double x_lo = -1.0;
  double x_hi = 1.0;
  std::vector<std::pair<double, double>> cells;  // [z_index * n_bins + bin]

  /// Parses CSV with header z,x_bin,b_minus,b_plus. Every (z, bin)
  /// combination must be present exactly once.
  static MsmTable load_csv(std::istream& in);
  static MsmTable load_csv_file(const std::string& path);

  std::pair<double, double> lookup(double z, double x_first) const;
};

/// Declared misspecification model plus the sensitivity-sweep factor.
/// factor scales the slack (weighted_mean, threshold) or exponentiates
/// the gammas (msm), so factor 0 always collapses to b+- == 1.
struct MisspecModel {
  MisspecKind kind = MisspecKind::msm;
  double eps = 0.0;          // weight slack or threshold level slack
  double c = 0.5;            // assumed threshold level
  double gamma_minus = 1.0;  // msm constants
  double gamma_plus = 1.0;
  std::optional<MsmTable> table;
  double factor = 1.0;
  WeightedMeanInfPolicy inf_policy = WeightedMeanInfPolicy::skip_empty_numerators;

  static MisspecModel weighted_mean(double eps, double factor = 1.0);
  static MisspecModel threshold(double eps, double c, double factor = 1.0);
  static MisspecModel msm(double gamma_minus, double gamma_plus, double factor = 1.0);

  void validate() const;

  /// Slack after factor scaling, clamped into the model's admissible
  /// range (degree-dependent for weighted means).
  double scaled_eps(int degree) const;

  /// (gamma-^factor, gamma+^factor) for the constant msm model.
  std::pair<double, double> scaled_gammas() const;
};

/// Ratio-bound functions of z for one conditioning context (one node,
/// or one covariate profile). Count-based constructions produce a
/// finite z grid; msm produces constants. b- lies in [0, 1] (0 marks
/// the vacuous limit and is handled by the 0/0 -> 0 convention
/// downstream), b+ in [1, inf).
struct RatioBounds {
  std::vector<double> z_grid;  // empty => constant in z
  std::vector<double> bm;      // aligned with z_grid, or size 1
  std::vector<double> bp;

  static RatioBounds constants(double b_minus, double b_plus);

  bool constant() const { return z_grid.empty(); }
  double b_minus(double z) const;
  double b_plus(double z) const;

 private:
  std::size_t index_of(double z) const;
};

/// Tail levels alpha+-(z) derived from RatioBounds via
/// alpha+- = (1 - b-+) b+- / (b+- - b-+), with the 1/2 branch when
/// b- == b+.
struct TailLevel {
  std::vector<double> z_grid;
  std::vector<double> alpha_plus;
  std::vector<double> alpha_minus;

  bool constant() const { return z_grid.empty(); }
  double a_plus(double z) const;
  double a_minus(double z) const;
};

/// Exact pmf of a sum of independent Bernoulli(probs[j]) counts via
/// dynamic-programming convolution; result has length probs.size()+1
/// and sums to 1 within 1e-12.
Vector poisson_binomial_pmf(const std::vector<double>& probs);

/// Weighted-mean construction (weight slack eps, node degree n,
/// treated-neighbor count pmf given x). Evaluates the inf/sup over
/// s in {0, 1/n, ..., z} of interval-probability ratios with endpoints
/// n s / (1 -+ eps n) and n z / (1 +- eps n), rounded to integer
/// counts (ceil lower, floor upper). Throws a positivity error when
/// every denominator is zero at some grid z.
RatioBounds ratio_bounds_weighted_mean(
    double eps, int n, const Vector& count_pmf,
    WeightedMeanInfPolicy policy = WeightedMeanInfPolicy::skip_empty_numerators);

/// Threshold construction: survival-probability ratios at thresholds
/// ceil(n (c +- eps)) against ceil(n c) for z = 1, complements for
/// z = 0. Throws a positivity error when P(N >= ceil(n c)) is 0 or 1.
RatioBounds ratio_bounds_threshold(double eps, double c, int n, const Vector& count_pmf);

/// User-specified constants b- == gamma_minus, b+ == gamma_plus.
RatioBounds ratio_bounds_msm(double gamma_minus, double gamma_plus);

/// Table-backed msm bounds resolved at one covariate profile.
RatioBounds ratio_bounds_msm_table(const MsmTable& table, double x_first,
                                   double factor = 1.0);

/// Dispatches on the model kind; degree and count_pmf feed the
/// count-based constructions, x_first the table lookup.
RatioBounds ratio_bounds_for_model(const MisspecModel& model, int degree,
                                   const Vector& count_pmf, double x_first = 0.0);

/// Tail levels for every z of rb.
TailLevel alpha_levels(const RatioBounds& rb);

/// Scalar alpha at one (b-, b+) pair; alpha_plus if upper, else
/// alpha_minus.
double alpha_level(double b_minus, double b_plus, bool upper);

/// Theorem-5 sharpness condition for discrete Z: the bounds are sharp
/// when 1/b+ >= pi_g(z|x). The estimator computes bounds regardless
/// and flags violations through this predicate.
inline bool sharpness_condition_holds(double b_plus, double pi_g) {
  return 1.0 / b_plus >= pi_g - 1e-12;
}

}  // namespace netbound
