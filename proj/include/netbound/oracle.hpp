#pragma once

#include "netbound/core.hpp"
#include "netbound/dgp.hpp"
#include "netbound/exposure.hpp"
#include "netbound/netgraph.hpp"

#include <utility>
#include <vector>

/// \file oracle.hpp
/// Brute-force ground-truth computations used only by tests and
/// acceptance runs: variational scans, explicit worst-case (tilted)
/// distributions, exhaustive enumeration, and finite-population
/// truths. Deliberately slow and simple, and deliberately sharing no
/// logic with the estimator beyond elementary types; independence is
/// the point of an oracle.

namespace netbound {

/// Finite conditional outcome distribution: support y_1 < ... < y_m
/// with matching probabilities summing to 1.
struct DiscreteConditional {
  std::vector<double> support;
  std::vector<double> probs;

  void validate() const;
  double mean() const;
  /// F(y) = P(Y <= y).
  double cdf(double y) const;
  /// Left limit F(y-) = P(Y < y).
  double cdf_left(double y) const;
  /// inf{y in support | F(y) >= alpha}; clamps to the support ends.
  double quantile(double alpha) const;
};

struct ScanResult {
  double mu_plus = 0.0;
  double mu_minus = 0.0;
  double argmin_q_plus = 0.0;
  double argmax_q_minus = 0.0;
};

/// Dense-grid scan of the variational objectives
///   L+(q) = q + E[(Y-q)+]/b-  -  E[(q-Y)+]/b+   (mu+ = inf_q L+)
///   L-(q) = q + E[(Y-q)+]/b+  -  E[(q-Y)+]/b-   (mu- = sup_q L-)
/// over a uniform grid spanning [min support - 1, max support + 1]
/// plus every support atom (the optimizer of a discrete instance sits
/// at an atom, which uniform grids can miss).
ScanResult rockafellar_scan(const DiscreteConditional& dc, double b_minus,
                            double b_plus, int grid_size = 10000);

/// The explicit worst-case pmf P+ (upper = true) or P- achieving the
/// sharp bound: atoms strictly below the alpha level are scaled by
/// 1/b+ (upper) and strictly above by 1/b-, with the boundary atom
/// split between the two regimes. Requires b_minus > 0.
std::vector<double> tilted_pmf(const DiscreteConditional& dc, double b_minus,
                               double b_plus, bool upper);

/// Means of the two tilted distributions (mu+, mu-). Verifies that
/// each tilted pmf sums to 1 within 1e-10 and throws a construction
/// error otherwise, so a broken build fails loudly in tests.
std::pair<double, double> tilted_density_bound(const DiscreteConditional& dc,
                                               double b_minus, double b_plus);

/// Analytic truths against the realized covariate sample: psi(t,z) is
/// the average of m(t,z,x_i); mu(t,z,.) is evaluated on the supplied
/// x grid (one row per point); the canonical effects are anchored at
/// (t,z): direct (1,z)-(0,z), spillover (t,z)-(t,0), overall
/// (t,z)-(0,0).
struct PopulationTruth {
  double psi = 0.0;
  std::vector<double> mu_grid;
  double direct = 0.0;
  double spillover = 0.0;
  double overall = 0.0;
};

PopulationTruth finite_population_truth(const Dataset& data, const DgpConfig& cfg,
                                        double t, double z, const Matrix& x_grid);

/// Exact exposure distribution of one node by exhaustive enumeration
/// of all 2^m treatment patterns over the relevant neighborhood
/// (direct neighbors, or the k-hop set for khop_mean). Values within
/// 1e-12 of each other merge. Degree above 20 is refused.
std::vector<std::pair<double, double>> enumerate_exposure_distribution(
    const Graph& g, int node, const std::vector<double>& unit_probs,
    const ExposureSpec& spec);

/// Finite Gaussian location mixture with a common scale: the
/// continuous-outcome analogue of DiscreteConditional. This is the
/// exact conditional law of Y given (t, z, x) in the simulation DGPs
/// (one component per compatible treated-neighbor count), so it
/// supplies ground-truth quantiles and partial moments.
struct GaussianMixture {
  std::vector<double> weights;  // nonnegative, sum 1
  std::vector<double> means;
  double sd = 1.0;

  void validate() const;
  double mean() const;
  double cdf(double q) const;
  /// Inverse cdf by bisection; requires alpha in (0, 1).
  double quantile(double alpha) const;
  /// E[(Y - q)+] = sum_j w_j sd (phi(u_j) - u_j (1 - Phi(u_j))).
  double upper_partial(double q) const;
  /// E[(q - Y)+] = sum_j w_j sd (u_j Phi(u_j) + phi(u_j)).
  double lower_partial(double q) const;
};

/// Closed-form sharp CAPO bound endpoint for a Gaussian-mixture
/// conditional outcome under ratio bounds (b-, b+). Requires b- > 0:
/// the vacuous limit is unbounded on Gaussian support. The degenerate
/// tail levels (b- = 1 or b+ = 1) collapse to the mixture mean.
double mixture_capo_bound(const GaussianMixture& gm, double b_minus, double b_plus,
                          bool upper);

}  // namespace netbound
