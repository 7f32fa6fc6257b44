#pragma once

#include "netbound/core.hpp"
#include "netbound/dgp.hpp"
#include "netbound/exposure.hpp"
#include "netbound/learners.hpp"
#include "netbound/netgraph.hpp"
#include "netbound/sensitivity.hpp"

#include <array>
#include <string>
#include <vector>

/// \file estimator.hpp
/// Closed-form CAPO bounds, orthogonal pseudo-outcomes, cross-fitted
/// APO/CAPO bound estimation with kernel localization for continuous
/// exposures, effect bounds on differenced pseudo-outcomes, and the
/// plug-in comparison estimator.

namespace netbound {

enum class KernelKind { epanechnikov, gaussian, box };

struct KernelSpec {
  KernelKind shape = KernelKind::epanechnikov;
  double h = 0.1;  // bandwidth, > 0 for continuous exposures
};

/// K(u): Epanechnikov 0.75(1-u^2) on |u|<=1, standard normal density,
/// or box 0.5 on |u|<=1. Each integrates to 1.
double kernel_value(KernelKind shape, double u);

/// omega_{z,h}: exact-match indicator for discrete exposures, scaled
/// kernel (1/h) K((z_obs - z_target)/h) for continuous ones.
double localization_weight(bool discrete, double z_obs, double z_target,
                           const KernelSpec& kernel);

/// Sharp CAPO bound endpoint from the quantile and the two tail
/// moments: upper is Q + gamma_u/b- - gamma_l/b+, lower swaps the two
/// denominators. Divisions follow the 0/0 -> 0 convention so the
/// vacuous limit b- = 0 (where gamma_u at the max-quantile is 0)
/// stays finite.
double capo_closed_form(bool upper, double q, double gamma_up, double gamma_lo,
                        double b_minus, double b_plus);

/// One row's orthogonal pseudo-outcome for the chosen endpoint. The
/// plug-in part evaluates nuisances and b+- at the target z; the
/// correction term (active when the row's treatment matches t and the
/// localization weight is positive) evaluates them at the observed
/// exposure. Throws a numeric error naming the row if any intermediate
/// is non-finite.
double pseudo_outcome(bool upper, const Dataset& data, int row, const NuisanceSet& eta,
                      const RatioBounds& rb, double t, double z,
                      const KernelSpec& kernel, bool discrete);

/// Per-node pseudo-outcomes for one target (t, z), restricted to the
/// subpopulation of nodes whose exposure support contains z (the whole
/// population when Z is continuous). fold_of records which nuisance
/// fold served each row.
struct PseudoOutcomeVector {
  double t = 1.0;
  double z = 0.0;
  bool continuous = false;
  double h = 0.0;
  std::vector<int> rows;  // node ids, ascending
  Vector phi_plus;
  Vector phi_minus;
  IntVector fold_of;
  double attainable_share = 1.0;
  double clipped_share = 0.0;  // corrected rows served a clipped pi_g
  bool sharp = true;           // 1/b+ >= pi_g(z|x) held at every row
};

/// Cross-fitted pseudo-outcome computation (row-parallel, fixed
/// reduction order). correction = false drops the orthogonal term and
/// yields the plug-in estimator's per-row values.
PseudoOutcomeVector compute_pseudo_outcomes(const Dataset& data, const Graph& g,
                                            const ExposureSpec& spec_assumed,
                                            const CrossfitNuisances& cf, double t,
                                            double z, const KernelSpec& kernel,
                                            bool correction = true, int workers = 0);

/// APO bound estimates with plug-in variances and per-endpoint 95%
/// normal CIs.
struct ApoBounds {
  double lo = 0.0, hi = 0.0;
  double var_lo = 0.0, var_hi = 0.0;
  std::array<double, 2> ci_lo{0.0, 0.0};
  std::array<double, 2> ci_hi{0.0, 0.0};
  int n_used = 0;
  double attainable_share = 1.0;
  double clipped_share = 0.0;
  bool sharp = true;
};

ApoBounds estimate_apo_bounds(const PseudoOutcomeVector& pv);

/// Second-stage CAPO curves: regressions of phi+- on x, evaluated on a
/// grid, with pointwise min/max crossing repair.
struct CapoCurve {
  Matrix x_grid;
  Vector lo;
  Vector hi;
};

CapoCurve estimate_capo_bounds(const PseudoOutcomeVector& pv, const Dataset& data,
                               const Matrix& x_grid, const LearnerSpec& spec);

/// Effect bounds tau+ = mean(phi+_a - phi-_b), tau- = mean(phi-_a -
/// phi+_b) over the rows common to both arms, with CLT intervals from
/// the differenced pseudo-outcomes.
struct EffectBounds {
  EffectKind kind = EffectKind::direct;
  double t = 1.0, z = 0.0;
  double t_prime = 0.0, z_prime = 0.0;
  double lo = 0.0, hi = 0.0;
  double var_lo = 0.0, var_hi = 0.0;
  std::array<double, 2> ci_lo{0.0, 0.0};
  std::array<double, 2> ci_hi{0.0, 0.0};
  int n_used = 0;
};

EffectBounds effect_bounds(EffectKind kind, const PseudoOutcomeVector& a,
                           const PseudoOutcomeVector& b);

/// Plug-in estimator: Theorem-1 substitution without the orthogonal
/// correction; the comparison arm of the convergence experiment.
ApoBounds plugin_estimate(const Dataset& data, const Graph& g,
                          const ExposureSpec& spec_assumed, const CrossfitNuisances& cf,
                          double t, double z, const KernelSpec& kernel);

/// Full result bundle for one (model, factor, target).
struct BoundResult {
  double t = 1.0;
  double z = 0.0;
  std::string model;
  double factor = 1.0;
  ApoBounds apo;
  std::vector<EffectBounds> effects;
  Matrix capo_x;  // evaluation grid, possibly empty
  Vector capo_lo;
  Vector capo_hi;

  std::string to_json(int indent = -1) const;
};

const char* effect_kind_name(EffectKind kind);

}  // namespace netbound
