#pragma once

#include "netbound/core.hpp"
#include "netbound/exposure.hpp"
#include "netbound/netgraph.hpp"

#include <iosfwd>
#include <string>

/// \file dgp.hpp
/// Synthetic data generation: covariates, logistic treatment
/// assignment, exposures under the true mapping g* and the assumed
/// mapping g, and outcomes Y = m(T, Z*, X) + noise. Ground-truth
/// effects are available in closed form because the outcome mean is
/// linear in (t, z).

namespace netbound {

enum class EffectKind { direct, spillover, overall };

struct DgpConfig {
  int d = 1;                     // covariate dimension
  Vector beta_t;                 // propensity coefficients; empty => 0.8/sqrt(d)
  double tau = 0.8;              // direct effect
  double delta = 0.6;            // spillover effect
  double gamma = 0.2;            // treatment-exposure interaction
  double noise_sd = 1.0;         // outcome noise sigma
  ExposureSpec spec_true;        // g*, drives the outcome
  ExposureSpec spec_assumed;     // g, what the analyst observes
  std::uint64_t seed = 0;

  /// beta_t with the default fill applied (constant 0.8/sqrt(d), which
  /// keeps the propensity variance comparable across dimensions).
  Vector resolved_beta() const;
};

/// Observed tuple per node. y is always generated from z_true
/// (network consistency); z_assumed exists purely for the analyst.
struct Dataset {
  Matrix x;                // N x d
  IntVector t;             // binary
  ExposureVector z_true;   // under g*
  ExposureVector z_assumed;  // under g
  Vector y;

  Eigen::Index size() const { return y.size(); }

  /// Columnar CSV with header node_id,x_0..x_{d-1},t,z_true,z_assumed,y;
  /// numeric fields carry 17 significant digits so round-trips are
  /// lossless.
  void save_csv(std::ostream& out) const;
  void save_csv_file(const std::string& path) const;
  static Dataset load_csv(std::istream& in);
  static Dataset load_csv_file(const std::string& path);
};

/// iid Uniform(-1, 1)^d covariates.
Matrix sample_covariates(int n, int d, std::uint64_t seed);

/// Logistic propensity logit^{-1}(beta' x), always in (0,1).
double true_propensity(const Eigen::Ref<const Vector>& x,
                       const Eigen::Ref<const Vector>& beta_t);

/// Independent Bernoulli(true_propensity(x_i)) draws.
IntVector assign_treatments(const Matrix& x, const Eigen::Ref<const Vector>& beta_t,
                            std::uint64_t seed);

/// Nonlinear covariate baseline f(x) = 0.6 tanh(x) + 0.4 sin(x) - 0.2 x^2,
/// applied per coordinate and summed.
double baseline_f(const Eigen::Ref<const Vector>& x);

/// m(t, z, x) = tau t + delta z + gamma t z + f(x).
double outcome_mean(const DgpConfig& cfg, double t, double z,
                    const Eigen::Ref<const Vector>& x);

/// Full pipeline: covariates -> treatments -> exposures under both
/// mappings -> outcomes from the TRUE exposure plus N(0, sigma^2) noise.
Dataset simulate(const DgpConfig& cfg, const Graph& g);

/// Closed-form effect; covariate-free because f(x) cancels in every
/// contrast. kind=direct requires z == z_prime (contrast in t alone),
/// kind=spillover requires t == t_prime.
double true_effect(const DgpConfig& cfg, EffectKind kind, double t, double z,
                   double t_prime, double z_prime);

}  // namespace netbound
