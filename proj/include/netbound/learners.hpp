#pragma once

#include "netbound/core.hpp"
#include "netbound/dgp.hpp"
#include "netbound/exposure.hpp"
#include "netbound/netgraph.hpp"
#include "netbound/sensitivity.hpp"

#include <array>
#include <functional>
#include <memory>
#include <vector>

/// \file learners.hpp
/// Nuisance estimation: K-fold plans, gradient-boosted shallow trees
/// (least squares, log loss, pinball), a dependency-free binned
/// regressor for d = 1, exposure propensities (analytic Poisson-
/// binomial or directly fitted), and the cross-fitting orchestration
/// that produces one NuisanceSet per fold.

namespace netbound {

using XRef = Eigen::Ref<const Vector>;

/// Balanced random partition of 0..n-1 into K folds.
struct FoldPlan {
  IntVector assignments;  // per-node fold index in 0..K-1
  int K = 0;
  std::uint64_t seed = 0;
};

FoldPlan make_folds(int n, int K, std::uint64_t seed);

enum class LearnerKind { gbt, binned };
enum class LearnerTask { regression, classification, quantile };

/// Config block for one learner. All defaults are shallow and cheap;
/// fitted models are deterministic given (data, spec) because tree
/// growth is greedy with no subsampling.
struct LearnerSpec {
  LearnerKind kind = LearnerKind::gbt;
  int depth = 2;
  int trees = 150;
  double learning_rate = 0.1;
  int bins = 32;
  int min_leaf = 10;
  double l2 = 1.0;
  std::uint64_t seed = 0;
};

/// Gradient-boosted trees over binned features. Regression boosts
/// least squares with Newton leaf values; classification boosts log
/// loss (predict() returns a probability); quantile boosts pinball
/// loss with per-row levels (leaf values solve the weighted quantile
/// first-order condition exactly).
class GbtModel {
 public:
  static GbtModel fit(const Matrix& x, const Vector& y, const Vector& weights,
                      LearnerTask task, const Vector& alpha, const LearnerSpec& spec);

  double predict(const XRef& x) const;
  Vector predict_many(const Matrix& x) const;

 private:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };
  double raw_score(const XRef& x) const;

  std::vector<std::vector<Node>> trees_;
  std::vector<std::vector<double>> bin_edges_;  // per feature
  double base_ = 0.0;
  double learning_rate_ = 0.1;
  LearnerTask task_ = LearnerTask::regression;
};

/// Histogram regressor over the first covariate (d = 1 fallback):
/// equal-width bins carrying a weighted mean, clipped probability, or
/// weighted quantile; empty bins borrow from the nearest filled one.
class BinnedModel {
 public:
  static BinnedModel fit(const Matrix& x, const Vector& y, const Vector& weights,
                         LearnerTask task, const Vector& alpha, const LearnerSpec& spec);
  double predict(const XRef& x) const;

 private:
  double lo_ = 0.0, hi_ = 1.0;
  std::vector<double> values_;
  LearnerTask task_ = LearnerTask::regression;
};

/// Uniform fitted-model handle (either backend) with value semantics.
class FittedModel {
 public:
  FittedModel() = default;
  static FittedModel fit(const Matrix& x, const Vector& y, const Vector& weights,
                         LearnerTask task, const Vector& alpha, const LearnerSpec& spec);
  double predict(const XRef& x) const;

 private:
  std::shared_ptr<const GbtModel> gbt_;
  std::shared_ptr<const BinnedModel> binned_;
};

/// Binary classifier for pi_t(x) with overlap clipping to
/// [eps_clip, 1 - eps_clip]. Throws a degenerate-fit error when the
/// training treatments are single-class.
class PropensityModel {
 public:
  static PropensityModel fit(const Matrix& x, const IntVector& t,
                             const LearnerSpec& spec, double eps_clip);
  /// Injected ground truth (used by oracle-driven tests).
  static PropensityModel exact(std::function<double(XRef)> fn, double eps_clip);
  double predict(const XRef& x) const;
  double eps_clip() const { return eps_clip_; }

 private:
  FittedModel model_;
  std::function<double(XRef)> exact_;
  double eps_clip_ = 0.01;
};

enum class ExposurePropensityMode { analytic, direct };

/// Conditional exposure propensity pi_g(z | x). Analytic mode maps
/// per-neighbor unit propensities through the exposure mapping by
/// Poisson-binomial convolution (exact under conditionally independent
/// treatments); it is indexed by node because the conditioning runs
/// through the neighborhood. Direct mode fits the conditional law from
/// (z, x) samples: a normalized one-vs-rest classifier bank for
/// discrete z, a per-x-bin Gaussian mixture density for continuous z.
class ExposurePropensity {
 public:
  static ExposurePropensity analytic(const Graph& g, const ExposureSpec& spec,
                                     const std::vector<double>& unit_probs,
                                     double eps_clip);
  static ExposurePropensity direct_discrete(const Matrix& x, const Vector& z,
                                            const LearnerSpec& spec, double eps_clip);
  static ExposurePropensity direct_continuous(const Matrix& x, const Vector& z,
                                              int components, int x_bins,
                                              double eps_clip);

  /// pmf value (discrete) or density (continuous) at (z, x), clipped
  /// below at eps_clip. Analytic mode requires the node index; direct
  /// modes ignore it.
  double evaluate(int node, double z, const XRef& x) const;

  bool continuous() const { return continuous_; }

  /// Analytic-mode support: the exact (z, probability) atoms of one
  /// node. Throws for direct modes.
  const std::vector<std::pair<double, double>>& node_pmf(int node) const;

 private:
  bool continuous_ = false;
  double eps_clip_ = 0.01;
  // analytic
  std::vector<std::vector<std::pair<double, double>>> node_atoms_;
  // direct discrete
  std::vector<double> levels_;
  std::vector<FittedModel> level_models_;
  // direct continuous: per x-bin mixture {weight, mean, sd} triples
  double x_lo_ = 0.0, x_hi_ = 1.0;
  std::vector<std::vector<std::array<double, 3>>> mixtures_;
};

/// Pinball-loss quantile fit on a localized subset. alpha may vary by
/// row (the tail level depends on (z, x) through b+-). Weights carry
/// the kernel localization for continuous Z.
FittedModel fit_quantile(const Matrix& x, const Vector& y, const Vector& weights,
                         const Vector& alpha, const LearnerSpec& spec);

/// Regressions of (Y - Q)+ and (Q - Y)+ on x over the localized
/// subset; served predictions are clamped at 0.
std::pair<FittedModel, FittedModel> fit_tail_moments(const Matrix& x, const Vector& y,
                                                     const Vector& weights,
                                                     const Vector& q_hat,
                                                     const LearnerSpec& spec);

/// Propensity fit per the spec op name; thin wrapper over
/// PropensityModel::fit.
PropensityModel fit_unit_propensity(const Matrix& x, const IntVector& t,
                                    const LearnerSpec& spec, double eps_clip = 0.01);

/// All nuisances served for one target (t, z), trained on one fold
/// complement. Closures take the node index (analytic exposure
/// propensities condition on the neighborhood) plus the row covariates;
/// quantile and tail closures additionally take (t, z) and validate
/// them against the trained target for discrete Z.
struct NuisanceSet {
  double t_target = 1.0;
  double z_target = 0.0;
  bool continuous_z = false;
  double eps_clip = 0.01;
  int trained_on = -1;  // fold whose complement trained this set

  std::function<double(int, XRef)> unit_propensity;
  std::function<double(int, double, XRef)> exposure_propensity;  // (node, z, x)
  std::function<double(int, double, double, XRef)> quantile_upper;
  std::function<double(int, double, double, XRef)> quantile_lower;
  std::function<double(int, double, double, XRef)> tail_up_upper;
  std::function<double(int, double, double, XRef)> tail_up_lower;
  std::function<double(int, double, double, XRef)> tail_low_upper;
  std::function<double(int, double, double, XRef)> tail_low_lower;
};

/// Learner configuration bundle for cross-fitting.
struct NuisanceLearnerSpecs {
  LearnerSpec propensity;
  LearnerSpec quantile;
  LearnerSpec regression;
  ExposurePropensityMode exposure_mode = ExposurePropensityMode::analytic;
};

/// Cross-fitted nuisances plus the fold-specific ratio bounds
/// (count-based constructions depend on the fold's fitted unit
/// propensities, so their provenance must match).
struct CrossfitNuisances {
  FoldPlan folds;
  std::vector<NuisanceSet> sets;                  // K entries
  std::vector<std::vector<RatioBounds>> bounds;   // K x node_count
};

/// Algorithm-1 nuisance stage: for each fold k, fits every nuisance on
/// the complement of fold k for target (t, z). h is the kernel
/// bandwidth (continuous Z only). Quantile levels alpha+- are
/// evaluated per training row from the fold's ratio bounds.
CrossfitNuisances crossfit_nuisances(const Dataset& data, const Graph& g,
                                     const ExposureSpec& spec_assumed,
                                     const MisspecModel& misspec, int K, double t,
                                     double z, double h,
                                     const NuisanceLearnerSpecs& specs,
                                     std::uint64_t seed, double eps_clip = 0.01);

/// Count-based ratio bounds for every node, built from a unit
/// propensity function (fitted or exact). For msm models the count
/// pmf is irrelevant and the per-node bounds collapse to the constant
/// or table lookup.
std::vector<RatioBounds> build_node_bounds(const MisspecModel& model, const Graph& g,
                                           const ExposureSpec& spec_assumed,
                                           const Matrix& x,
                                           const std::function<double(int, XRef)>& pi_t);

}  // namespace netbound
