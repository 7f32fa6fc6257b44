#pragma once

#include "netbound/core.hpp"
#include "netbound/netgraph.hpp"

#include <vector>

/// \file exposure.hpp
/// Exposure mappings Z = g(T_N): the analyst-assumed summary of the
/// neighborhood treatments and the (possibly different) true mapping
/// used by the simulator.

namespace netbound {

enum class ExposureKind { mean, weighted_mean, threshold, khop_mean };

/// Declares which mapping to apply. For weighted_mean the per-directed-
/// edge weights (i <- j) are stored aligned with the graph's sorted
/// neighbor lists: weights[i][k] multiplies the treatment of the k-th
/// neighbor of i. Asymmetric influence is representable this way even
/// though the graph itself is undirected.
struct ExposureSpec {
  ExposureKind kind = ExposureKind::mean;
  double c = 0.5;  // threshold level, in [0,1]
  int r = 1;       // neighborhood radius, >= 1 (khop_mean and threshold)
  std::vector<std::vector<double>> weights;  // weighted_mean only

  static ExposureSpec mean() { return {ExposureKind::mean, 0.5, 1, {}}; }
  static ExposureSpec threshold(double c);
  static ExposureSpec khop_mean(int r);
  static ExposureSpec weighted_mean(std::vector<std::vector<double>> weights);

  /// Validates invariants (threshold level range, weight positivity,
  /// radius); throws std::invalid_argument on violation.
  void validate() const;
};

/// Per-node exposure values plus whether the mapping's range is a
/// finite grid or a continuum (which decides indicator vs. kernel
/// localization downstream).
struct ExposureVector {
  Vector values;
  bool continuous = false;
};

/// Description of the exposure support: per-node finite grids for the
/// discrete mappings, an interval for weighted means with
/// heterogeneous weights.
struct ExposureSupport {
  bool continuous = false;
  double lo = 0.0, hi = 1.0;                 // meaningful when continuous
  std::vector<std::vector<double>> grids;    // per node when discrete
};

/// Uniform 1/n_i weights for every directed edge of g (the assumed
/// weighted mean that coincides with the plain mean).
std::vector<std::vector<double>> uniform_weights(const Graph& g);

/// True-mapping perturbation for the weighted-mean setting: each
/// weight drawn uniformly from [1/n - eps, 1/n + eps] (floored at 0),
/// used unnormalized so the admissible class is not shrunk.
std::vector<std::vector<double>> perturbed_weights(const Graph& g, double eps,
                                                   std::uint64_t seed);

/// Evaluates z_i = g(t_{N_i}) for every node. Throws a runtime error
/// naming the first isolated node when a neighborhood mapping meets a
/// degree-0 node (callers must prune isolates or use denser graphs).
ExposureVector apply_exposure(const ExposureSpec& spec, const Graph& g,
                              const IntVector& t);

/// Support of the mapping on this graph; see ExposureSupport.
ExposureSupport exposure_support(const ExposureSpec& spec, const Graph& g);

}  // namespace netbound
