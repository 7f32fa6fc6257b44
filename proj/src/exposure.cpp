#include "netbound/exposure.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace netbound {

namespace {

[[noreturn]] void throw_isolated(int node) {
  throw std::runtime_error("apply_exposure: node " + std::to_string(node) +
                           " is isolated; neighborhood exposure is undefined "
                           "(prune isolates or use a denser graph)");
}

void check_treatments(const Graph& g, const IntVector& t) {
  if (t.size() != g.node_count())
    throw std::invalid_argument("apply_exposure: treatment vector length " +
                                std::to_string(t.size()) + " does not match node count " +
                                std::to_string(g.node_count()));
  for (Eigen::Index i = 0; i < t.size(); ++i)
    if (t[i] != 0 && t[i] != 1)
      throw std::invalid_argument("apply_exposure: treatments must be binary");
}

}  // namespace

ExposureSpec ExposureSpec::threshold(double c) {
  ExposureSpec s;
  s.kind = ExposureKind::threshold;
  s.c = c;
  s.validate();
  return s;
}

ExposureSpec ExposureSpec::khop_mean(int r) {
  ExposureSpec s;
  s.kind = ExposureKind::khop_mean;
  s.r = r;
  s.validate();
  return s;
}

ExposureSpec ExposureSpec::weighted_mean(std::vector<std::vector<double>> weights) {
  ExposureSpec s;
  s.kind = ExposureKind::weighted_mean;
  s.weights = std::move(weights);
  s.validate();
  return s;
}

void ExposureSpec::validate() const {
  switch (kind) {
    case ExposureKind::threshold:
      if (!(c >= 0.0 && c <= 1.0))
        throw std::invalid_argument("ExposureSpec: threshold level must lie in [0,1]");
      break;
    case ExposureKind::khop_mean:
      if (r < 1) throw std::invalid_argument("ExposureSpec: khop radius must be >= 1");
      break;
    case ExposureKind::weighted_mean:
      for (const auto& row : weights)
        for (const double w : row)
          if (!(w >= 0.0) || !std::isfinite(w))
            throw std::invalid_argument(
                "ExposureSpec: weights must be nonnegative and finite");
      break;
    case ExposureKind::mean:
      break;
  }
}

std::vector<std::vector<double>> uniform_weights(const Graph& g) {
  std::vector<std::vector<double>> w(static_cast<std::size_t>(g.node_count()));
  for (int i = 0; i < g.node_count(); ++i) {
    const int n = g.degree(i);
    if (n > 0) w[static_cast<std::size_t>(i)].assign(static_cast<std::size_t>(n), 1.0 / n);
  }
  return w;
}

std::vector<std::vector<double>> perturbed_weights(const Graph& g, double eps,
                                                   std::uint64_t seed) {
  if (!(eps >= 0.0))
    throw std::invalid_argument("perturbed_weights: eps must be >= 0");
  Rng rng(seed);
  std::vector<std::vector<double>> w(static_cast<std::size_t>(g.node_count()));
  for (int i = 0; i < g.node_count(); ++i) {
    const int n = g.degree(i);
    if (n == 0) continue;
    auto& row = w[static_cast<std::size_t>(i)];
    row.resize(static_cast<std::size_t>(n));
    const double base = 1.0 / n;
    for (auto& wij : row) wij = std::max(0.0, rng.uniform(base - eps, base + eps));
  }
  return w;
}

ExposureVector apply_exposure(const ExposureSpec& spec, const Graph& g,
                              const IntVector& t) {
  spec.validate();
  check_treatments(g, t);
  const int n_nodes = g.node_count();
  ExposureVector out;
  out.values.resize(n_nodes);

  switch (spec.kind) {
    case ExposureKind::mean: {
      for (int i = 0; i < n_nodes; ++i) {
        const int deg = g.degree(i);
        if (deg == 0) throw_isolated(i);
        auto [lo, hi] = g.neighbors(i);
        int count = 0;
        for (const int* p = lo; p != hi; ++p) count += t[*p];
        out.values[i] = static_cast<double>(count) / deg;
      }
      out.continuous = false;
      break;
    }
    case ExposureKind::threshold: {
      for (int i = 0; i < n_nodes; ++i) {
        double share = 0.0;
        if (spec.r > 1) {
          const auto hood = khop_neighbors(g, i, spec.r);
          if (hood.empty()) throw_isolated(i);
          int count = 0;
          for (const int j : hood) count += t[j];
          share = static_cast<double>(count) / static_cast<double>(hood.size());
        } else {
          const int deg = g.degree(i);
          if (deg == 0) throw_isolated(i);
          auto [lo, hi] = g.neighbors(i);
          int count = 0;
          for (const int* p = lo; p != hi; ++p) count += t[*p];
          share = static_cast<double>(count) / deg;
        }
        out.values[i] = (share >= spec.c) ? 1.0 : 0.0;
      }
      out.continuous = false;
      break;
    }
    case ExposureKind::weighted_mean: {
      if (spec.weights.size() != static_cast<std::size_t>(n_nodes))
        throw std::invalid_argument(
            "apply_exposure: weight rows do not match node count");
      for (int i = 0; i < n_nodes; ++i) {
        const int deg = g.degree(i);
        if (deg == 0) throw_isolated(i);
        const auto& row = spec.weights[static_cast<std::size_t>(i)];
        if (row.size() != static_cast<std::size_t>(deg))
          throw std::invalid_argument("apply_exposure: weight row " + std::to_string(i) +
                                      " does not match degree");
        auto [lo, hi] = g.neighbors(i);
        double z = 0.0;
        for (std::size_t k = 0; lo + k != hi; ++k) z += row[k] * t[lo[k]];
        out.values[i] = z;
      }
      out.continuous = true;
      break;
    }
    case ExposureKind::khop_mean: {
      for (int i = 0; i < n_nodes; ++i) {
        const auto hood = khop_neighbors(g, i, spec.r);
        if (hood.empty()) throw_isolated(i);
        int count = 0;
        for (const int j : hood) count += t[j];
        out.values[i] = static_cast<double>(count) / static_cast<double>(hood.size());
      }
      out.continuous = false;
      break;
    }
  }
  return out;
}

ExposureSupport exposure_support(const ExposureSpec& spec, const Graph& g) {
  spec.validate();
  const int n_nodes = g.node_count();
  ExposureSupport s;
  switch (spec.kind) {
    case ExposureKind::mean: {
      s.grids.resize(static_cast<std::size_t>(n_nodes));
      for (int i = 0; i < n_nodes; ++i) {
        const int deg = g.degree(i);
        auto& grid = s.grids[static_cast<std::size_t>(i)];
        for (int k = 0; k <= deg; ++k)
          grid.push_back(deg > 0 ? static_cast<double>(k) / deg : 0.0);
      }
      break;
    }
    case ExposureKind::threshold: {
      s.grids.assign(static_cast<std::size_t>(n_nodes), {0.0, 1.0});
      break;
    }
    case ExposureKind::khop_mean: {
      s.grids.resize(static_cast<std::size_t>(n_nodes));
      for (int i = 0; i < n_nodes; ++i) {
        const auto hood = khop_neighbors(g, i, spec.r);
        const int m = static_cast<int>(hood.size());
        auto& grid = s.grids[static_cast<std::size_t>(i)];
        for (int k = 0; k <= m; ++k)
          grid.push_back(m > 0 ? static_cast<double>(k) / m : 0.0);
      }
      break;
    }
    case ExposureKind::weighted_mean: {
      s.continuous = true;
      s.lo = 0.0;
      s.hi = 0.0;
      for (const auto& row : spec.weights) {
        double total = 0.0;
        for (const double w : row) total += w;
        s.hi = std::max(s.hi, total);
      }
      if (s.hi == 0.0) s.hi = 1.0;
      break;
    }
  }
  return s;
}

}  // namespace netbound
