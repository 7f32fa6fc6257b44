#include "netbound/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace netbound {

void DiscreteConditional::validate() const {
  if (support.empty() || support.size() != probs.size())
    throw std::invalid_argument(
        "DiscreteConditional: support and probs must be nonempty and equal length");
  double total = 0.0;
  for (std::size_t k = 0; k < support.size(); ++k) {
    if (k > 0 && !(support[k] > support[k - 1]))
      throw std::invalid_argument("DiscreteConditional: support must be strictly increasing");
    if (!(probs[k] >= 0.0))
      throw std::invalid_argument("DiscreteConditional: probabilities must be >= 0");
    total += probs[k];
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw std::invalid_argument("DiscreteConditional: probabilities must sum to 1");
}

double DiscreteConditional::mean() const {
  double m = 0.0;
  for (std::size_t k = 0; k < support.size(); ++k) m += support[k] * probs[k];
  return m;
}

double DiscreteConditional::cdf(double y) const {
  double f = 0.0;
  for (std::size_t k = 0; k < support.size(); ++k)
    if (support[k] <= y) f += probs[k];
  return f;
}

double DiscreteConditional::cdf_left(double y) const {
  double f = 0.0;
  for (std::size_t k = 0; k < support.size(); ++k)
    if (support[k] < y) f += probs[k];
  return f;
}

double DiscreteConditional::quantile(double alpha) const {
  if (alpha <= 0.0) return support.front();
  double f = 0.0;
  for (std::size_t k = 0; k < support.size(); ++k) {
    f += probs[k];
    if (f >= alpha - 1e-15) return support[k];
  }
  return support.back();
}

namespace {

void check_band(double b_minus, double b_plus, bool positive_lower) {
  if (!(b_minus >= 0.0 && b_minus <= 1.0 + 1e-12 && b_plus >= 1.0 - 1e-12))
    throw std::invalid_argument("oracle: need 0 <= b- <= 1 <= b+");
  if (positive_lower && !(b_minus > 0.0))
    throw std::invalid_argument("oracle: this construction requires b- > 0");
}

double alpha_of(double b_minus, double b_plus, bool upper) {
  if (std::abs(b_plus - b_minus) < 1e-12) return 0.5;
  const double a = upper ? (1.0 - b_minus) * b_plus / (b_plus - b_minus)
                         : (b_plus - 1.0) * b_minus / (b_plus - b_minus);
  return std::min(1.0, std::max(0.0, a));
}

}  // namespace

ScanResult rockafellar_scan(const DiscreteConditional& dc, double b_minus,
                            double b_plus, int grid_size) {
  dc.validate();
  check_band(b_minus, b_plus, false);
  if (grid_size < 2) throw std::invalid_argument("rockafellar_scan: grid too small");

  const double lo = dc.support.front() - 1.0;
  const double hi = dc.support.back() + 1.0;
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(grid_size) + dc.support.size());
  for (int i = 0; i < grid_size; ++i)
    grid.push_back(lo + (hi - lo) * i / (grid_size - 1.0));
  grid.insert(grid.end(), dc.support.begin(), dc.support.end());

  auto upper_tail = [&](double q) {
    double e = 0.0;
    for (std::size_t k = 0; k < dc.support.size(); ++k)
      e += dc.probs[k] * std::max(dc.support[k] - q, 0.0);
    return e;
  };
  auto lower_tail = [&](double q) {
    double e = 0.0;
    for (std::size_t k = 0; k < dc.support.size(); ++k)
      e += dc.probs[k] * std::max(q - dc.support[k], 0.0);
    return e;
  };

  ScanResult r;
  r.mu_plus = HUGE_VAL;
  r.mu_minus = -HUGE_VAL;
  for (const double q : grid) {
    const double up = q + safe_div(upper_tail(q), b_minus) - safe_div(lower_tail(q), b_plus);
    if (up < r.mu_plus) {
      r.mu_plus = up;
      r.argmin_q_plus = q;
    }
    const double low = q + safe_div(upper_tail(q), b_plus) - safe_div(lower_tail(q), b_minus);
    if (low > r.mu_minus) {
      r.mu_minus = low;
      r.argmax_q_minus = q;
    }
  }
  return r;
}

std::vector<double> tilted_pmf(const DiscreteConditional& dc, double b_minus,
                               double b_plus, bool upper) {
  dc.validate();
  check_band(b_minus, b_plus, true);
  const double alpha = alpha_of(b_minus, b_plus, upper);
  // Atoms in the lower tail (F < alpha) keep their probability scaled
  // by the regime that shrinks (upper bound: 1/b+) and the upper tail
  // by the regime that inflates (1/b-); the lower construction swaps
  // the two. The atom straddling alpha is split between regimes.
  const double lo_scale = upper ? 1.0 / b_plus : 1.0 / b_minus;
  const double hi_scale = upper ? 1.0 / b_minus : 1.0 / b_plus;
  std::vector<double> out(dc.probs.size());
  double f_prev = 0.0;
  for (std::size_t k = 0; k < dc.probs.size(); ++k) {
    const double f_k = f_prev + dc.probs[k];
    if (f_k < alpha - 1e-15) {
      out[k] = dc.probs[k] * lo_scale;
    } else if (f_prev > alpha + 1e-15) {
      out[k] = dc.probs[k] * hi_scale;
    } else {
      out[k] = (alpha - f_prev) * lo_scale + (f_k - alpha) * hi_scale;
    }
    f_prev = f_k;
  }
  return out;
}

std::pair<double, double> tilted_density_bound(const DiscreteConditional& dc,
                                               double b_minus, double b_plus) {
  const auto p_plus = tilted_pmf(dc, b_minus, b_plus, true);
  const auto p_minus = tilted_pmf(dc, b_minus, b_plus, false);
  double total_plus = 0.0, total_minus = 0.0, mu_plus = 0.0, mu_minus = 0.0;
  for (std::size_t k = 0; k < dc.support.size(); ++k) {
    total_plus += p_plus[k];
    total_minus += p_minus[k];
    mu_plus += dc.support[k] * p_plus[k];
    mu_minus += dc.support[k] * p_minus[k];
  }
  if (std::abs(total_plus - 1.0) > 1e-8 || std::abs(total_minus - 1.0) > 1e-8)
    throw std::runtime_error(
        "tilted_density_bound: construction bug, tilted mass is " +
        std::to_string(total_plus) + " / " + std::to_string(total_minus));
  if (std::abs(total_plus - 1.0) > 1e-10) mu_plus /= total_plus;
  if (std::abs(total_minus - 1.0) > 1e-10) mu_minus /= total_minus;
  return {mu_plus, mu_minus};
}

PopulationTruth finite_population_truth(const Dataset& data, const DgpConfig& cfg,
                                        double t, double z, const Matrix& x_grid) {
  PopulationTruth out;
  const Eigen::Index n = data.size();
  if (n == 0) throw std::invalid_argument("finite_population_truth: empty dataset");
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    total += outcome_mean(cfg, t, z, data.x.row(i).transpose());
  out.psi = total / static_cast<double>(n);
  out.mu_grid.reserve(static_cast<std::size_t>(x_grid.rows()));
  for (Eigen::Index i = 0; i < x_grid.rows(); ++i)
    out.mu_grid.push_back(outcome_mean(cfg, t, z, x_grid.row(i).transpose()));
  out.direct = true_effect(cfg, EffectKind::direct, 1.0, z, 0.0, z);
  out.spillover = true_effect(cfg, EffectKind::spillover, t, z, t, 0.0);
  out.overall = true_effect(cfg, EffectKind::overall, t, z, 0.0, 0.0);
  return out;
}

std::vector<std::pair<double, double>> enumerate_exposure_distribution(
    const Graph& g, int node, const std::vector<double>& unit_probs,
    const ExposureSpec& spec) {
  spec.validate();
  if (unit_probs.size() != static_cast<std::size_t>(g.node_count()))
    throw std::invalid_argument(
        "enumerate_exposure_distribution: unit_probs length must equal node count");
  std::vector<int> hood;
  if (spec.kind == ExposureKind::khop_mean) {
    hood = khop_neighbors(g, node, spec.r);
  } else {
    auto [lo, hi] = g.neighbors(node);
    hood.assign(lo, hi);
  }
  const auto m = hood.size();
  if (m == 0)
    throw std::runtime_error("enumerate_exposure_distribution: node " +
                             std::to_string(node) + " has no relevant neighbors");
  if (m > 20)
    throw std::invalid_argument(
        "enumerate_exposure_distribution: neighborhood size above 20 is refused");

  const std::vector<double>* weights = nullptr;
  if (spec.kind == ExposureKind::weighted_mean) {
    if (spec.weights.size() != static_cast<std::size_t>(g.node_count()))
      throw std::invalid_argument(
          "enumerate_exposure_distribution: weight rows do not match node count");
    weights = &spec.weights[static_cast<std::size_t>(node)];
    if (weights->size() != m)
      throw std::invalid_argument(
          "enumerate_exposure_distribution: weight row does not match degree");
  }

  std::vector<std::pair<double, double>> atoms;  // (z, prob), unsorted
  const std::uint64_t patterns = std::uint64_t{1} << m;
  for (std::uint64_t mask = 0; mask < patterns; ++mask) {
    double prob = 1.0;
    double weighted = 0.0;
    int count = 0;
    for (std::size_t j = 0; j < m; ++j) {
      const double pj = unit_probs[static_cast<std::size_t>(hood[j])];
      if (mask & (std::uint64_t{1} << j)) {
        prob *= pj;
        ++count;
        if (weights) weighted += (*weights)[j];
      } else {
        prob *= (1.0 - pj);
      }
    }
    double z = 0.0;
    switch (spec.kind) {
      case ExposureKind::mean:
      case ExposureKind::khop_mean:
        z = static_cast<double>(count) / static_cast<double>(m);
        break;
      case ExposureKind::threshold:
        z = (static_cast<double>(count) / static_cast<double>(m) >= spec.c) ? 1.0 : 0.0;
        break;
      case ExposureKind::weighted_mean:
        z = weighted;
        break;
    }
    atoms.emplace_back(z, prob);
  }
  std::sort(atoms.begin(), atoms.end());
  std::vector<std::pair<double, double>> merged;
  for (const auto& [z, p] : atoms) {
    if (!merged.empty() && std::abs(merged.back().first - z) <= 1e-12)
      merged.back().second += p;
    else
      merged.emplace_back(z, p);
  }
  return merged;
}

void GaussianMixture::validate() const {
  if (weights.empty() || weights.size() != means.size())
    throw std::invalid_argument("GaussianMixture: weights and means must align");
  if (!(sd > 0.0)) throw std::invalid_argument("GaussianMixture: sd must be positive");
  double total = 0.0;
  for (double w : weights) {
    if (w < -1e-12) throw std::invalid_argument("GaussianMixture: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("GaussianMixture: weights must sum to 1");
}

double GaussianMixture::mean() const {
  double m = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) m += weights[j] * means[j];
  return m;
}

double GaussianMixture::cdf(double q) const {
  double f = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j)
    f += weights[j] * norm_cdf((q - means[j]) / sd);
  return f;
}

double GaussianMixture::quantile(double alpha) const {
  validate();
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("GaussianMixture::quantile: alpha must be in (0, 1)");
  double lo = *std::min_element(means.begin(), means.end()) - 13.0 * sd;
  double hi = *std::max_element(means.begin(), means.end()) + 13.0 * sd;
  for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < alpha ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double GaussianMixture::upper_partial(double q) const {
  double v = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    const double u = (q - means[j]) / sd;
    v += weights[j] * sd * (norm_pdf(u) - u * (1.0 - norm_cdf(u)));
  }
  return std::max(v, 0.0);
}

double GaussianMixture::lower_partial(double q) const {
  double v = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    const double u = (q - means[j]) / sd;
    v += weights[j] * sd * (u * norm_cdf(u) + norm_pdf(u));
  }
  return std::max(v, 0.0);
}

double mixture_capo_bound(const GaussianMixture& gm, double b_minus, double b_plus,
                          bool upper) {
  gm.validate();
  check_band(b_minus, b_plus, true);
  const double alpha = alpha_of(b_minus, b_plus, upper);
  // alpha hits 0 or 1 only when b- = 1 or b+ = 1, where the tilt set
  // degenerates to the original law and the bound is the plain mean.
  if (alpha <= 1e-12 || alpha >= 1.0 - 1e-12) return gm.mean();
  const double q = gm.quantile(alpha);
  const double up = gm.upper_partial(q);
  const double lo = gm.lower_partial(q);
  return upper ? q + up / b_minus - lo / b_plus : q + up / b_plus - lo / b_minus;
}

}  // namespace netbound
