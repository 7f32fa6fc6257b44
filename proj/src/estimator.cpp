#include "netbound/estimator.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace netbound {

double kernel_value(KernelKind shape, double u) {
  switch (shape) {
    case KernelKind::epanechnikov:
      return std::abs(u) <= 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
    case KernelKind::gaussian:
      return norm_pdf(u);
    case KernelKind::box:
      return std::abs(u) <= 1.0 ? 0.5 : 0.0;
  }
  throw std::logic_error("kernel_value: unknown shape");
}

double localization_weight(bool discrete, double z_obs, double z_target,
                           const KernelSpec& kernel) {
  if (discrete) return std::abs(z_obs - z_target) <= 1e-9 ? 1.0 : 0.0;
  if (kernel.h <= 0.0)
    throw std::invalid_argument("localization_weight: bandwidth must be positive");
  return kernel_value(kernel.shape, (z_obs - z_target) / kernel.h) / kernel.h;
}

double capo_closed_form(bool upper, double q, double gamma_up, double gamma_lo,
                        double b_minus, double b_plus) {
  if (upper) return q + safe_div(gamma_up, b_minus) - safe_div(gamma_lo, b_plus);
  return q + safe_div(gamma_up, b_plus) - safe_div(gamma_lo, b_minus);
}

double pseudo_outcome(bool upper, const Dataset& data, int row, const NuisanceSet& eta,
                      const RatioBounds& rb, double t, double z,
                      const KernelSpec& kernel, bool discrete) {
  const auto x = data.x.row(row).transpose();
  const auto& q_fn = upper ? eta.quantile_upper : eta.quantile_lower;
  const auto& gu_fn = upper ? eta.tail_up_upper : eta.tail_up_lower;
  const auto& gl_fn = upper ? eta.tail_low_upper : eta.tail_low_lower;

  const double q0 = q_fn(row, t, z, x);
  const double gu0 = gu_fn(row, t, z, x);
  const double gl0 = gl_fn(row, t, z, x);
  double value = capo_closed_form(upper, q0, gu0, gl0, rb.b_minus(z), rb.b_plus(z));

  const double z_obs = data.z_assumed.values[row];
  if (data.t[row] == static_cast<int>(t)) {
    const double w = localization_weight(discrete, z_obs, z, kernel);
    if (w > 0.0) {
      const double p1 = eta.unit_propensity(row, x);
      const double pi_t = t >= 0.5 ? p1 : 1.0 - p1;
      const double pi_g = eta.exposure_propensity(row, z_obs, x);
      // Discrete matches have z_obs == z exactly; evaluating at the
      // target keeps the closures' target validation meaningful.
      const double zc = discrete ? z : z_obs;
      const double qc = q_fn(row, t, zc, x);
      const double guc = gu_fn(row, t, zc, x);
      const double glc = gl_fn(row, t, zc, x);
      const double bm = rb.b_minus(zc);
      const double bp = rb.b_plus(zc);
      const double y = data.y[row];
      // pos() maps NaN to 0, so a non-finite y or qc would otherwise
      // fold silently into a finite bracket.
      if (!std::isfinite(y) || !std::isfinite(qc))
        throw std::runtime_error("pseudo_outcome: non-finite value at row " +
                                 std::to_string(row));
      const double up_term = pos(y - qc) - guc;
      const double lo_term = pos(qc - y) - glc;
      const double bracket = upper ? safe_div(up_term, bm) - safe_div(lo_term, bp)
                                   : safe_div(up_term, bp) - safe_div(lo_term, bm);
      value += w / (pi_t * pi_g) * bracket;
    }
  }
  if (!std::isfinite(value))
    throw std::runtime_error("pseudo_outcome: non-finite value at row " +
                             std::to_string(row));
  return value;
}

PseudoOutcomeVector compute_pseudo_outcomes(const Dataset& data, const Graph& g,
                                            const ExposureSpec& spec_assumed,
                                            const CrossfitNuisances& cf, double t,
                                            double z, const KernelSpec& kernel,
                                            bool correction, int workers) {
  const int n = static_cast<int>(data.size());
  if (n != g.node_count())
    throw std::invalid_argument("compute_pseudo_outcomes: dataset and graph sizes differ");
  if (cf.sets.empty()) throw std::invalid_argument("compute_pseudo_outcomes: no nuisances");

  PseudoOutcomeVector pv;
  pv.t = t;
  pv.z = z;
  pv.continuous = data.z_assumed.continuous;
  pv.h = kernel.h;

  const ExposureSupport support = exposure_support(spec_assumed, g);
  for (int i = 0; i < n; ++i) {
    if (pv.continuous) {
      pv.rows.push_back(i);
      continue;
    }
    const auto& grid = support.grids[i];
    const bool attainable =
        std::any_of(grid.begin(), grid.end(),
                    [z](double v) { return std::abs(v - z) <= 1e-9; });
    if (attainable) pv.rows.push_back(i);
  }
  if (pv.rows.empty())
    throw std::runtime_error(
        "compute_pseudo_outcomes: exposure level is attainable for no node");
  const int used = static_cast<int>(pv.rows.size());
  pv.attainable_share = static_cast<double>(used) / n;

  pv.phi_plus.resize(used);
  pv.phi_minus.resize(used);
  pv.fold_of = IntVector::Zero(used);
  std::vector<unsigned char> corrected(used, 0), clipped(used, 0), not_sharp(used, 0);
  const bool discrete = !pv.continuous;

  parallel_for(used, workers, [&](int r) {
    const int i = pv.rows[r];
    const int k = cf.folds.assignments[i];
    const NuisanceSet& eta = cf.sets[k];
    const RatioBounds& rb = cf.bounds[k][i];
    pv.fold_of[r] = k;
    const auto x = data.x.row(i).transpose();

    if (correction) {
      pv.phi_plus[r] = pseudo_outcome(true, data, i, eta, rb, t, z, kernel, discrete);
      pv.phi_minus[r] = pseudo_outcome(false, data, i, eta, rb, t, z, kernel, discrete);
    } else {
      const double bm = rb.b_minus(z), bp = rb.b_plus(z);
      pv.phi_plus[r] = capo_closed_form(true, eta.quantile_upper(i, t, z, x),
                                        eta.tail_up_upper(i, t, z, x),
                                        eta.tail_low_upper(i, t, z, x), bm, bp);
      pv.phi_minus[r] = capo_closed_form(false, eta.quantile_lower(i, t, z, x),
                                         eta.tail_up_lower(i, t, z, x),
                                         eta.tail_low_lower(i, t, z, x), bm, bp);
      if (!std::isfinite(pv.phi_plus[r]) || !std::isfinite(pv.phi_minus[r]))
        throw std::runtime_error("plug-in estimate: non-finite value at row " +
                                 std::to_string(i));
    }

    const double pg_target = eta.exposure_propensity(i, z, x);
    if (!sharpness_condition_holds(rb.b_plus(z), pg_target)) not_sharp[r] = 1;
    if (correction && data.t[i] == static_cast<int>(t)) {
      const double z_obs = data.z_assumed.values[i];
      if (localization_weight(discrete, z_obs, z, kernel) > 0.0) {
        corrected[r] = 1;
        if (eta.exposure_propensity(i, z_obs, x) <= eta.eps_clip + 1e-12)
          clipped[r] = 1;
      }
    }
  });

  int n_corrected = 0, n_clipped = 0;
  for (int r = 0; r < used; ++r) {
    n_corrected += corrected[r];
    n_clipped += clipped[r];
    if (not_sharp[r]) pv.sharp = false;
  }
  pv.clipped_share =
      n_corrected > 0 ? static_cast<double>(n_clipped) / n_corrected : 0.0;
  return pv;
}

namespace {

std::array<double, 2> normal_ci(double center, double var, int n) {
  const double half = n > 0 ? 1.96 * std::sqrt(var / n) : 0.0;
  return {center - half, center + half};
}

}  // namespace

ApoBounds estimate_apo_bounds(const PseudoOutcomeVector& pv) {
  const int n = static_cast<int>(pv.rows.size());
  if (n == 0) throw std::invalid_argument("estimate_apo_bounds: empty pseudo-outcomes");
  ApoBounds b;
  b.n_used = n;
  b.lo = mean(pv.phi_minus);
  b.hi = mean(pv.phi_plus);
  b.var_lo = n > 1 ? sample_variance(pv.phi_minus) : 0.0;
  b.var_hi = n > 1 ? sample_variance(pv.phi_plus) : 0.0;
  b.ci_lo = normal_ci(b.lo, b.var_lo, n);
  b.ci_hi = normal_ci(b.hi, b.var_hi, n);
  b.attainable_share = pv.attainable_share;
  b.clipped_share = pv.clipped_share;
  b.sharp = pv.sharp;
  return b;
}

CapoCurve estimate_capo_bounds(const PseudoOutcomeVector& pv, const Dataset& data,
                               const Matrix& x_grid, const LearnerSpec& spec) {
  const int n = static_cast<int>(pv.rows.size());
  if (n == 0) throw std::invalid_argument("estimate_capo_bounds: empty pseudo-outcomes");
  if (x_grid.cols() != data.x.cols())
    throw std::invalid_argument("estimate_capo_bounds: grid dimension mismatch");

  Matrix xs(n, data.x.cols());
  for (int r = 0; r < n; ++r) xs.row(r) = data.x.row(pv.rows[r]);
  const FittedModel up = FittedModel::fit(xs, pv.phi_plus, Vector(),
                                          LearnerTask::regression, Vector(), spec);
  const FittedModel lo = FittedModel::fit(xs, pv.phi_minus, Vector(),
                                          LearnerTask::regression, Vector(), spec);

  CapoCurve curve;
  curve.x_grid = x_grid;
  curve.lo.resize(x_grid.rows());
  curve.hi.resize(x_grid.rows());
  for (Eigen::Index r = 0; r < x_grid.rows(); ++r) {
    const double u = up.predict(x_grid.row(r).transpose());
    const double l = lo.predict(x_grid.row(r).transpose());
    curve.hi[r] = std::max(u, l);  // pointwise crossing repair
    curve.lo[r] = std::min(u, l);
  }
  return curve;
}

EffectBounds effect_bounds(EffectKind kind, const PseudoOutcomeVector& a,
                           const PseudoOutcomeVector& b) {
  if (kind == EffectKind::direct && std::abs(a.z - b.z) > 1e-9)
    throw std::invalid_argument("effect_bounds: direct effect needs matching z levels");
  if (kind == EffectKind::spillover && std::abs(a.t - b.t) > 1e-9)
    throw std::invalid_argument("effect_bounds: spillover effect needs matching treatments");

  EffectBounds eb;
  eb.kind = kind;
  eb.t = a.t;
  eb.z = a.z;
  eb.t_prime = b.t;
  eb.z_prime = b.z;

  // Difference over rows present in both arms, preserving order.
  std::vector<double> d_plus, d_minus;
  std::size_t ia = 0, ib = 0;
  while (ia < a.rows.size() && ib < b.rows.size()) {
    if (a.rows[ia] < b.rows[ib]) {
      ++ia;
    } else if (a.rows[ia] > b.rows[ib]) {
      ++ib;
    } else {
      d_plus.push_back(a.phi_plus[ia] - b.phi_minus[ib]);
      d_minus.push_back(a.phi_minus[ia] - b.phi_plus[ib]);
      ++ia;
      ++ib;
    }
  }
  if (d_plus.empty())
    throw std::runtime_error("effect_bounds: the two arms share no attainable rows");

  const int n = static_cast<int>(d_plus.size());
  eb.n_used = n;
  eb.hi = pairwise_sum(d_plus) / n;
  eb.lo = pairwise_sum(d_minus) / n;
  Vector vp = Eigen::Map<Vector>(d_plus.data(), n);
  Vector vm = Eigen::Map<Vector>(d_minus.data(), n);
  eb.var_hi = n > 1 ? sample_variance(vp) : 0.0;
  eb.var_lo = n > 1 ? sample_variance(vm) : 0.0;
  eb.ci_hi = normal_ci(eb.hi, eb.var_hi, n);
  eb.ci_lo = normal_ci(eb.lo, eb.var_lo, n);
  return eb;
}

ApoBounds plugin_estimate(const Dataset& data, const Graph& g,
                          const ExposureSpec& spec_assumed, const CrossfitNuisances& cf,
                          double t, double z, const KernelSpec& kernel) {
  const PseudoOutcomeVector pv =
      compute_pseudo_outcomes(data, g, spec_assumed, cf, t, z, kernel, false);
  return estimate_apo_bounds(pv);
}

const char* effect_kind_name(EffectKind kind) {
  switch (kind) {
    case EffectKind::direct:
      return "direct";
    case EffectKind::spillover:
      return "spillover";
    case EffectKind::overall:
      return "overall";
  }
  return "unknown";
}

std::string BoundResult::to_json(int indent) const {
  nlohmann::json j;
  j["target"] = {{"t", t}, {"z", z}};
  j["model"] = model;
  j["factor"] = factor;
  j["apo"] = {{"lo", apo.lo},
              {"hi", apo.hi},
              {"var_lo", apo.var_lo},
              {"var_hi", apo.var_hi},
              {"ci_lo", apo.ci_lo},
              {"ci_hi", apo.ci_hi},
              {"n_used", apo.n_used},
              {"attainable_share", apo.attainable_share},
              {"clipped_share", apo.clipped_share},
              {"sharp", apo.sharp}};
  j["effects"] = nlohmann::json::array();
  for (const auto& e : effects) {
    j["effects"].push_back({{"kind", effect_kind_name(e.kind)},
                            {"t", e.t},
                            {"z", e.z},
                            {"t_prime", e.t_prime},
                            {"z_prime", e.z_prime},
                            {"lo", e.lo},
                            {"hi", e.hi},
                            {"var_lo", e.var_lo},
                            {"var_hi", e.var_hi},
                            {"ci_lo", e.ci_lo},
                            {"ci_hi", e.ci_hi}});
  }
  j["capo_grid"] = nlohmann::json::array();
  for (Eigen::Index r = 0; r < capo_lo.size(); ++r) {
    std::vector<double> xr(capo_x.cols());
    for (Eigen::Index c = 0; c < capo_x.cols(); ++c) xr[c] = capo_x(r, c);
    j["capo_grid"].push_back({{"x", xr}, {"lo", capo_lo[r]}, {"hi", capo_hi[r]}});
  }
  return j.dump(indent);
}

}  // namespace netbound
