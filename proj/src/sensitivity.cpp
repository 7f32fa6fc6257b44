#include "netbound/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace netbound {

namespace {

constexpr double kGridTol = 1e-9;

/// Integer rounding with a relative guard so exact rational endpoints
/// (k / (1 +- eps n) with small integers) are not pushed across an
/// integer boundary by floating-point representation error.
long long ceil_count(double v) {
  return static_cast<long long>(std::ceil(v - 1e-9));
}
long long floor_count(double v) {
  return static_cast<long long>(std::floor(v + 1e-9));
}

void check_pmf(const Vector& pmf, const char* where) {
  if (pmf.size() == 0) throw std::invalid_argument(std::string(where) + ": empty pmf");
  double total = 0.0;
  for (Eigen::Index i = 0; i < pmf.size(); ++i) {
    if (!(pmf[i] >= -1e-12))
      throw std::invalid_argument(std::string(where) + ": negative pmf entry");
    total += pmf[i];
  }
  if (std::abs(total - 1.0) > 1e-8)
    throw std::invalid_argument(std::string(where) + ": pmf does not sum to 1");
}

/// P(lo <= N <= hi) from a count pmf, with empty intervals giving 0.
double interval_prob(const Vector& pmf, long long lo, long long hi) {
  lo = std::max<long long>(lo, 0);
  hi = std::min<long long>(hi, pmf.size() - 1);
  double p = 0.0;
  for (long long k = lo; k <= hi; ++k) p += pmf[static_cast<Eigen::Index>(k)];
  return p;
}

}  // namespace

MisspecModel MisspecModel::weighted_mean(double eps, double factor) {
  MisspecModel m;
  m.kind = MisspecKind::weighted_mean;
  m.eps = eps;
  m.factor = factor;
  m.validate();
  return m;
}

MisspecModel MisspecModel::threshold(double eps, double c, double factor) {
  MisspecModel m;
  m.kind = MisspecKind::threshold;
  m.eps = eps;
  m.c = c;
  m.factor = factor;
  m.validate();
  return m;
}

MisspecModel MisspecModel::msm(double gamma_minus, double gamma_plus, double factor) {
  MisspecModel m;
  m.kind = MisspecKind::msm;
  m.gamma_minus = gamma_minus;
  m.gamma_plus = gamma_plus;
  m.factor = factor;
  m.validate();
  return m;
}

void MisspecModel::validate() const {
  if (!(factor >= 0.0) || !std::isfinite(factor))
    throw std::invalid_argument("MisspecModel: factor must be finite and >= 0");
  switch (kind) {
    case MisspecKind::weighted_mean:
      if (!(eps >= 0.0))
        throw std::invalid_argument("MisspecModel: weighted_mean eps must be >= 0");
      break;
    case MisspecKind::threshold:
      if (!(c > 0.0 && c < 1.0))
        throw std::invalid_argument("MisspecModel: threshold level c must lie in (0,1)");
      if (!(eps >= 0.0 && eps <= std::min(c, 1.0 - c) + 1e-12))
        throw std::invalid_argument(
            "MisspecModel: threshold eps must lie in [0, min{c, 1-c}]");
      break;
    case MisspecKind::msm:
      if (!table && !(gamma_minus > 0.0 && gamma_minus <= 1.0 && gamma_plus >= 1.0 &&
                      std::isfinite(gamma_plus)))
        throw std::invalid_argument(
            "MisspecModel: msm requires 0 < gamma_minus <= 1 <= gamma_plus < inf");
      break;
  }
}

double MisspecModel::scaled_eps(int degree) const {
  const double raw = eps * factor;
  if (kind == MisspecKind::weighted_mean) {
    if (degree < 1)
      throw std::invalid_argument("MisspecModel: degree must be >= 1 for weighted_mean");
    return clamp(raw, 0.0, 1.0 / degree);
  }
  if (kind == MisspecKind::threshold) return clamp(raw, 0.0, std::min(c, 1.0 - c));
  throw std::logic_error("MisspecModel::scaled_eps: not a slack-based model");
}

std::pair<double, double> MisspecModel::scaled_gammas() const {
  if (kind != MisspecKind::msm)
    throw std::logic_error("MisspecModel::scaled_gammas: not an msm model");
  return {std::pow(gamma_minus, factor), std::pow(gamma_plus, factor)};
}

MsmTable MsmTable::load_csv(std::istream& in) {
  std::string header;
  if (!std::getline(in, header))
    throw std::runtime_error("MsmTable::load_csv: empty input");
  {
    std::istringstream hs(header);
    std::string col;
    std::vector<std::string> cols;
    while (std::getline(hs, col, ',')) cols.push_back(col);
    const std::vector<std::string> want = {"z", "x_bin", "b_minus", "b_plus"};
    if (cols != want)
      throw std::runtime_error("MsmTable::load_csv: header must be z,x_bin,b_minus,b_plus");
  }
  std::map<std::pair<double, int>, std::pair<double, double>> rows;
  int max_bin = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> fields;
    while (std::getline(ls, cell, ',')) fields.push_back(cell);
    if (fields.size() != 4)
      throw std::runtime_error("MsmTable::load_csv: malformed row '" + line + "'");
    const double z = std::stod(fields[0]);
    const int bin = std::stoi(fields[1]);
    const double bm = std::stod(fields[2]);
    const double bp = std::stod(fields[3]);
    if (bin < 0) throw std::runtime_error("MsmTable::load_csv: negative x_bin");
    if (!(bm > 0.0 && bm <= 1.0 + 1e-12 && bp >= 1.0 - 1e-12))
      throw std::runtime_error("MsmTable::load_csv: bounds must satisfy 0 < b- <= 1 <= b+");
    if (!rows.emplace(std::make_pair(z, bin), std::make_pair(bm, bp)).second)
      throw std::runtime_error("MsmTable::load_csv: duplicate (z, x_bin) row");
    max_bin = std::max(max_bin, bin);
  }
  if (rows.empty()) throw std::runtime_error("MsmTable::load_csv: no data rows");
  MsmTable t;
  t.n_bins = max_bin + 1;
  for (const auto& [key, val] : rows) {
    if (t.z_levels.empty() || key.first > t.z_levels.back() + kGridTol)
      t.z_levels.push_back(key.first);
  }
  t.cells.assign(t.z_levels.size() * static_cast<std::size_t>(t.n_bins), {-1.0, -1.0});
  for (const auto& [key, val] : rows) {
    const auto it = std::lower_bound(t.z_levels.begin(), t.z_levels.end(),
                                     key.first - kGridTol);
    const auto zi = static_cast<std::size_t>(it - t.z_levels.begin());
    t.cells[zi * static_cast<std::size_t>(t.n_bins) + static_cast<std::size_t>(key.second)] = val;
  }
  for (const auto& cell : t.cells)
    if (cell.first < 0.0)
      throw std::runtime_error("MsmTable::load_csv: missing (z, x_bin) combination");
  return t;
}

MsmTable MsmTable::load_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("MsmTable::load_csv_file: cannot open " + path);
  return load_csv(in);
}

std::pair<double, double> MsmTable::lookup(double z, double x_first) const {
  const auto it = std::lower_bound(z_levels.begin(), z_levels.end(), z - kGridTol);
  if (it == z_levels.end() || std::abs(*it - z) > kGridTol)
    throw std::invalid_argument("MsmTable::lookup: z level " + std::to_string(z) +
                                " not present in table");
  const auto zi = static_cast<std::size_t>(it - z_levels.begin());
  const double span = x_hi - x_lo;
  int bin = static_cast<int>(std::floor((x_first - x_lo) / span * n_bins));
  bin = std::max(0, std::min(n_bins - 1, bin));
  return cells[zi * static_cast<std::size_t>(n_bins) + static_cast<std::size_t>(bin)];
}

RatioBounds RatioBounds::constants(double b_minus, double b_plus) {
  if (!(b_minus >= 0.0 && b_minus <= 1.0 + 1e-12 && b_plus >= 1.0 - 1e-12))
    throw std::invalid_argument(
        "RatioBounds::constants: need 0 <= b- <= 1 <= b+ (got b-=" +
        std::to_string(b_minus) + ", b+=" + std::to_string(b_plus) + ")");
  RatioBounds rb;
  rb.bm = {clamp(b_minus, 0.0, 1.0)};
  rb.bp = {std::max(b_plus, 1.0)};
  return rb;
}

std::size_t RatioBounds::index_of(double z) const {
  for (std::size_t k = 0; k < z_grid.size(); ++k)
    if (std::abs(z_grid[k] - z) <= kGridTol) return k;
  throw std::invalid_argument("RatioBounds: exposure level " + std::to_string(z) +
                              " is not on this context's grid");
}

double RatioBounds::b_minus(double z) const {
  return constant() ? bm[0] : bm[index_of(z)];
}

double RatioBounds::b_plus(double z) const {
  return constant() ? bp[0] : bp[index_of(z)];
}

double TailLevel::a_plus(double z) const {
  if (constant()) return alpha_plus[0];
  for (std::size_t k = 0; k < z_grid.size(); ++k)
    if (std::abs(z_grid[k] - z) <= kGridTol) return alpha_plus[k];
  throw std::invalid_argument("TailLevel: exposure level not on grid");
}

double TailLevel::a_minus(double z) const {
  if (constant()) return alpha_minus[0];
  for (std::size_t k = 0; k < z_grid.size(); ++k)
    if (std::abs(z_grid[k] - z) <= kGridTol) return alpha_minus[k];
  throw std::invalid_argument("TailLevel: exposure level not on grid");
}

Vector poisson_binomial_pmf(const std::vector<double>& probs) {
  if (probs.empty())
    throw std::invalid_argument("poisson_binomial_pmf: empty probability list");
  for (const double p : probs)
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument("poisson_binomial_pmf: probability outside [0,1]");
  const auto n = probs.size();
  Vector pmf = Vector::Zero(static_cast<Eigen::Index>(n) + 1);
  pmf[0] = 1.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double p = probs[j];
    for (std::size_t k = j + 1; k-- > 0;) {
      const auto ki = static_cast<Eigen::Index>(k);
      pmf[ki + 1] += pmf[ki] * p;
      pmf[ki] *= (1.0 - p);
    }
  }
  return pmf;
}

RatioBounds ratio_bounds_weighted_mean(double eps, int n, const Vector& count_pmf,
                                       WeightedMeanInfPolicy policy) {
  if (n < 1) throw std::invalid_argument("ratio_bounds_weighted_mean: n must be >= 1");
  if (!(eps >= 0.0 && eps <= 1.0 / n + 1e-12))
    throw std::invalid_argument("ratio_bounds_weighted_mean: eps must lie in [0, 1/n]");
  if (count_pmf.size() != n + 1)
    throw std::invalid_argument("ratio_bounds_weighted_mean: pmf length must be n+1");
  check_pmf(count_pmf, "ratio_bounds_weighted_mean");

  const double en = eps * n;
  const double shrink = 1.0 - en;  // can hit 0 at the slack boundary
  const double grow = 1.0 + en;

  RatioBounds rb;
  rb.z_grid.resize(static_cast<std::size_t>(n) + 1);
  rb.bm.resize(static_cast<std::size_t>(n) + 1);
  rb.bp.resize(static_cast<std::size_t>(n) + 1);

  for (int zk = 0; zk <= n; ++zk) {
    rb.z_grid[static_cast<std::size_t>(zk)] = static_cast<double>(zk) / n;
    double best_lo = std::numeric_limits<double>::infinity();
    double best_hi = -std::numeric_limits<double>::infinity();
    bool any_denominator = false;
    for (int sk = 0; sk <= zk; ++sk) {
      const double denom = interval_prob(count_pmf, sk, zk);
      if (denom <= 0.0) continue;  // 0/0 candidates are excluded
      any_denominator = true;
      // Lower bound: numerator interval shrinks inside [s, z].
      long long lo_m;
      if (sk == 0) {
        lo_m = 0;
      } else if (shrink <= 0.0) {
        lo_m = std::numeric_limits<long long>::max();  // empty interval
      } else {
        lo_m = ceil_count(sk / shrink);
      }
      const long long hi_m = floor_count(zk / grow);
      const double num_m = (lo_m > hi_m) ? 0.0 : interval_prob(count_pmf, lo_m, hi_m);
      if (num_m > 0.0 || policy == WeightedMeanInfPolicy::literal)
        best_lo = std::min(best_lo, num_m / denom);
      // Upper bound: numerator interval grows around [s, z].
      const long long lo_p = ceil_count(sk / grow);
      const long long hi_p = (shrink <= 0.0) ? n : floor_count(zk / shrink);
      const double num_p = interval_prob(count_pmf, lo_p, hi_p);
      best_hi = std::max(best_hi, num_p / denom);
    }
    if (!any_denominator)
      throw std::runtime_error(
          "ratio_bounds_weighted_mean: positivity violation, all candidate "
          "denominators are zero at z = " +
          std::to_string(static_cast<double>(zk) / n));
    if (!std::isfinite(best_lo)) best_lo = 0.0;  // every numerator empty: vacuous
    rb.bm[static_cast<std::size_t>(zk)] = clamp(best_lo, 0.0, 1.0);
    rb.bp[static_cast<std::size_t>(zk)] = std::max(best_hi, 1.0);
  }
  return rb;
}

RatioBounds ratio_bounds_threshold(double eps, double c, int n, const Vector& count_pmf) {
  if (n < 1) throw std::invalid_argument("ratio_bounds_threshold: n must be >= 1");
  if (!(c > 0.0 && c < 1.0))
    throw std::invalid_argument("ratio_bounds_threshold: c must lie in (0,1)");
  if (!(eps >= 0.0 && eps <= std::min(c, 1.0 - c) + 1e-12))
    throw std::invalid_argument(
        "ratio_bounds_threshold: eps must lie in [0, min{c, 1-c}]");
  if (count_pmf.size() != n + 1)
    throw std::invalid_argument("ratio_bounds_threshold: pmf length must be n+1");
  check_pmf(count_pmf, "ratio_bounds_threshold");

  // Survival S(k) = P(N >= k); thresholds round up to the next
  // attainable count because N is integer-valued.
  auto survival = [&](long long k) {
    k = std::max<long long>(k, 0);
    if (k > n) return 0.0;
    double s = 0.0;
    for (long long j = k; j <= n; ++j) s += count_pmf[static_cast<Eigen::Index>(j)];
    return s;
  };
  const long long k_c = ceil_count(n * c);
  const long long k_hi = ceil_count(n * (c + eps));
  const long long k_lo = ceil_count(n * (c - eps));
  const double s_c = survival(k_c);
  if (s_c <= 0.0 || s_c >= 1.0)
    throw std::runtime_error(
        "ratio_bounds_threshold: positivity violation, P(N >= ceil(n c)) is " +
        std::to_string(s_c));
  RatioBounds rb;
  rb.z_grid = {0.0, 1.0};
  rb.bm.resize(2);
  rb.bp.resize(2);
  // z = 1: survival ratios.
  rb.bm[1] = clamp(survival(k_hi) / s_c, 0.0, 1.0);
  rb.bp[1] = std::max(survival(k_lo) / s_c, 1.0);
  // z = 0: complements.
  rb.bm[0] = clamp((1.0 - survival(k_lo)) / (1.0 - s_c), 0.0, 1.0);
  rb.bp[0] = std::max((1.0 - survival(k_hi)) / (1.0 - s_c), 1.0);
  return rb;
}

RatioBounds ratio_bounds_msm(double gamma_minus, double gamma_plus) {
  if (!(gamma_minus > 0.0 && gamma_minus <= 1.0 + 1e-12 && gamma_plus >= 1.0 - 1e-12 &&
        std::isfinite(gamma_plus)))
    throw std::invalid_argument(
        "ratio_bounds_msm: need 0 < gamma_minus <= 1 <= gamma_plus < inf");
  return RatioBounds::constants(std::min(gamma_minus, 1.0), std::max(gamma_plus, 1.0));
}

RatioBounds ratio_bounds_msm_table(const MsmTable& table, double x_first, double factor) {
  RatioBounds rb;
  rb.z_grid = table.z_levels;
  rb.bm.resize(rb.z_grid.size());
  rb.bp.resize(rb.z_grid.size());
  for (std::size_t k = 0; k < rb.z_grid.size(); ++k) {
    const auto [bm, bp] = table.lookup(rb.z_grid[k], x_first);
    rb.bm[k] = clamp(std::pow(bm, factor), 0.0, 1.0);
    rb.bp[k] = std::max(std::pow(bp, factor), 1.0);
  }
  return rb;
}

RatioBounds ratio_bounds_for_model(const MisspecModel& model, int degree,
                                   const Vector& count_pmf, double x_first) {
  model.validate();
  switch (model.kind) {
    case MisspecKind::weighted_mean:
      return ratio_bounds_weighted_mean(model.scaled_eps(degree), degree, count_pmf,
                                        model.inf_policy);
    case MisspecKind::threshold:
      return ratio_bounds_threshold(model.scaled_eps(degree), model.c, degree,
                                    count_pmf);
    case MisspecKind::msm:
      if (model.table) return ratio_bounds_msm_table(*model.table, x_first, model.factor);
      const auto [gm, gp] = model.scaled_gammas();
      return ratio_bounds_msm(gm, gp);
  }
  throw std::logic_error("ratio_bounds_for_model: unknown kind");
}

double alpha_level(double b_minus, double b_plus, bool upper) {
  if (std::abs(b_plus - b_minus) < 1e-12) return 0.5;
  const double a = upper ? (1.0 - b_minus) * b_plus / (b_plus - b_minus)
                         : (b_plus - 1.0) * b_minus / (b_plus - b_minus);
  return clamp(a, 0.0, 1.0);
}

TailLevel alpha_levels(const RatioBounds& rb) {
  TailLevel t;
  t.z_grid = rb.z_grid;
  const std::size_t m = rb.bm.size();
  t.alpha_plus.resize(m);
  t.alpha_minus.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    t.alpha_plus[k] = alpha_level(rb.bm[k], rb.bp[k], true);
    t.alpha_minus[k] = alpha_level(rb.bm[k], rb.bp[k], false);
  }
  return t;
}

}  // namespace netbound
