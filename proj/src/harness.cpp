#include "netbound/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace netbound {

namespace {

using nlohmann::json;

std::uint64_t derived_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t state = base + 0x9E3779B97F4A7C15ULL * stream;
  return splitmix64(state);
}

long long ceil_count(double v) {
  // Same integer rounding as the ratio-bound constructions, so the
  // oracle's compatible count sets match the estimator's.
  return static_cast<long long>(std::ceil(v - 1e-9));
}

double elapsed_seconds(std::chrono::steady_clock::time_point from) {
  const auto now = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(now - from).count();
}

// ---------------------------------------------------------------------------
// Config parsing

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (trim(v.substr(pos)).empty() && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("config: value '" + v + "' for " + key +
                              " is not a finite number");
}

int to_int(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  const int i = static_cast<int>(d);
  if (static_cast<double>(i) != d)
    throw std::invalid_argument("config: value '" + v + "' for " + key +
                                " is not an integer");
  return i;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long u = std::stoull(v, &pos);
    if (trim(v.substr(pos)).empty()) return u;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("config: value '" + v + "' for " + key +
                              " is not an unsigned integer");
}

std::vector<std::string> split_csv(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(v);
  while (std::getline(in, cur, ',')) out.push_back(trim(cur));
  if (!out.empty() && out.back().empty()) out.pop_back();
  return out;
}

std::vector<double> to_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split_csv(v)) out.push_back(to_double(key, item));
  return out;
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& item : split_csv(v)) out.push_back(to_int(key, item));
  return out;
}

Scenario scenario_from(const std::string& v) {
  if (v == "weighted_mean") return Scenario::weighted_mean;
  if (v == "threshold") return Scenario::threshold;
  if (v == "higher_order") return Scenario::higher_order;
  throw std::invalid_argument("config: unknown scenario '" + v +
                              "' (expected weighted_mean, threshold or higher_order)");
}

ExperimentMode mode_from(const std::string& v) {
  if (v == "validity") return ExperimentMode::validity;
  if (v == "convergence") return ExperimentMode::convergence;
  if (v == "width") return ExperimentMode::width;
  throw std::invalid_argument("config: unknown mode '" + v +
                              "' (expected validity, convergence or width)");
}

void apply_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "experiment.scenario") {
    cfg.scenario = scenario_from(value);
  } else if (key == "experiment.mode") {
    cfg.mode = mode_from(value);
  } else if (key == "experiment.runs") {
    cfg.runs = to_int(key, value);
  } else if (key == "experiment.seed") {
    cfg.seed = to_u64(key, value);
  } else if (key == "experiment.output") {
    cfg.output = value;
  } else if (key == "experiment.format") {
    cfg.format = value;
  } else if (key == "experiment.workers") {
    cfg.workers = to_int(key, value);
  } else if (key == "network.generator") {
    cfg.generator = value;
  } else if (key == "network.n") {
    cfg.n_nodes = to_int(key, value);
  } else if (key == "network.n_list") {
    cfg.n_list = to_int_list(key, value);
  } else if (key == "network.avg_degree") {
    cfg.avg_degree = to_double(key, value);
  } else if (key == "network.ba_m") {
    cfg.ba_m = to_int(key, value);
  } else if (key == "network.sbm_blocks") {
    cfg.sbm_blocks = to_int(key, value);
  } else if (key == "network.sbm_p_in") {
    cfg.sbm_p_in = to_double(key, value);
  } else if (key == "network.sbm_p_out") {
    cfg.sbm_p_out = to_double(key, value);
  } else if (key == "dgp.d") {
    cfg.d = to_int(key, value);
  } else if (key == "dgp.tau") {
    cfg.tau = to_double(key, value);
  } else if (key == "dgp.delta") {
    cfg.delta = to_double(key, value);
  } else if (key == "dgp.gamma") {
    cfg.gamma = to_double(key, value);
  } else if (key == "dgp.noise_sd") {
    cfg.noise_sd = to_double(key, value);
  } else if (key == "misspec.eps") {
    cfg.eps = to_double(key, value);
  } else if (key == "misspec.c_assumed") {
    cfg.c_assumed = to_double(key, value);
  } else if (key == "misspec.c_true") {
    cfg.c_true = to_double(key, value);
  } else if (key == "misspec.gamma_minus") {
    cfg.gamma_minus = to_double(key, value);
  } else if (key == "misspec.gamma_plus") {
    cfg.gamma_plus = to_double(key, value);
  } else if (key == "misspec.msm_table") {
    cfg.msm_table = value;
  } else if (key == "misspec.factors") {
    cfg.factors = to_double_list(key, value);
  } else if (key == "estimation.k" || key == "estimation.K") {
    cfg.K = to_int(key, value);
  } else if (key == "estimation.h") {
    cfg.h = to_double(key, value);
  } else if (key == "estimation.eps_clip") {
    cfg.eps_clip = to_double(key, value);
  } else if (key == "estimation.t") {
    cfg.t_target = to_double(key, value);
  } else if (key == "estimation.z") {
    cfg.z_target = to_double(key, value);
  } else if (key == "estimation.z_list") {
    cfg.z_list = to_double_list(key, value);
  } else if (key == "estimation.x_grid") {
    cfg.x_grid_points = to_int(key, value);
  } else if (key == "estimation.depth") {
    cfg.learner.depth = to_int(key, value);
  } else if (key == "estimation.trees") {
    cfg.learner.trees = to_int(key, value);
  } else if (key == "estimation.learning_rate") {
    cfg.learner.learning_rate = to_double(key, value);
  } else if (key == "estimation.bins") {
    cfg.learner.bins = to_int(key, value);
  } else if (key == "estimation.min_leaf") {
    cfg.learner.min_leaf = to_int(key, value);
  } else if (key == "estimation.l2") {
    cfg.learner.l2 = to_double(key, value);
  } else if (key == "estimation.exposure_mode") {
    if (value == "analytic") {
      cfg.exposure_mode = ExposurePropensityMode::analytic;
    } else if (value == "direct") {
      cfg.exposure_mode = ExposurePropensityMode::direct;
    } else {
      throw std::invalid_argument("config: unknown exposure_mode '" + value + "'");
    }
  } else {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

// ---------------------------------------------------------------------------
// CSV formatting

std::string fmt_double(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_field(const std::string& key, const std::string& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return to_double(key, v);
}

constexpr const char* kCsvHeader =
    "run,factor,scenario,estimand,t,z,t_prime,z_prime,lo,hi,truth,covered,width,seconds";

bool field_eq(double a, double b) {
  return (std::isnan(a) && std::isnan(b)) || a == b;
}

// ---------------------------------------------------------------------------
// Shared driver pieces

struct RunData {
  Graph g;
  DgpConfig dgp;
  Dataset data;
};

RunData make_run_data(const ExperimentConfig& cfg, int n, std::uint64_t run_seed) {
  Graph g = cfg.make_network(n, derived_seed(run_seed, 1));
  DgpConfig dgp = cfg.dgp_config(g, run_seed);
  Dataset data = simulate(dgp, g);
  return {std::move(g), std::move(dgp), std::move(data)};
}

double subpop_truth(const DgpConfig& dgp, const Dataset& data,
                    const std::vector<int>& rows, double t, double z) {
  std::vector<double> vals;
  vals.reserve(rows.size());
  for (const int r : rows)
    vals.push_back(outcome_mean(dgp, t, z, data.x.row(r).transpose()));
  if (vals.empty()) throw std::runtime_error("subpopulation truth: no rows");
  return pairwise_sum(vals) / static_cast<double>(vals.size());
}

void sort_records(std::vector<ResultRecord>& records) {
  std::stable_sort(records.begin(), records.end(),
                   [](const ResultRecord& a, const ResultRecord& b) {
                     return std::tie(a.run, a.factor, a.estimand, a.z, a.t) <
                            std::tie(b.run, b.factor, b.estimand, b.z, b.t);
                   });
}

std::vector<FactorSummary> summarize_by_factor(const std::vector<ResultRecord>& records) {
  std::map<double, std::vector<const ResultRecord*>> groups;
  for (const auto& r : records) groups[r.factor].push_back(&r);
  std::vector<FactorSummary> out;
  for (const auto& [factor, recs] : groups) {
    FactorSummary fs;
    fs.factor = factor;
    int apo_n = 0, apo_c = 0, capo_n = 0, capo_c = 0, eff_n = 0, eff_c = 0, excl = 0;
    double wsum = 0.0;
    for (const ResultRecord* r : recs) {
      wsum += r->width;
      if (r->estimand == "apo" || r->estimand == "apo_plugin") {
        ++apo_n;
        apo_c += r->covered;
      } else if (r->estimand == "capo") {
        ++capo_n;
        capo_c += r->covered;
      } else if (r->estimand == "direct" || r->estimand == "spillover" ||
                 r->estimand == "overall") {
        ++eff_n;
        eff_c += r->covered;
        excl += (r->lo > 0.0 || r->hi < 0.0);
      }
    }
    fs.apo_coverage = apo_n ? static_cast<double>(apo_c) / apo_n : 0.0;
    fs.capo_coverage = capo_n ? static_cast<double>(capo_c) / capo_n : 0.0;
    fs.effect_coverage = eff_n ? static_cast<double>(eff_c) / eff_n : 0.0;
    fs.mean_width = recs.empty() ? 0.0 : wsum / static_cast<double>(recs.size());
    fs.frac_excluding_zero = eff_n ? static_cast<double>(excl) / eff_n : 0.0;
    out.push_back(fs);
  }
  return out;
}

}  // namespace

const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::weighted_mean:
      return "weighted_mean";
    case Scenario::threshold:
      return "threshold";
    case Scenario::higher_order:
      return "higher_order";
  }
  return "unknown";
}

const char* mode_name(ExperimentMode m) {
  switch (m) {
    case ExperimentMode::validity:
      return "validity";
    case ExperimentMode::convergence:
      return "convergence";
    case ExperimentMode::width:
      return "width";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// ExperimentConfig

void ExperimentConfig::validate() const {
  if (runs < 1) throw std::invalid_argument("config: runs must be >= 1");
  if (n_nodes < 2) throw std::invalid_argument("config: n must be >= 2");
  for (const int n : n_list)
    if (n < 2) throw std::invalid_argument("config: every n_list entry must be >= 2");
  if (factors.empty()) throw std::invalid_argument("config: factor list must be nonempty");
  for (const double f : factors)
    if (!(f > 0.0)) throw std::invalid_argument("config: factors must be > 0");
  if (K < 2) throw std::invalid_argument("config: K must be >= 2");
  if (!(h > 0.0)) throw std::invalid_argument("config: h must be > 0");
  if (!(eps_clip > 0.0 && eps_clip < 0.5))
    throw std::invalid_argument("config: eps_clip must lie in (0, 0.5)");
  if (d < 1) throw std::invalid_argument("config: d must be >= 1");
  if (x_grid_points < 2) throw std::invalid_argument("config: x_grid must be >= 2");
  if (format != "csv" && format != "json")
    throw std::invalid_argument("config: format must be csv or json");
  if (t_target != 0.0 && t_target != 1.0)
    throw std::invalid_argument("config: t must be 0 or 1");
  if (!(avg_degree > 0.0)) throw std::invalid_argument("config: avg_degree must be > 0");
  if (ba_m < 1) throw std::invalid_argument("config: ba_m must be >= 1");
  if (sbm_blocks < 1) throw std::invalid_argument("config: sbm_blocks must be >= 1");
  if (!(sbm_p_in >= 0.0 && sbm_p_in <= 1.0 && sbm_p_out >= 0.0 && sbm_p_out <= 1.0))
    throw std::invalid_argument("config: sbm probabilities must lie in [0,1]");
  if (!(c_assumed > 0.0 && c_assumed < 1.0) || !(c_true > 0.0 && c_true < 1.0))
    throw std::invalid_argument("config: thresholds must lie in (0,1)");
  if (!(gamma_minus > 0.0 && gamma_minus <= 1.0 && gamma_plus >= 1.0 &&
        std::isfinite(gamma_plus)))
    throw std::invalid_argument("config: need 0 < gamma_minus <= 1 <= gamma_plus");
  if (z_list.empty()) throw std::invalid_argument("config: z_list must be nonempty");
  const std::string gen = resolved_generator();
  if (gen != "erdos_renyi" && gen != "barabasi_albert" && gen != "sbm")
    throw std::invalid_argument("config: unknown generator '" + gen + "'");
}

double ExperimentConfig::resolved_eps() const {
  if (eps >= 0.0) return eps;
  switch (scenario) {
    case Scenario::weighted_mean:
      return 0.03;
    case Scenario::threshold:
      return std::abs(c_assumed - c_true);
    case Scenario::higher_order:
      return 0.0;  // msm model, slack unused
  }
  return 0.0;
}

double ExperimentConfig::resolved_z() const {
  if (z_target >= 0.0) return z_target;
  return scenario == Scenario::weighted_mean ? 0.5 : 0.0;
}

std::string ExperimentConfig::resolved_generator() const {
  if (!generator.empty()) return generator;
  switch (scenario) {
    case Scenario::weighted_mean:
      return "erdos_renyi";
    case Scenario::threshold:
      return "barabasi_albert";
    case Scenario::higher_order:
      return "sbm";
  }
  return "erdos_renyi";
}

std::vector<int> ExperimentConfig::resolved_n_list() const {
  return n_list.empty() ? std::vector<int>{n_nodes} : n_list;
}

std::vector<std::string> ExperimentConfig::deviations() const {
  // Reference design values; everything configurable is compared.
  std::vector<std::string> out;
  auto note = [&out](const std::string& s) { out.push_back(s); };
  if (runs != 20) note("runs=" + std::to_string(runs) + " (reference 20)");
  if (n_nodes != 3000 && n_nodes != 6000)
    note("n=" + std::to_string(n_nodes) + " (reference 3000 small / 6000 large)");
  if (d != 1 && d != 6) note("d=" + std::to_string(d) + " (reference 1 or 6)");
  auto near = [](double a, double b) { return std::abs(a - b) < 1e-12; };
  if (!near(tau, 0.8)) note("tau=" + fmt_double(tau) + " (reference 0.8)");
  if (!near(delta, 0.6)) note("delta=" + fmt_double(delta) + " (reference 0.6)");
  if (!near(gamma, 0.2)) note("gamma=" + fmt_double(gamma) + " (reference 0.2)");
  if (!near(noise_sd, 1.0)) note("noise_sd=" + fmt_double(noise_sd) + " (reference 1)");
  if (!near(h, 0.1)) note("h=" + fmt_double(h) + " (reference 0.1)");
  if (K != 5) note("K=" + std::to_string(K) + " (reference 5)");
  if (scenario == Scenario::weighted_mean && !near(resolved_eps(), 0.03))
    note("eps=" + fmt_double(resolved_eps()) + " (reference 0.03)");
  if (scenario == Scenario::threshold && !near(c_true, 0.45))
    note("c_true=" + fmt_double(c_true) + " (reference 0.45)");
  return out;
}

Graph ExperimentConfig::make_network(int n, std::uint64_t seed) const {
  const std::string gen = resolved_generator();
  Graph g = [&]() {
    if (gen == "erdos_renyi") {
      const double p = clamp(avg_degree / std::max(n - 1, 1), 0.0, 1.0);
      return gen_erdos_renyi(n, p, seed);
    }
    if (gen == "barabasi_albert") return gen_barabasi_albert(n, ba_m, seed);
    std::vector<int> blocks(static_cast<std::size_t>(sbm_blocks), n / sbm_blocks);
    for (int k = 0; k < n % sbm_blocks; ++k) ++blocks[static_cast<std::size_t>(k)];
    return gen_sbm(n, blocks, sbm_p_in, sbm_p_out, seed);
  }();

  // Neighborhood exposures are undefined at degree 0, so isolated
  // nodes get one extra edge to a seeded random partner. This nudges
  // the degree distribution instead of silently dropping nodes.
  std::vector<std::pair<int, int>> extra;
  Rng rng(derived_seed(seed, 0x150));
  for (int i = 0; i < g.node_count(); ++i) {
    if (g.degree(i) > 0) continue;
    int j = i;
    while (j == i) j = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    extra.emplace_back(std::min(i, j), std::max(i, j));
  }
  if (extra.empty()) return g;
  auto edges = g.edge_list();
  edges.insert(edges.end(), extra.begin(), extra.end());
  return Graph(n, edges);
}

ExposureSpec ExperimentConfig::spec_assumed() const {
  switch (scenario) {
    case Scenario::weighted_mean:
      return ExposureSpec::mean();
    case Scenario::threshold:
    case Scenario::higher_order:
      return ExposureSpec::threshold(c_assumed);
  }
  return ExposureSpec::mean();
}

ExposureSpec ExperimentConfig::spec_true(const Graph& g, std::uint64_t seed) const {
  switch (scenario) {
    case Scenario::weighted_mean:
      return ExposureSpec::weighted_mean(perturbed_weights(g, resolved_eps(), seed));
    case Scenario::threshold:
      return ExposureSpec::threshold(c_true);
    case Scenario::higher_order: {
      // Same threshold rule, but interference reaches two hops.
      ExposureSpec s = ExposureSpec::threshold(c_assumed);
      s.r = 2;
      return s;
    }
  }
  return ExposureSpec::mean();
}

MisspecModel ExperimentConfig::misspec_model(double factor) const {
  switch (scenario) {
    case Scenario::weighted_mean:
      return MisspecModel::weighted_mean(resolved_eps(), factor);
    case Scenario::threshold:
      return MisspecModel::threshold(resolved_eps(), c_assumed, factor);
    case Scenario::higher_order: {
      if (msm_table.empty()) return MisspecModel::msm(gamma_minus, gamma_plus, factor);
      MisspecModel m;
      m.kind = MisspecKind::msm;
      m.table = MsmTable::load_csv_file(msm_table);
      m.factor = factor;
      m.validate();
      return m;
    }
  }
  return MisspecModel::msm(gamma_minus, gamma_plus, factor);
}

DgpConfig ExperimentConfig::dgp_config(const Graph& g, std::uint64_t seed) const {
  DgpConfig dgp;
  dgp.d = d;
  dgp.tau = tau;
  dgp.delta = delta;
  dgp.gamma = gamma;
  dgp.noise_sd = noise_sd;
  dgp.spec_true = spec_true(g, derived_seed(seed, 11));
  dgp.spec_assumed = spec_assumed();
  dgp.seed = derived_seed(seed, 12);
  return dgp;
}

NuisanceLearnerSpecs ExperimentConfig::learner_specs() const {
  NuisanceLearnerSpecs specs;
  specs.propensity = learner;
  specs.quantile = learner;
  specs.regression = learner;
  specs.exposure_mode = exposure_mode;
  return specs;
}

ExperimentConfig ExperimentConfig::from_ini(std::istream& in) {
  ExperimentConfig cfg;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']')
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": malformed section header '" + s + "'");
      section = trim(s.substr(1, s.size() - 2));
      if (section.empty())
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": empty section name");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value, got '" + s + "'");
    if (section.empty())
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": key outside any [section]");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    apply_key(cfg, section + "." + key, value);
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: JSON root must be an object");
  ExperimentConfig cfg;
  for (const auto& [section, body] : j.items()) {
    if (!body.is_object())
      throw std::invalid_argument("config: JSON section '" + section +
                                  "' must be an object");
    for (const auto& [key, value] : body.items()) {
      std::string text_value;
      if (value.is_string()) {
        text_value = value.get<std::string>();
      } else if (value.is_array()) {
        std::string joined;
        for (const auto& item : value) {
          if (!joined.empty()) joined += ",";
          joined += item.is_string() ? item.get<std::string>() : item.dump();
        }
        text_value = joined;
      } else {
        text_value = value.dump();
      }
      apply_key(cfg, section + "." + key, text_value);
    }
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{')
    return from_json_text(text);
  std::istringstream stream(text);
  return from_ini(stream);
}

// ---------------------------------------------------------------------------
// Records and emission

bool operator==(const ResultRecord& a, const ResultRecord& b) {
  return a.run == b.run && field_eq(a.factor, b.factor) && a.scenario == b.scenario &&
         a.estimand == b.estimand && field_eq(a.t, b.t) && field_eq(a.z, b.z) &&
         field_eq(a.t_prime, b.t_prime) && field_eq(a.z_prime, b.z_prime) &&
         field_eq(a.lo, b.lo) && field_eq(a.hi, b.hi) && field_eq(a.truth, b.truth) &&
         a.covered == b.covered && field_eq(a.width, b.width) &&
         field_eq(a.seconds, b.seconds);
}

std::string records_csv(const std::vector<ResultRecord>& records) {
  std::string out(kCsvHeader);
  out += "\n";
  for (const auto& r : records) {
    out += std::to_string(r.run);
    out += ",";
    out += fmt_double(r.factor);
    out += ",";
    out += r.scenario;
    out += ",";
    out += r.estimand;
    out += ",";
    out += fmt_double(r.t);
    out += ",";
    out += fmt_double(r.z);
    out += ",";
    out += fmt_double(r.t_prime);
    out += ",";
    out += fmt_double(r.z_prime);
    out += ",";
    out += fmt_double(r.lo);
    out += ",";
    out += fmt_double(r.hi);
    out += ",";
    out += fmt_double(r.truth);
    out += ",";
    out += r.covered ? "1" : "0";
    out += ",";
    out += fmt_double(r.width);
    out += ",";
    out += fmt_double(r.seconds);
    out += "\n";
  }
  return out;
}

std::vector<ResultRecord> parse_records_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument("records csv: empty input");
  if (trim(line) != kCsvHeader)
    throw std::invalid_argument("records csv: unexpected header '" + line + "'");
  std::vector<ResultRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> fields;
    std::string cur;
    std::istringstream ls(line);
    while (std::getline(ls, cur, ',')) fields.push_back(cur);
    // getline drops one trailing empty field; restore it.
    if (!line.empty() && line.back() == ',') fields.push_back("");
    if (fields.size() != 14)
      throw std::invalid_argument("records csv line " + std::to_string(lineno) +
                                  ": expected 14 fields, got " +
                                  std::to_string(fields.size()));
    ResultRecord r;
    r.run = to_int("run", fields[0]);
    r.factor = parse_field("factor", fields[1]);
    r.scenario = fields[2];
    r.estimand = fields[3];
    r.t = parse_field("t", fields[4]);
    r.z = parse_field("z", fields[5]);
    r.t_prime = parse_field("t_prime", fields[6]);
    r.z_prime = parse_field("z_prime", fields[7]);
    r.lo = parse_field("lo", fields[8]);
    r.hi = parse_field("hi", fields[9]);
    r.truth = parse_field("truth", fields[10]);
    const std::string cov = trim(fields[11]);
    if (cov != "0" && cov != "1")
      throw std::invalid_argument("records csv line " + std::to_string(lineno) +
                                  ": covered must be 0 or 1");
    r.covered = cov == "1";
    r.width = parse_field("width", fields[12]);
    r.seconds = parse_field("seconds", fields[13]);
    out.push_back(std::move(r));
  }
  return out;
}

std::string summary_json(const std::vector<ResultRecord>& records) {
  json j;
  j["n_records"] = records.size();
  double covered = 0.0;
  for (const auto& r : records) covered += r.covered;
  j["coverage_overall"] =
      records.empty() ? 0.0 : covered / static_cast<double>(records.size());

  json factors = json::array();
  for (const auto& fs : summarize_by_factor(records)) {
    json f;
    f["factor"] = fs.factor;
    f["apo_coverage"] = fs.apo_coverage;
    f["capo_coverage"] = fs.capo_coverage;
    f["effect_coverage"] = fs.effect_coverage;
    f["mean_width"] = fs.mean_width;
    f["frac_excluding_zero"] = fs.frac_excluding_zero;
    factors.push_back(f);
  }
  j["by_factor"] = factors;

  // Per-estimand aggregates pooled over factors.
  std::map<std::string, std::tuple<int, int, double>> agg;  // n, covered, width sum
  for (const auto& r : records) {
    auto& [n, c, w] = agg[r.estimand];
    ++n;
    c += r.covered;
    w += r.width;
  }
  json est;
  for (const auto& [name, tup] : agg) {
    const auto& [n, c, w] = tup;
    est[name] = {{"n", n},
                 {"coverage", static_cast<double>(c) / n},
                 {"mean_width", w / n}};
  }
  j["by_estimand"] = est;
  return j.dump(2);
}

void emit_results(const std::vector<ResultRecord>& records, const std::string& path,
                  const std::string& format) {
  std::string base = path;
  for (const char* ext : {".csv", ".json"}) {
    const std::string e(ext);
    if (base.size() > e.size() && base.compare(base.size() - e.size(), e.size(), e) == 0)
      base.resize(base.size() - e.size());
  }
  auto write_file = [](const std::string& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("emit_results: cannot open '" + p + "'");
    out << content;
    if (!out.good()) throw std::runtime_error("emit_results: write failed for '" + p + "'");
  };
  if (format == "csv") {
    write_file(base + ".csv", records_csv(records));
    write_file(base + ".summary.json", summary_json(records) + "\n");
  } else if (format == "json") {
    json j;
    json rows = json::array();
    for (const auto& r : records) {
      json row;
      row["run"] = r.run;
      row["factor"] = r.factor;
      row["scenario"] = r.scenario;
      row["estimand"] = r.estimand;
      row["t"] = r.t;
      row["z"] = r.z;
      row["t_prime"] = r.t_prime;
      row["z_prime"] = r.z_prime;
      row["lo"] = r.lo;
      row["hi"] = r.hi;
      row["truth"] = r.truth;
      row["covered"] = r.covered;
      row["width"] = r.width;
      row["seconds"] = r.seconds;
      rows.push_back(row);
    }
    j["records"] = rows;
    j["summary"] = json::parse(summary_json(records));
    write_file(base + ".json", j.dump(2) + "\n");
  } else {
    throw std::invalid_argument("emit_results: format must be csv or json");
  }
}

double spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("spearman_rho: need two equally sized samples");
  auto ranks = [](const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&v](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // average rank on ties
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double num = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va <= 0.0 || vb <= 0.0) return 0.0;  // a constant sample carries no order
  return num / std::sqrt(va * vb);
}

double triangulation_max_deviation(int instances, std::uint64_t seed) {
  if (instances < 1)
    throw std::invalid_argument("triangulation: instances must be >= 1");
  Rng rng(seed);
  double worst = 0.0;
  for (int inst = 0; inst < instances; ++inst) {
    DiscreteConditional dc;
    const int m = 2 + static_cast<int>(rng.below(7));
    for (int j = 0; j < m; ++j) {
      dc.support.push_back(rng.uniform(-3.0, 3.0));
      dc.probs.push_back(rng.uniform(0.05, 1.0));
    }
    std::sort(dc.support.begin(), dc.support.end());
    // Merging close atoms keeps quantile jumps well separated.
    for (std::size_t j = 1; j < dc.support.size(); ++j)
      if (dc.support[j] - dc.support[j - 1] < 1e-6) dc.support[j] += 1e-3 * (j + 1);
    const double total = pairwise_sum(dc.probs);
    for (auto& p : dc.probs) p /= total;
    dc.validate();

    // Every tenth instance pins a budget at its degenerate edge.
    double bm = rng.uniform(0.15, 1.0);
    double bp = rng.uniform(1.0, 6.0);
    if (inst % 10 == 7) bm = 1.0;
    if (inst % 10 == 9) bp = 1.0;

    const ScanResult scan = rockafellar_scan(dc, bm, bp);
    const auto [tilt_plus, tilt_minus] = tilted_density_bound(dc, bm, bp);

    for (const bool upper : {true, false}) {
      const double alpha = alpha_level(bm, bp, upper);
      const double q = dc.quantile(clamp(alpha, 1e-12, 1.0 - 1e-12));
      double up = 0.0, low = 0.0;
      for (std::size_t j = 0; j < dc.support.size(); ++j) {
        up += dc.probs[j] * pos(dc.support[j] - q);
        low += dc.probs[j] * pos(q - dc.support[j]);
      }
      const double closed = capo_closed_form(upper, q, up, low, bm, bp);
      const double scanned = upper ? scan.mu_plus : scan.mu_minus;
      const double tilted = upper ? tilt_plus : tilt_minus;
      worst = std::max(worst, std::abs(closed - scanned));
      worst = std::max(worst, std::abs(closed - tilted));
      worst = std::max(worst, std::abs(scanned - tilted));
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Injected ground-truth nuisances

CrossfitNuisances oracle_nuisances(const Dataset& data, const Graph& g,
                                   const DgpConfig& cfg, const MisspecModel& misspec,
                                   double t, double z, double eps_clip,
                                   const OracleNuisanceOptions& opt) {
  misspec.validate();
  const auto& st = cfg.spec_true;
  const auto& sa = cfg.spec_assumed;
  const bool same = st.kind == sa.kind && st.r == sa.r && std::abs(st.c - sa.c) < 1e-12 &&
                    st.weights == sa.weights;
  if (!same)
    throw std::invalid_argument(
        "oracle_nuisances: true and assumed exposure mappings must coincide "
        "(otherwise the conditional outcome law is not the single Gaussian "
        "these closed forms describe)");
  if (sa.kind == ExposureKind::weighted_mean)
    throw std::invalid_argument(
        "oracle_nuisances: weighted_mean has no analytic exposure propensity");

  const int n = static_cast<int>(data.size());
  if (g.node_count() != n)
    throw std::invalid_argument("oracle_nuisances: graph and data sizes differ");

  const Vector beta = cfg.resolved_beta();
  std::vector<double> unit_probs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    unit_probs[static_cast<std::size_t>(i)] =
        true_propensity(data.x.row(i).transpose(), beta);
  auto ep = std::make_shared<ExposurePropensity>(
      ExposurePropensity::analytic(g, sa, unit_probs, eps_clip));

  auto bounds = std::make_shared<std::vector<RatioBounds>>(build_node_bounds(
      misspec, g, sa, data.x,
      [&beta](int, XRef xr) { return true_propensity(xr, beta); }));

  // Perturbation shape for the orthogonality probes; zero deltas give
  // the exact nuisances.
  auto shape = [](XRef x) { return 0.5 * std::sin(2.0 * x[0]); };
  const double sd = cfg.noise_sd;
  const DgpConfig dgp = cfg;

  NuisanceSet ns;
  ns.t_target = t;
  ns.z_target = z;
  ns.continuous_z = false;
  ns.eps_clip = eps_clip;
  ns.trained_on = 0;

  ns.unit_propensity = [beta, opt, shape](int, XRef x) {
    const double p = true_propensity(x, beta) * (1.0 + opt.delta_pi * shape(x));
    return clamp(p, 1e-3, 1.0 - 1e-3);
  };
  ns.exposure_propensity = [ep, opt, shape, eps_clip](int node, double zq, XRef x) {
    const double p = ep->evaluate(node, zq, x) * (1.0 + opt.delta_pi * shape(x));
    return clamp(p, eps_clip, 1.0);
  };

  // The true quantile at the level the node's ratio bounds pick for
  // the requested endpoint, optionally shifted for the Q-probe.
  auto quantile_at = [dgp, sd, opt, shape, bounds](bool upper, int node, double tq,
                                                   double zq, XRef x) {
    const RatioBounds& rb = (*bounds)[node];
    const double a = clamp(alpha_level(rb.b_minus(zq), rb.b_plus(zq), upper), 1e-10,
                           1.0 - 1e-10);
    return outcome_mean(dgp, tq, zq, x) + sd * norm_quantile(a) +
           opt.delta_q * shape(x);
  };
  ns.quantile_upper = [quantile_at](int node, double tq, double zq, XRef x) {
    return quantile_at(true, node, tq, zq, x);
  };
  ns.quantile_lower = [quantile_at](int node, double tq, double zq, XRef x) {
    return quantile_at(false, node, tq, zq, x);
  };

  // Tail moments evaluated at the endpoint's (possibly shifted)
  // quantile, then scaled by the gamma perturbation. Anchoring them at
  // the shifted quantile keeps the Q-probe second order: the closed
  // form then traces the variational objective, which is flat at the
  // true quantile.
  auto tail = [dgp, sd, opt, shape, quantile_at](bool upper_endpoint, bool upper_tail,
                                                 int node, double tq, double zq,
                                                 XRef x) {
    const double q = quantile_at(upper_endpoint, node, tq, zq, x);
    const double m = outcome_mean(dgp, tq, zq, x);
    const double u = (q - m) / sd;
    const double v = upper_tail ? sd * (norm_pdf(u) - u * (1.0 - norm_cdf(u)))
                                : sd * (u * norm_cdf(u) + norm_pdf(u));
    return pos(v) * (1.0 + opt.delta_gamma * shape(x));
  };
  ns.tail_up_upper = [tail](int node, double tq, double zq, XRef x) {
    return tail(true, true, node, tq, zq, x);
  };
  ns.tail_low_upper = [tail](int node, double tq, double zq, XRef x) {
    return tail(true, false, node, tq, zq, x);
  };
  ns.tail_up_lower = [tail](int node, double tq, double zq, XRef x) {
    return tail(false, true, node, tq, zq, x);
  };
  ns.tail_low_lower = [tail](int node, double tq, double zq, XRef x) {
    return tail(false, false, node, tq, zq, x);
  };

  CrossfitNuisances cf;
  cf.folds.assignments = IntVector::Zero(n);
  cf.folds.K = 1;
  cf.folds.seed = 0;
  cf.sets.push_back(std::move(ns));
  cf.bounds.push_back(*bounds);
  return cf;
}

// ---------------------------------------------------------------------------
// Threshold-scenario analytic oracle

ThresholdOracle threshold_oracle_bounds(const Dataset& data, const Graph& g,
                                        const ExperimentConfig& cfg,
                                        const DgpConfig& dgp_cfg, double factor,
                                        double t, double z) {
  if (cfg.scenario != Scenario::threshold)
    throw std::invalid_argument("threshold_oracle_bounds: threshold scenario only");
  const MisspecModel misspec = cfg.misspec_model(factor);
  const Vector beta = dgp_cfg.resolved_beta();
  const bool z_one = z >= 0.5;

  std::vector<double> lows, highs, truths;
  lows.reserve(static_cast<std::size_t>(g.node_count()));
  highs.reserve(static_cast<std::size_t>(g.node_count()));
  truths.reserve(static_cast<std::size_t>(g.node_count()));
  for (int i = 0; i < g.node_count(); ++i) {
    const int deg = g.degree(i);
    GaussianMixture gm;
    gm.sd = dgp_cfg.noise_sd;
    RatioBounds rb;
    if (deg == 0) {
      if (z_one) continue;  // an isolate never reaches exposure 1
      rb = RatioBounds::constants(1.0, 1.0);
      gm.weights = {1.0};
      gm.means = {outcome_mean(dgp_cfg, t, 0.0, data.x.row(i).transpose())};
    } else {
      std::vector<double> probs;
      probs.reserve(static_cast<std::size_t>(deg));
      auto [nb, ne] = g.neighbors(i);
      for (const int* p = nb; p != ne; ++p)
        probs.push_back(true_propensity(data.x.row(*p).transpose(), beta));
      const Vector pmf = poisson_binomial_pmf(probs);
      rb = ratio_bounds_for_model(misspec, deg, pmf, data.x(i, 0));

      // Counts compatible with the assumed exposure value, split by the
      // true exposure they induce. The conditional outcome law is a
      // two-component Gaussian location mixture.
      const long long k_c = ceil_count(cfg.c_assumed * deg);
      const long long k_star = ceil_count(cfg.c_true * deg);
      double mass[2] = {0.0, 0.0};
      for (long long k = 0; k <= deg; ++k) {
        if ((k >= k_c) != z_one) continue;
        mass[k >= k_star ? 1 : 0] += pmf[static_cast<Eigen::Index>(k)];
      }
      const double total = mass[0] + mass[1];
      if (total <= 0.0) continue;
      for (int s = 0; s < 2; ++s) {
        if (mass[s] <= 0.0) continue;
        gm.weights.push_back(mass[s] / total);
        gm.means.push_back(outcome_mean(dgp_cfg, t, static_cast<double>(s),
                                        data.x.row(i).transpose()));
      }
    }
    const double bm = rb.b_minus(z);
    const double bp = rb.b_plus(z);
    lows.push_back(mixture_capo_bound(gm, bm, bp, false));
    highs.push_back(mixture_capo_bound(gm, bm, bp, true));
    truths.push_back(gm.mean());
  }
  if (lows.empty())
    throw std::runtime_error("threshold_oracle_bounds: no node attains this exposure");
  const double count = static_cast<double>(lows.size());
  ThresholdOracle o;
  o.psi_lo = pairwise_sum(lows) / count;
  o.psi_hi = pairwise_sum(highs) / count;
  o.psi_truth = pairwise_sum(truths) / count;
  return o;
}

// ---------------------------------------------------------------------------
// Drivers

ExperimentSummary run_validity(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.scenario == Scenario::higher_order)
    throw std::invalid_argument("run_validity: weighted_mean or threshold scenario only");

  const double t = cfg.t_target;
  const double z = cfg.resolved_z();
  const KernelSpec kernel{KernelKind::epanechnikov, cfg.h};
  const ExposureSpec assumed = cfg.spec_assumed();
  const std::size_t n_runs = static_cast<std::size_t>(cfg.runs);
  const std::size_t n_factors = cfg.factors.size();

  // Grid over the first covariate; remaining coordinates sit at 0.
  Matrix x_grid = Matrix::Zero(cfg.x_grid_points, cfg.d);
  for (int k = 0; k < cfg.x_grid_points; ++k)
    x_grid(k, 0) = -1.0 + 2.0 * k / (cfg.x_grid_points - 1);

  std::vector<std::vector<ResultRecord>> slots(n_runs);
  std::vector<std::vector<int>> capo_cov(n_runs, std::vector<int>(n_factors, 0));
  std::vector<std::vector<int>> capo_tot(n_runs, std::vector<int>(n_factors, 0));

  parallel_for(n_runs, cfg.workers, [&](std::size_t r) {
    const std::uint64_t run_seed = derived_seed(cfg.seed, r + 1);
    const RunData rd = make_run_data(cfg, cfg.n_nodes, run_seed);
    auto& recs = slots[r];
    for (std::size_t fi = 0; fi < n_factors; ++fi) {
      const double factor = cfg.factors[fi];
      const MisspecModel misspec = cfg.misspec_model(factor);
      const auto started = std::chrono::steady_clock::now();

      // Fold splits and learner seeds are shared across factors so a
      // wider budget widens the interval on the same fitted pieces.
      const auto cf1 = crossfit_nuisances(rd.data, rd.g, assumed, misspec, cfg.K, t, z,
                                          cfg.h, cfg.learner_specs(),
                                          derived_seed(run_seed, 21), cfg.eps_clip);
      const auto pv1 =
          compute_pseudo_outcomes(rd.data, rd.g, assumed, cf1, t, z, kernel, true, 1);
      const ApoBounds apo = estimate_apo_bounds(pv1);
      const double apo_truth = subpop_truth(rd.dgp, rd.data, pv1.rows, t, z);

      ResultRecord apo_rec;
      apo_rec.run = static_cast<int>(r);
      apo_rec.factor = factor;
      apo_rec.scenario = scenario_name(cfg.scenario);
      apo_rec.estimand = "apo";
      apo_rec.t = t;
      apo_rec.z = z;
      apo_rec.lo = apo.lo;
      apo_rec.hi = apo.hi;
      apo_rec.truth = apo_truth;
      apo_rec.covered = apo_truth >= apo.lo && apo_truth <= apo.hi;
      apo_rec.width = apo.hi - apo.lo;

      // The pseudo-outcomes carry inverse-propensity tails, so the
      // second-stage regression needs far larger leaves than the
      // nuisance fits to keep the bound curves from chasing noise.
      LearnerSpec second = cfg.learner;
      second.min_leaf = std::max<int>(
          second.min_leaf, static_cast<int>(pv1.rows.size() / 3));
      const CapoCurve curve = estimate_capo_bounds(pv1, rd.data, x_grid, second);
      double lo_sum = 0.0, hi_sum = 0.0, truth_sum = 0.0;
      for (Eigen::Index k = 0; k < x_grid.rows(); ++k) {
        const double truth_k = outcome_mean(rd.dgp, t, z, x_grid.row(k).transpose());
        capo_tot[r][fi] += 1;
        capo_cov[r][fi] += (truth_k >= curve.lo[k] && truth_k <= curve.hi[k]);
        lo_sum += curve.lo[k];
        hi_sum += curve.hi[k];
        truth_sum += truth_k;
      }
      const double pts = static_cast<double>(x_grid.rows());
      ResultRecord capo_rec;
      capo_rec.run = static_cast<int>(r);
      capo_rec.factor = factor;
      capo_rec.scenario = apo_rec.scenario;
      capo_rec.estimand = "capo";  // grid averages; pointwise coverage is summarized
      capo_rec.t = t;
      capo_rec.z = z;
      capo_rec.lo = lo_sum / pts;
      capo_rec.hi = hi_sum / pts;
      capo_rec.truth = truth_sum / pts;
      capo_rec.covered = capo_rec.truth >= capo_rec.lo && capo_rec.truth <= capo_rec.hi;
      capo_rec.width = (hi_sum - lo_sum) / pts;

      const auto cf0 = crossfit_nuisances(rd.data, rd.g, assumed, misspec, cfg.K,
                                          1.0 - t, z, cfg.h, cfg.learner_specs(),
                                          derived_seed(run_seed, 22), cfg.eps_clip);
      const auto pv0 = compute_pseudo_outcomes(rd.data, rd.g, assumed, cf0, 1.0 - t, z,
                                               kernel, true, 1);
      const EffectBounds eff = effect_bounds(EffectKind::direct, pv1, pv0);
      const double eff_truth = true_effect(rd.dgp, EffectKind::direct, t, z, 1.0 - t, z);
      ResultRecord eff_rec;
      eff_rec.run = static_cast<int>(r);
      eff_rec.factor = factor;
      eff_rec.scenario = apo_rec.scenario;
      eff_rec.estimand = "direct";
      eff_rec.t = t;
      eff_rec.z = z;
      eff_rec.t_prime = 1.0 - t;
      eff_rec.z_prime = z;
      eff_rec.lo = eff.lo;
      eff_rec.hi = eff.hi;
      eff_rec.truth = eff_truth;
      eff_rec.covered = eff_truth >= eff.lo && eff_truth <= eff.hi;
      eff_rec.width = eff.hi - eff.lo;

      const double secs = elapsed_seconds(started);
      apo_rec.seconds = secs;
      capo_rec.seconds = secs;
      eff_rec.seconds = secs;
      recs.push_back(std::move(apo_rec));
      recs.push_back(std::move(capo_rec));
      recs.push_back(std::move(eff_rec));
    }
  });

  ExperimentSummary summary;
  summary.mode = ExperimentMode::validity;
  for (auto& s : slots)
    summary.records.insert(summary.records.end(), s.begin(), s.end());
  sort_records(summary.records);
  summary.by_factor = summarize_by_factor(summary.records);
  // Replace the record-level CAPO rate with the pooled pointwise one.
  for (auto& fs : summary.by_factor) {
    int cov = 0, tot = 0;
    for (std::size_t fi = 0; fi < n_factors; ++fi) {
      if (std::abs(cfg.factors[fi] - fs.factor) > 1e-12) continue;
      for (std::size_t r = 0; r < n_runs; ++r) {
        cov += capo_cov[r][fi];
        tot += capo_tot[r][fi];
      }
    }
    if (tot > 0) fs.capo_coverage = static_cast<double>(cov) / tot;
  }
  return summary;
}

ExperimentSummary run_convergence(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.scenario != Scenario::threshold)
    throw std::invalid_argument(
        "run_convergence: threshold scenario only (the analytic oracle needs the "
        "two-component mixture structure)");

  const double t = cfg.t_target;
  const double z = cfg.resolved_z();
  const KernelSpec kernel{KernelKind::epanechnikov, cfg.h};
  const ExposureSpec assumed = cfg.spec_assumed();
  const std::vector<int> ns = cfg.resolved_n_list();
  const std::size_t n_runs = static_cast<std::size_t>(cfg.runs);
  const std::size_t tasks = ns.size() * n_runs;

  std::vector<std::vector<ResultRecord>> slots(tasks);
  std::vector<std::vector<double>> mae_o(ns.size(), std::vector<double>(n_runs, 0.0));
  std::vector<std::vector<double>> mae_p(ns.size(), std::vector<double>(n_runs, 0.0));

  parallel_for(tasks, cfg.workers, [&](std::size_t task) {
    const std::size_t ni = task / n_runs;
    const std::size_t r = task % n_runs;
    const std::uint64_t run_seed =
        derived_seed(derived_seed(cfg.seed, ni + 1), r + 1);
    const RunData rd = make_run_data(cfg, ns[ni], run_seed);
    const auto started = std::chrono::steady_clock::now();

    // The sweep variable is N; bounds use the correctly specified
    // model (factor 1) because the oracle comparison is about
    // estimation error, not sensitivity budgets.
    const MisspecModel misspec = cfg.misspec_model(1.0);
    const auto cf = crossfit_nuisances(rd.data, rd.g, assumed, misspec, cfg.K, t, z,
                                       cfg.h, cfg.learner_specs(),
                                       derived_seed(run_seed, 21), cfg.eps_clip);
    const auto pv =
        compute_pseudo_outcomes(rd.data, rd.g, assumed, cf, t, z, kernel, true, 1);
    const ApoBounds ortho = estimate_apo_bounds(pv);
    const ApoBounds plug = plugin_estimate(rd.data, rd.g, assumed, cf, t, z, kernel);
    const ThresholdOracle oracle =
        threshold_oracle_bounds(rd.data, rd.g, cfg, rd.dgp, 1.0, t, z);

    mae_o[ni][r] =
        0.5 * (std::abs(ortho.lo - oracle.psi_lo) + std::abs(ortho.hi - oracle.psi_hi));
    mae_p[ni][r] =
        0.5 * (std::abs(plug.lo - oracle.psi_lo) + std::abs(plug.hi - oracle.psi_hi));
    const double secs = elapsed_seconds(started);

    // The factor column carries N here: it is the axis the convergence
    // experiment sweeps, and the records stay self-describing.
    auto make = [&](const char* estimand, double lo, double hi, double sec) {
      ResultRecord rec;
      rec.run = static_cast<int>(r);
      rec.factor = static_cast<double>(ns[ni]);
      rec.scenario = scenario_name(cfg.scenario);
      rec.estimand = estimand;
      rec.t = t;
      rec.z = z;
      rec.lo = lo;
      rec.hi = hi;
      rec.truth = oracle.psi_truth;
      rec.covered = rec.truth >= lo && rec.truth <= hi;
      rec.width = hi - lo;
      rec.seconds = sec;
      return rec;
    };
    auto& recs = slots[task];
    recs.push_back(make("apo", ortho.lo, ortho.hi, secs));
    recs.push_back(make("apo_plugin", plug.lo, plug.hi, secs));
    recs.push_back(make("apo_oracle", oracle.psi_lo, oracle.psi_hi, 0.0));
  });

  ExperimentSummary summary;
  summary.mode = ExperimentMode::convergence;
  for (auto& s : slots)
    summary.records.insert(summary.records.end(), s.begin(), s.end());
  sort_records(summary.records);
  summary.by_factor = summarize_by_factor(summary.records);
  summary.n_grid = ns;
  summary.mae_ortho = mae_o;
  summary.mae_plugin = mae_p;

  std::vector<double> n_axis, mean_mae;
  for (std::size_t ni = 0; ni < ns.size(); ++ni) {
    n_axis.push_back(static_cast<double>(ns[ni]));
    mean_mae.push_back(pairwise_sum(mae_o[ni]) / static_cast<double>(n_runs));
  }
  summary.spearman_rho = ns.size() >= 2 ? spearman_rho(n_axis, mean_mae) : 0.0;
  int wins = 0;
  for (std::size_t r = 0; r < n_runs; ++r)
    wins += mae_o.back()[r] < mae_p.back()[r];
  summary.ortho_wins_at_largest = wins;
  return summary;
}

ExperimentSummary run_width(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.scenario != Scenario::higher_order)
    throw std::invalid_argument("run_width: higher_order scenario with msm bounds only");

  const KernelSpec kernel{KernelKind::epanechnikov, cfg.h};
  const ExposureSpec assumed = cfg.spec_assumed();
  const std::size_t n_runs = static_cast<std::size_t>(cfg.runs);
  const std::size_t n_factors = cfg.factors.size();

  std::vector<std::vector<ResultRecord>> slots(n_runs);
  std::vector<std::vector<double>> rel_sum(n_runs, std::vector<double>(n_factors, 0.0));
  std::vector<std::vector<int>> rel_n(n_runs, std::vector<int>(n_factors, 0));

  parallel_for(n_runs, cfg.workers, [&](std::size_t r) {
    const std::uint64_t run_seed = derived_seed(cfg.seed, r + 1);
    const RunData rd = make_run_data(cfg, cfg.n_nodes, run_seed);
    const double y_range = rd.data.y.maxCoeff() - rd.data.y.minCoeff();
    auto& recs = slots[r];
    for (std::size_t fi = 0; fi < n_factors; ++fi) {
      const double factor = cfg.factors[fi];
      const MisspecModel misspec = cfg.misspec_model(factor);
      for (const double z : cfg.z_list) {
        const auto started = std::chrono::steady_clock::now();
        const auto cf1 = crossfit_nuisances(rd.data, rd.g, assumed, misspec, cfg.K, 1.0,
                                            z, cfg.h, cfg.learner_specs(),
                                            derived_seed(run_seed, 21), cfg.eps_clip);
        const auto pv1 = compute_pseudo_outcomes(rd.data, rd.g, assumed, cf1, 1.0, z,
                                                 kernel, true, 1);
        const auto cf0 = crossfit_nuisances(rd.data, rd.g, assumed, misspec, cfg.K, 0.0,
                                            z, cfg.h, cfg.learner_specs(),
                                            derived_seed(run_seed, 22), cfg.eps_clip);
        const auto pv0 = compute_pseudo_outcomes(rd.data, rd.g, assumed, cf0, 0.0, z,
                                                 kernel, true, 1);
        const EffectBounds eff = effect_bounds(EffectKind::direct, pv1, pv0);
        const double truth = true_effect(rd.dgp, EffectKind::direct, 1.0, z, 0.0, z);

        ResultRecord rec;
        rec.run = static_cast<int>(r);
        rec.factor = factor;
        rec.scenario = scenario_name(cfg.scenario);
        rec.estimand = "direct";
        rec.t = 1.0;
        rec.z = z;
        rec.t_prime = 0.0;
        rec.z_prime = z;
        rec.lo = eff.lo;
        rec.hi = eff.hi;
        rec.truth = truth;
        rec.covered = truth >= eff.lo && truth <= eff.hi;
        rec.width = eff.hi - eff.lo;
        rec.seconds = elapsed_seconds(started);
        recs.push_back(std::move(rec));

        if (y_range > 0.0) {
          rel_sum[r][fi] += (eff.hi - eff.lo) / y_range;
          rel_n[r][fi] += 1;
        }
      }
    }
  });

  ExperimentSummary summary;
  summary.mode = ExperimentMode::width;
  for (auto& s : slots)
    summary.records.insert(summary.records.end(), s.begin(), s.end());
  sort_records(summary.records);
  summary.by_factor = summarize_by_factor(summary.records);
  for (auto& fs : summary.by_factor) {
    double sum = 0.0;
    int count = 0;
    for (std::size_t fi = 0; fi < n_factors; ++fi) {
      if (std::abs(cfg.factors[fi] - fs.factor) > 1e-12) continue;
      for (std::size_t r = 0; r < n_runs; ++r) {
        sum += rel_sum[r][fi];
        count += rel_n[r][fi];
      }
    }
    if (count > 0) fs.mean_relative_width = sum / count;
  }
  return summary;
}

ExperimentSummary run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::cout << "netbound experiment: scenario=" << scenario_name(cfg.scenario)
            << " mode=" << mode_name(cfg.mode) << " runs=" << cfg.runs
            << " seed=" << cfg.seed << "\n";
  std::cout << "network: " << cfg.resolved_generator() << " n=" << cfg.n_nodes;
  if (!cfg.n_list.empty()) {
    std::cout << " n_list=";
    for (std::size_t i = 0; i < cfg.n_list.size(); ++i)
      std::cout << (i ? "," : "") << cfg.n_list[i];
  }
  std::cout << "\n";
  for (const auto& dev : cfg.deviations())
    std::cout << "deviation from reference design: " << dev << "\n";
  switch (cfg.mode) {
    case ExperimentMode::validity:
      return run_validity(cfg);
    case ExperimentMode::convergence:
      return run_convergence(cfg);
    case ExperimentMode::width:
      return run_width(cfg);
  }
  throw std::logic_error("run_experiment: unhandled mode");
}

}  // namespace netbound
