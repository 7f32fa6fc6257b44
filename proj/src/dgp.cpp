#include "netbound/dgp.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <vector>

namespace netbound {

namespace {

void write_double(std::ostream& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out << buf;
}

}  // namespace

Vector DgpConfig::resolved_beta() const {
  if (beta_t.size() > 0) {
    if (beta_t.size() != d)
      throw std::invalid_argument("DgpConfig: beta_t length does not match d");
    return beta_t;
  }
  return Vector::Constant(d, 0.8 / std::sqrt(static_cast<double>(d)));
}

Matrix sample_covariates(int n, int d, std::uint64_t seed) {
  if (n < 1 || d < 1)
    throw std::invalid_argument("sample_covariates: n and d must be >= 1");
  Rng rng(seed);
  Matrix x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = rng.uniform(-1.0, 1.0);
  return x;
}

double true_propensity(const Eigen::Ref<const Vector>& x,
                       const Eigen::Ref<const Vector>& beta_t) {
  if (x.size() != beta_t.size())
    throw std::invalid_argument("true_propensity: dimension mismatch");
  return logistic(beta_t.dot(x));
}

IntVector assign_treatments(const Matrix& x, const Eigen::Ref<const Vector>& beta_t,
                            std::uint64_t seed) {
  Rng rng(seed);
  IntVector t(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    t[i] = rng.bernoulli(true_propensity(x.row(i).transpose(), beta_t)) ? 1 : 0;
  return t;
}

double baseline_f(const Eigen::Ref<const Vector>& x) {
  double f = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double v = x[j];
    f += 0.6 * std::tanh(v) + 0.4 * std::sin(v) - 0.2 * v * v;
  }
  return f;
}

double outcome_mean(const DgpConfig& cfg, double t, double z,
                    const Eigen::Ref<const Vector>& x) {
  return cfg.tau * t + cfg.delta * z + cfg.gamma * t * z + baseline_f(x);
}

Dataset simulate(const DgpConfig& cfg, const Graph& g) {
  if (cfg.noise_sd < 0.0)
    throw std::invalid_argument("simulate: noise_sd must be >= 0");
  const int n = g.node_count();
  Dataset data;
  Rng root(cfg.seed);
  data.x = sample_covariates(n, cfg.d, root.child(1).next_u64());
  data.t = assign_treatments(data.x, cfg.resolved_beta(), root.child(2).next_u64());
  data.z_true = apply_exposure(cfg.spec_true, g, data.t);
  data.z_assumed = apply_exposure(cfg.spec_assumed, g, data.t);
  data.y.resize(n);
  Rng noise = root.child(3);
  for (int i = 0; i < n; ++i) {
    data.y[i] = outcome_mean(cfg, data.t[i], data.z_true.values[i],
                             data.x.row(i).transpose()) +
                cfg.noise_sd * noise.normal();
  }
  return data;
}

double true_effect(const DgpConfig& cfg, EffectKind kind, double t, double z,
                   double t_prime, double z_prime) {
  switch (kind) {
    case EffectKind::direct:
      if (z != z_prime)
        throw std::invalid_argument("true_effect: direct effect requires z == z_prime");
      return cfg.tau * (t - t_prime) + cfg.gamma * (t - t_prime) * z;
    case EffectKind::spillover:
      if (t != t_prime)
        throw std::invalid_argument("true_effect: spillover effect requires t == t_prime");
      return (cfg.delta + cfg.gamma * t) * (z - z_prime);
    case EffectKind::overall:
      return cfg.tau * (t - t_prime) + cfg.delta * (z - z_prime) +
             cfg.gamma * (t * z - t_prime * z_prime);
  }
  throw std::logic_error("true_effect: unknown kind");
}

void Dataset::save_csv(std::ostream& out) const {
  const Eigen::Index n = size();
  const Eigen::Index d = x.cols();
  out << "node_id";
  for (Eigen::Index j = 0; j < d; ++j) out << ",x_" << j;
  out << ",t,z_true,z_assumed,y\n";
  for (Eigen::Index i = 0; i < n; ++i) {
    out << i;
    for (Eigen::Index j = 0; j < d; ++j) {
      out << ",";
      write_double(out, x(i, j));
    }
    out << "," << t[i] << ",";
    write_double(out, z_true.values[i]);
    out << ",";
    write_double(out, z_assumed.values[i]);
    out << ",";
    write_double(out, y[i]);
    out << "\n";
  }
}

void Dataset::save_csv_file(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("Dataset::save_csv_file: cannot open " + path);
  save_csv(out);
}

Dataset Dataset::load_csv(std::istream& in) {
  std::string header;
  if (!std::getline(in, header))
    throw std::runtime_error("Dataset::load_csv: empty input");
  int d = 0;
  {
    std::istringstream hs(header);
    std::string col;
    while (std::getline(hs, col, ','))
      if (col.rfind("x_", 0) == 0) ++d;
  }
  if (d == 0) throw std::runtime_error("Dataset::load_csv: no covariate columns");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> fields;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) fields.push_back(std::stod(cell));
    if (static_cast<int>(fields.size()) != d + 5)
      throw std::runtime_error("Dataset::load_csv: wrong field count in '" + line + "'");
    rows.push_back(std::move(fields));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  Dataset data;
  data.x.resize(n, d);
  data.t.resize(n);
  data.z_true.values.resize(n);
  data.z_assumed.values.resize(n);
  data.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& f = rows[static_cast<std::size_t>(i)];
    for (int j = 0; j < d; ++j) data.x(i, j) = f[static_cast<std::size_t>(1 + j)];
    data.t[i] = static_cast<int>(f[static_cast<std::size_t>(1 + d)]);
    data.z_true.values[i] = f[static_cast<std::size_t>(2 + d)];
    data.z_assumed.values[i] = f[static_cast<std::size_t>(3 + d)];
    data.y[i] = f[static_cast<std::size_t>(4 + d)];
  }
  return data;
}

Dataset Dataset::load_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("Dataset::load_csv_file: cannot open " + path);
  return load_csv(in);
}

}  // namespace netbound
