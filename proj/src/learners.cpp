#include "netbound/learners.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace netbound {

namespace {

/// Smallest value v among (values, weights) with cumulative weight at
/// or above target_mass; solves the weighted pinball first-order
/// condition when target_mass = sum(w_i * alpha_i).
double weighted_quantile(std::vector<double> values, std::vector<double> weights,
                         double target_mass) {
  if (values.empty()) throw std::invalid_argument("weighted_quantile: no values");
  std::vector<int> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return values[a] < values[b]; });
  double cum = 0.0;
  for (int idx : order) {
    cum += weights[idx];
    if (cum >= target_mass - 1e-12) return values[idx];
  }
  return values[order.back()];
}

double epanechnikov_weight(double z_obs, double z_target, double h) {
  const double u = (z_obs - z_target) / h;
  const double k = 0.75 * (1.0 - u * u);
  return k > 0.0 ? k / h : 0.0;
}

int count_ceil(double v) { return static_cast<int>(std::ceil(v - 1e-9)); }

void check_training_inputs(const Matrix& x, const Vector& y, const Vector& weights,
                           LearnerTask task, const Vector& alpha) {
  if (x.rows() == 0) throw std::invalid_argument("learner fit: empty training set");
  if (y.size() != x.rows())
    throw std::invalid_argument("learner fit: x and y row counts differ");
  if (weights.size() != 0 && weights.size() != y.size())
    throw std::invalid_argument("learner fit: weight length mismatch");
  if (task == LearnerTask::quantile && alpha.size() != y.size())
    throw std::invalid_argument("learner fit: quantile task needs per-row alpha");
}

}  // namespace

FoldPlan make_folds(int n, int K, std::uint64_t seed) {
  if (n <= 0) throw std::invalid_argument("make_folds: n must be positive");
  if (K < 2 || K > n) throw std::invalid_argument("make_folds: need 2 <= K <= n");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  FoldPlan plan;
  plan.K = K;
  plan.seed = seed;
  plan.assignments = IntVector::Zero(n);
  // Round-robin over the shuffled order keeps fold sizes within one.
  for (int pos = 0; pos < n; ++pos) plan.assignments[order[pos]] = pos % K;
  return plan;
}

// ---------------------------------------------------------------------------
// Gradient-boosted trees

GbtModel GbtModel::fit(const Matrix& x, const Vector& y, const Vector& weights,
                       LearnerTask task, const Vector& alpha, const LearnerSpec& spec) {
  check_training_inputs(x, y, weights, task, alpha);
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  const double lambda = spec.l2;

  GbtModel model;
  model.learning_rate_ = spec.learning_rate;
  model.task_ = task;

  Vector w = weights.size() ? weights : Vector::Ones(n);
  const double w_total = pairwise_sum(w);
  if (w_total <= 0.0) throw std::invalid_argument("gbt fit: total weight is zero");

  // Quantile bin edges per feature.
  model.bin_edges_.resize(d);
  for (int j = 0; j < d; ++j) {
    std::vector<double> col(n);
    for (int i = 0; i < n; ++i) col[i] = x(i, j);
    std::sort(col.begin(), col.end());
    std::vector<double>& edges = model.bin_edges_[j];
    for (int b = 1; b < spec.bins; ++b) {
      const double e = col[static_cast<std::size_t>(n) * b / spec.bins];
      if (edges.empty() || e > edges.back()) edges.push_back(e);
    }
  }

  // Per-row bin indices, row-major n x d.
  std::vector<int> bin_of(static_cast<std::size_t>(n) * d);
  int max_bins = 1;
  for (int j = 0; j < d; ++j)
    max_bins = std::max(max_bins, static_cast<int>(model.bin_edges_[j].size()) + 1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      const auto& e = model.bin_edges_[j];
      bin_of[static_cast<std::size_t>(i) * d + j] =
          static_cast<int>(std::upper_bound(e.begin(), e.end(), x(i, j)) - e.begin());
    }

  // Base score.
  double wy = 0.0;
  for (int i = 0; i < n; ++i) wy += w[i] * y[i];
  switch (task) {
    case LearnerTask::regression:
      model.base_ = wy / w_total;
      break;
    case LearnerTask::classification: {
      const double p = clamp(wy / w_total, 1e-6, 1.0 - 1e-6);
      model.base_ = std::log(p / (1.0 - p));
      break;
    }
    case LearnerTask::quantile: {
      double target = 0.0;
      for (int i = 0; i < n; ++i) target += w[i] * alpha[i];
      std::vector<double> vals(y.data(), y.data() + n), ws(w.data(), w.data() + n);
      model.base_ = weighted_quantile(std::move(vals), std::move(ws), target);
      break;
    }
  }

  Vector score = Vector::Constant(n, model.base_);
  Vector g(n), h(n);
  std::vector<int> node_of(n);
  struct BuildNode {
    Node node;
    double G = 0.0, H = 0.0;
    int count = 0;
    int depth = 0;
    int split_bin = -1;
    bool open = true;
  };

  for (int m = 0; m < spec.trees; ++m) {
    // Weighted gradients and hessians for the current scores.
    for (int i = 0; i < n; ++i) {
      switch (task) {
        case LearnerTask::regression:
          g[i] = (score[i] - y[i]) * w[i];
          h[i] = w[i];
          break;
        case LearnerTask::classification: {
          const double p = logistic(score[i]);
          g[i] = (p - y[i]) * w[i];
          h[i] = std::max(p * (1.0 - p), 1e-6) * w[i];
          break;
        }
        case LearnerTask::quantile:
          g[i] = ((y[i] < score[i] ? 1.0 : 0.0) - alpha[i]) * w[i];
          h[i] = w[i];
          break;
      }
    }

    std::vector<BuildNode> nodes(1);
    std::fill(node_of.begin(), node_of.end(), 0);
    for (int i = 0; i < n; ++i) {
      nodes[0].G += g[i];
      nodes[0].H += h[i];
    }
    nodes[0].count = n;

    for (int level = 0; level < spec.depth; ++level) {
      std::vector<int> active;
      for (int id = 0; id < static_cast<int>(nodes.size()); ++id)
        if (nodes[id].open && nodes[id].depth == level &&
            nodes[id].count >= 2 * spec.min_leaf)
          active.push_back(id);
      if (active.empty()) break;

      std::vector<int> slot(nodes.size(), -1);
      for (int a = 0; a < static_cast<int>(active.size()); ++a) slot[active[a]] = a;

      // Histograms: per active node, feature, bin.
      const std::size_t cells =
          active.size() * static_cast<std::size_t>(d) * max_bins;
      std::vector<double> hist_g(cells, 0.0), hist_h(cells, 0.0);
      std::vector<int> hist_c(cells, 0);
      for (int i = 0; i < n; ++i) {
        const int id = node_of[i];
        if (id >= static_cast<int>(slot.size()) || slot[id] < 0) continue;
        const std::size_t base =
            (static_cast<std::size_t>(slot[id]) * d) * max_bins;
        for (int j = 0; j < d; ++j) {
          const std::size_t cell =
              base + static_cast<std::size_t>(j) * max_bins +
              bin_of[static_cast<std::size_t>(i) * d + j];
          hist_g[cell] += g[i];
          hist_h[cell] += h[i];
          hist_c[cell] += 1;
        }
      }

      struct Split {
        int feature = -1, bin = -1;
        double gain = 0.0;
      };
      std::vector<Split> best(active.size());
      for (int a = 0; a < static_cast<int>(active.size()); ++a) {
        const BuildNode& nd = nodes[active[a]];
        const double parent = nd.G * nd.G / (nd.H + lambda);
        for (int j = 0; j < d; ++j) {
          const std::size_t base =
              (static_cast<std::size_t>(a) * d + j) * max_bins;
          double Gl = 0.0, Hl = 0.0;
          int Cl = 0;
          const int nb = static_cast<int>(model.bin_edges_[j].size());
          for (int b = 0; b < nb; ++b) {  // split sends bin <= b left
            Gl += hist_g[base + b];
            Hl += hist_h[base + b];
            Cl += hist_c[base + b];
            const int Cr = nd.count - Cl;
            if (Cl < spec.min_leaf || Cr < spec.min_leaf) continue;
            const double Gr = nd.G - Gl, Hr = nd.H - Hl;
            const double gain =
                Gl * Gl / (Hl + lambda) + Gr * Gr / (Hr + lambda) - parent;
            if (gain > best[a].gain + 1e-12) best[a] = {j, b, gain};
          }
        }
      }

      for (int a = 0; a < static_cast<int>(active.size()); ++a) {
        const int id = active[a];
        if (best[a].feature < 0) {
          nodes[id].open = false;
          continue;
        }
        nodes[id].node.feature = best[a].feature;
        nodes[id].node.threshold = model.bin_edges_[best[a].feature][best[a].bin];
        nodes[id].node.left = static_cast<int>(nodes.size());
        nodes[id].node.right = static_cast<int>(nodes.size()) + 1;
        nodes[id].split_bin = best[a].bin;
        nodes[id].open = false;
        BuildNode left, right;
        left.depth = right.depth = level + 1;
        nodes.push_back(left);
        nodes.push_back(right);
      }

      // Route rows to children and refresh child statistics.
      for (int i = 0; i < n; ++i) {
        const int id = node_of[i];
        if (id >= static_cast<int>(slot.size()) || slot[id] < 0) continue;
        const BuildNode& nd = nodes[id];
        if (nd.node.feature < 0) continue;
        const int bin = bin_of[static_cast<std::size_t>(i) * d + nd.node.feature];
        const int child = bin <= nd.split_bin ? nd.node.left : nd.node.right;
        node_of[i] = child;
        nodes[child].G += g[i];
        nodes[child].H += h[i];
        nodes[child].count += 1;
      }
    }

    // Leaf values.
    if (task == LearnerTask::quantile) {
      std::vector<std::vector<double>> rs(nodes.size()), ws(nodes.size());
      std::vector<double> targets(nodes.size(), 0.0);
      for (int i = 0; i < n; ++i) {
        const int id = node_of[i];
        rs[id].push_back(y[i] - score[i]);
        ws[id].push_back(w[i]);
        targets[id] += w[i] * alpha[i];
      }
      for (std::size_t id = 0; id < nodes.size(); ++id)
        if (nodes[id].node.feature < 0)
          nodes[id].node.value =
              rs[id].empty() ? 0.0
                             : weighted_quantile(std::move(rs[id]), std::move(ws[id]),
                                                 targets[id]);
    } else {
      for (auto& nd : nodes)
        if (nd.node.feature < 0)
          nd.node.value = nd.count > 0 ? -nd.G / (nd.H + lambda) : 0.0;
    }

    std::vector<Node> tree(nodes.size());
    for (std::size_t id = 0; id < nodes.size(); ++id) tree[id] = nodes[id].node;
    for (int i = 0; i < n; ++i)
      score[i] += spec.learning_rate * tree[node_of[i]].value;
    model.trees_.push_back(std::move(tree));
  }
  return model;
}

double GbtModel::raw_score(const XRef& x) const {
  double s = base_;
  for (const auto& tree : trees_) {
    int id = 0;
    while (tree[id].feature >= 0)
      id = x[tree[id].feature] < tree[id].threshold ? tree[id].left : tree[id].right;
    s += learning_rate_ * tree[id].value;
  }
  return s;
}

double GbtModel::predict(const XRef& x) const {
  const double s = raw_score(x);
  return task_ == LearnerTask::classification ? logistic(s) : s;
}

Vector GbtModel::predict_many(const Matrix& x) const {
  Vector out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = predict(x.row(i));
  return out;
}

// ---------------------------------------------------------------------------
// Binned 1-d fallback

BinnedModel BinnedModel::fit(const Matrix& x, const Vector& y, const Vector& weights,
                             LearnerTask task, const Vector& alpha,
                             const LearnerSpec& spec) {
  check_training_inputs(x, y, weights, task, alpha);
  const int n = static_cast<int>(x.rows());
  BinnedModel model;
  model.task_ = task;
  Vector w = weights.size() ? weights : Vector::Ones(n);

  model.lo_ = x.col(0).minCoeff();
  model.hi_ = x.col(0).maxCoeff();
  if (model.hi_ <= model.lo_) model.hi_ = model.lo_ + 1.0;
  const int bins = std::max(1, spec.bins);
  const double span = (model.hi_ - model.lo_) / bins;

  std::vector<std::vector<double>> ys(bins), ws(bins);
  std::vector<double> targets(bins, 0.0);
  for (int i = 0; i < n; ++i) {
    int b = static_cast<int>((x(i, 0) - model.lo_) / span);
    b = std::clamp(b, 0, bins - 1);
    ys[b].push_back(y[i]);
    ws[b].push_back(w[i]);
    if (task == LearnerTask::quantile) targets[b] += w[i] * alpha[i];
  }

  model.values_.assign(bins, std::numeric_limits<double>::quiet_NaN());
  for (int b = 0; b < bins; ++b) {
    if (ys[b].empty()) continue;
    const double wsum = pairwise_sum(ws[b]);
    switch (task) {
      case LearnerTask::regression: {
        double v = 0.0;
        for (std::size_t i = 0; i < ys[b].size(); ++i) v += ys[b][i] * ws[b][i];
        model.values_[b] = v / wsum;
        break;
      }
      case LearnerTask::classification: {
        double v = 0.0;
        for (std::size_t i = 0; i < ys[b].size(); ++i) v += ys[b][i] * ws[b][i];
        model.values_[b] = clamp(v / wsum, 1e-6, 1.0 - 1e-6);
        break;
      }
      case LearnerTask::quantile:
        model.values_[b] =
            weighted_quantile(std::move(ys[b]), std::move(ws[b]), targets[b]);
        break;
    }
  }

  // Empty bins borrow from the nearest filled bin.
  for (int b = 0; b < bins; ++b) {
    if (!std::isnan(model.values_[b])) continue;
    for (int step = 1; step < bins; ++step) {
      if (b - step >= 0 && !std::isnan(model.values_[b - step])) {
        model.values_[b] = model.values_[b - step];
        break;
      }
      if (b + step < bins && !std::isnan(model.values_[b + step])) {
        model.values_[b] = model.values_[b + step];
        break;
      }
    }
  }
  return model;
}

double BinnedModel::predict(const XRef& x) const {
  const int bins = static_cast<int>(values_.size());
  const double span = (hi_ - lo_) / bins;
  int b = static_cast<int>((x[0] - lo_) / span);
  b = std::clamp(b, 0, bins - 1);
  return values_[b];
}

// ---------------------------------------------------------------------------
// Uniform handle and wrappers

FittedModel FittedModel::fit(const Matrix& x, const Vector& y, const Vector& weights,
                             LearnerTask task, const Vector& alpha,
                             const LearnerSpec& spec) {
  FittedModel fm;
  if (spec.kind == LearnerKind::gbt)
    fm.gbt_ = std::make_shared<GbtModel>(GbtModel::fit(x, y, weights, task, alpha, spec));
  else
    fm.binned_ =
        std::make_shared<BinnedModel>(BinnedModel::fit(x, y, weights, task, alpha, spec));
  return fm;
}

double FittedModel::predict(const XRef& x) const {
  if (gbt_) return gbt_->predict(x);
  if (binned_) return binned_->predict(x);
  throw std::logic_error("FittedModel::predict called before fit");
}

PropensityModel PropensityModel::fit(const Matrix& x, const IntVector& t,
                                     const LearnerSpec& spec, double eps_clip) {
  if (t.size() != x.rows())
    throw std::invalid_argument("fit_unit_propensity: x and t row counts differ");
  const int ones = static_cast<int>((t.array() == 1).count());
  if (ones == 0 || ones == t.size())
    throw std::runtime_error(
        "fit_unit_propensity: degenerate fit, all treatments are identical");
  Vector y = t.cast<double>();
  PropensityModel pm;
  pm.model_ = FittedModel::fit(x, y, Vector(), LearnerTask::classification, Vector(), spec);
  pm.eps_clip_ = eps_clip;
  return pm;
}

PropensityModel PropensityModel::exact(std::function<double(XRef)> fn, double eps_clip) {
  PropensityModel pm;
  pm.exact_ = std::move(fn);
  pm.eps_clip_ = eps_clip;
  return pm;
}

double PropensityModel::predict(const XRef& x) const {
  const double p = exact_ ? exact_(x) : model_.predict(x);
  return clamp(p, eps_clip_, 1.0 - eps_clip_);
}

PropensityModel fit_unit_propensity(const Matrix& x, const IntVector& t,
                                    const LearnerSpec& spec, double eps_clip) {
  return PropensityModel::fit(x, t, spec, eps_clip);
}

// ---------------------------------------------------------------------------
// Exposure propensity

ExposurePropensity ExposurePropensity::analytic(const Graph& g, const ExposureSpec& spec,
                                                const std::vector<double>& unit_probs,
                                                double eps_clip) {
  spec.validate();
  if (static_cast<int>(unit_probs.size()) != g.node_count())
    throw std::invalid_argument("analytic exposure propensity: need one unit propensity per node");
  if (spec.kind == ExposureKind::weighted_mean)
    throw std::invalid_argument(
        "analytic exposure propensity requires a count-based exposure mapping");

  ExposurePropensity ep;
  ep.continuous_ = false;
  ep.eps_clip_ = eps_clip;
  ep.node_atoms_.resize(g.node_count());
  for (int i = 0; i < g.node_count(); ++i) {
    std::vector<int> hood;
    if (spec.r > 1) {
      hood = khop_neighbors(g, i, spec.r);
    } else {
      auto [b, e] = g.neighbors(i);
      hood.assign(b, e);
    }
    if (hood.empty()) continue;
    std::vector<double> probs;
    probs.reserve(hood.size());
    for (int j : hood) probs.push_back(unit_probs[j]);
    const Vector pmf = poisson_binomial_pmf(probs);
    const int m = static_cast<int>(hood.size());
    auto& atoms = ep.node_atoms_[i];
    if (spec.kind == ExposureKind::threshold) {
      const int kc = count_ceil(spec.c * m);
      double p1 = 0.0;
      for (int k = std::max(kc, 0); k <= m; ++k) p1 += pmf[k];
      p1 = clamp(p1, 0.0, 1.0);
      atoms = {{0.0, 1.0 - p1}, {1.0, p1}};
    } else {
      atoms.reserve(m + 1);
      for (int k = 0; k <= m; ++k)
        atoms.emplace_back(static_cast<double>(k) / m, pmf[k]);
    }
  }
  return ep;
}

ExposurePropensity ExposurePropensity::direct_discrete(const Matrix& x, const Vector& z,
                                                       const LearnerSpec& spec,
                                                       double eps_clip) {
  if (z.size() != x.rows())
    throw std::invalid_argument("direct exposure propensity: x and z row counts differ");
  std::vector<double> sorted(z.data(), z.data() + z.size());
  std::sort(sorted.begin(), sorted.end());
  ExposurePropensity ep;
  ep.eps_clip_ = eps_clip;
  for (double v : sorted)
    if (ep.levels_.empty() || v > ep.levels_.back() + 1e-9) ep.levels_.push_back(v);
  if (ep.levels_.size() > 64)
    throw std::invalid_argument(
        "direct exposure propensity: too many discrete levels, use analytic mode");
  for (double level : ep.levels_) {
    Vector target(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i)
      target[i] = std::abs(z[i] - level) <= 1e-9 ? 1.0 : 0.0;
    ep.level_models_.push_back(FittedModel::fit(x, target, Vector(),
                                                LearnerTask::classification, Vector(),
                                                spec));
  }
  return ep;
}

ExposurePropensity ExposurePropensity::direct_continuous(const Matrix& x, const Vector& z,
                                                         int components, int x_bins,
                                                         double eps_clip) {
  if (z.size() != x.rows())
    throw std::invalid_argument("direct exposure propensity: x and z row counts differ");
  if (components < 1 || x_bins < 1)
    throw std::invalid_argument("direct exposure propensity: bad mixture shape");
  ExposurePropensity ep;
  ep.continuous_ = true;
  ep.eps_clip_ = eps_clip;
  ep.x_lo_ = x.col(0).minCoeff();
  ep.x_hi_ = x.col(0).maxCoeff();
  if (ep.x_hi_ <= ep.x_lo_) ep.x_hi_ = ep.x_lo_ + 1.0;
  const double span = (ep.x_hi_ - ep.x_lo_) / x_bins;

  std::vector<std::vector<double>> bucket(x_bins);
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    int b = static_cast<int>((x(i, 0) - ep.x_lo_) / span);
    bucket[std::clamp(b, 0, x_bins - 1)].push_back(z[i]);
  }

  ep.mixtures_.resize(x_bins);
  for (int b = 0; b < x_bins; ++b) {
    auto& zs = bucket[b];
    if (zs.size() < 5) continue;  // filled from neighbors below
    std::sort(zs.begin(), zs.end());
    const int k = static_cast<int>(zs.size()) >= 10 * components ? components : 1;
    const double mean_all = pairwise_sum(zs) / zs.size();
    double var_all = 0.0;
    for (double v : zs) var_all += (v - mean_all) * (v - mean_all);
    const double sd_all = std::max(std::sqrt(var_all / zs.size()), 1e-3);

    std::vector<std::array<double, 3>> comp(k);
    for (int j = 0; j < k; ++j) {
      const std::size_t pos =
          static_cast<std::size_t>((j + 0.5) / k * (zs.size() - 1));
      comp[j] = {1.0 / k, zs[pos], sd_all};
    }
    // EM with deterministic quantile initialization.
    double prev_ll = -std::numeric_limits<double>::infinity();
    std::vector<double> resp(zs.size() * k);
    for (int iter = 0; iter < 200; ++iter) {
      double ll = 0.0;
      for (std::size_t i = 0; i < zs.size(); ++i) {
        double total = 0.0;
        for (int j = 0; j < k; ++j) {
          const double dens =
              comp[j][0] * norm_pdf((zs[i] - comp[j][1]) / comp[j][2]) / comp[j][2];
          resp[i * k + j] = dens;
          total += dens;
        }
        total = std::max(total, 1e-300);
        for (int j = 0; j < k; ++j) resp[i * k + j] /= total;
        ll += std::log(total);
      }
      for (int j = 0; j < k; ++j) {
        double rs = 0.0, rz = 0.0;
        for (std::size_t i = 0; i < zs.size(); ++i) {
          rs += resp[i * k + j];
          rz += resp[i * k + j] * zs[i];
        }
        rs = std::max(rs, 1e-12);
        const double mu = rz / rs;
        double rv = 0.0;
        for (std::size_t i = 0; i < zs.size(); ++i)
          rv += resp[i * k + j] * (zs[i] - mu) * (zs[i] - mu);
        comp[j] = {rs / zs.size(), mu, std::max(std::sqrt(rv / rs), 1e-4)};
      }
      if (std::abs(ll - prev_ll) < 1e-10) break;
      prev_ll = ll;
    }
    ep.mixtures_[b] = std::move(comp);
  }

  for (int b = 0; b < x_bins; ++b) {
    if (!ep.mixtures_[b].empty()) continue;
    for (int step = 1; step < x_bins; ++step) {
      if (b - step >= 0 && !ep.mixtures_[b - step].empty()) {
        ep.mixtures_[b] = ep.mixtures_[b - step];
        break;
      }
      if (b + step < x_bins && !ep.mixtures_[b + step].empty()) {
        ep.mixtures_[b] = ep.mixtures_[b + step];
        break;
      }
    }
    if (ep.mixtures_[b].empty())
      throw std::runtime_error("direct exposure propensity: every x bin is empty");
  }
  return ep;
}

double ExposurePropensity::evaluate(int node, double z, const XRef& x) const {
  if (!node_atoms_.empty()) {
    if (node < 0 || node >= static_cast<int>(node_atoms_.size()))
      throw std::out_of_range("exposure propensity: node index out of range");
    for (const auto& [zv, p] : node_atoms_[node])
      if (std::abs(zv - z) <= 1e-9) return std::max(p, eps_clip_);
    return eps_clip_;
  }
  if (!level_models_.empty()) {
    double total = 0.0, hit = -1.0;
    for (std::size_t l = 0; l < levels_.size(); ++l) {
      const double p = level_models_[l].predict(x);
      total += p;
      if (std::abs(levels_[l] - z) <= 1e-9) hit = p;
    }
    if (hit < 0.0) return eps_clip_;
    return std::max(hit / std::max(total, 1e-12), eps_clip_);
  }
  if (!mixtures_.empty()) {
    const int bins = static_cast<int>(mixtures_.size());
    const double span = (x_hi_ - x_lo_) / bins;
    int b = static_cast<int>((x[0] - x_lo_) / span);
    b = std::clamp(b, 0, bins - 1);
    double dens = 0.0;
    for (const auto& [wj, mu, sd] : mixtures_[b])
      dens += wj * norm_pdf((z - mu) / sd) / sd;
    return std::max(dens, eps_clip_);
  }
  throw std::logic_error("exposure propensity: evaluate called before fit");
}

const std::vector<std::pair<double, double>>& ExposurePropensity::node_pmf(int node) const {
  if (node_atoms_.empty())
    throw std::logic_error("exposure propensity: node_pmf is analytic-mode only");
  if (node < 0 || node >= static_cast<int>(node_atoms_.size()))
    throw std::out_of_range("exposure propensity: node index out of range");
  return node_atoms_[node];
}

// ---------------------------------------------------------------------------
// Localized fits

FittedModel fit_quantile(const Matrix& x, const Vector& y, const Vector& weights,
                         const Vector& alpha, const LearnerSpec& spec) {
  return FittedModel::fit(x, y, weights, LearnerTask::quantile, alpha, spec);
}

std::pair<FittedModel, FittedModel> fit_tail_moments(const Matrix& x, const Vector& y,
                                                     const Vector& weights,
                                                     const Vector& q_hat,
                                                     const LearnerSpec& spec) {
  if (q_hat.size() != y.size())
    throw std::invalid_argument("fit_tail_moments: q_hat length mismatch");
  Vector up(y.size()), lo(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    up[i] = pos(y[i] - q_hat[i]);
    lo[i] = pos(q_hat[i] - y[i]);
  }
  FittedModel m_up = FittedModel::fit(x, up, weights, LearnerTask::regression, Vector(), spec);
  FittedModel m_lo = FittedModel::fit(x, lo, weights, LearnerTask::regression, Vector(), spec);
  return {std::move(m_up), std::move(m_lo)};
}

// ---------------------------------------------------------------------------
// Node-level ratio bounds

std::vector<RatioBounds> build_node_bounds(const MisspecModel& model, const Graph& g,
                                           const ExposureSpec& spec_assumed,
                                           const Matrix& x,
                                           const std::function<double(int, XRef)>& pi_t) {
  model.validate();
  const int n = g.node_count();
  if (x.rows() != n)
    throw std::invalid_argument("build_node_bounds: covariate row count mismatch");
  std::vector<RatioBounds> out(n);
  const bool count_based = model.kind != MisspecKind::msm;
  for (int i = 0; i < n; ++i) {
    Vector pmf;
    int deg = 0;
    if (count_based || model.table) {
      std::vector<int> hood;
      if (spec_assumed.r > 1) {
        hood = khop_neighbors(g, i, spec_assumed.r);
      } else {
        auto [b, e] = g.neighbors(i);
        hood.assign(b, e);
      }
      deg = static_cast<int>(hood.size());
      if (count_based) {
        if (deg == 0) {
          out[i] = RatioBounds::constants(1.0, 1.0);
          continue;
        }
        std::vector<double> probs;
        probs.reserve(hood.size());
        for (int j : hood) probs.push_back(pi_t(j, x.row(j)));
        pmf = poisson_binomial_pmf(probs);
      }
    }
    out[i] = ratio_bounds_for_model(model, deg, pmf, x(i, 0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-fitting

CrossfitNuisances crossfit_nuisances(const Dataset& data, const Graph& g,
                                     const ExposureSpec& spec_assumed,
                                     const MisspecModel& misspec, int K, double t,
                                     double z, double h,
                                     const NuisanceLearnerSpecs& specs,
                                     std::uint64_t seed, double eps_clip) {
  const int n = static_cast<int>(data.size());
  if (n != g.node_count())
    throw std::invalid_argument("crossfit_nuisances: dataset and graph sizes differ");
  const bool continuous = data.z_assumed.continuous;
  if (continuous && misspec.kind != MisspecKind::msm)
    throw std::invalid_argument(
        "crossfit_nuisances: count-based misspecification models need a discrete "
        "assumed exposure; use an msm model for continuous Z");
  if (continuous && h <= 0.0)
    throw std::invalid_argument("crossfit_nuisances: continuous Z needs a bandwidth");

  CrossfitNuisances cf;
  cf.folds = make_folds(n, K, seed);
  cf.sets.resize(K);
  cf.bounds.resize(K);

  const int d = static_cast<int>(data.x.cols());
  const Vector& zobs = data.z_assumed.values;

  for (int k = 0; k < K; ++k) {
    try {
      std::vector<int> train;
      train.reserve(n);
      for (int i = 0; i < n; ++i)
        if (cf.folds.assignments[i] != k) train.push_back(i);

      Matrix x_train(train.size(), d);
      IntVector t_train(train.size());
      for (std::size_t r = 0; r < train.size(); ++r) {
        x_train.row(r) = data.x.row(train[r]);
        t_train[r] = data.t[train[r]];
      }

      auto pm = std::make_shared<PropensityModel>(
          PropensityModel::fit(x_train, t_train, specs.propensity, eps_clip));

      std::vector<double> unit_probs(n);
      for (int i = 0; i < n; ++i) unit_probs[i] = pm->predict(data.x.row(i));

      std::shared_ptr<ExposurePropensity> ep;
      if (specs.exposure_mode == ExposurePropensityMode::analytic) {
        ep = std::make_shared<ExposurePropensity>(
            ExposurePropensity::analytic(g, spec_assumed, unit_probs, eps_clip));
      } else if (continuous) {
        Vector z_train(train.size());
        for (std::size_t r = 0; r < train.size(); ++r) z_train[r] = zobs[train[r]];
        ep = std::make_shared<ExposurePropensity>(ExposurePropensity::direct_continuous(
            x_train, z_train, 3, std::max(4, specs.propensity.bins / 4), eps_clip));
      } else {
        Vector z_train(train.size());
        for (std::size_t r = 0; r < train.size(); ++r) z_train[r] = zobs[train[r]];
        ep = std::make_shared<ExposurePropensity>(ExposurePropensity::direct_discrete(
            x_train, z_train, specs.propensity, eps_clip));
      }

      auto bounds = std::make_shared<std::vector<RatioBounds>>(build_node_bounds(
          misspec, g, spec_assumed, data.x,
          [&pm](int, XRef xr) { return pm->predict(xr); }));
      cf.bounds[k] = *bounds;

      // Localized training subset at the target arm.
      std::vector<int> rows;
      std::vector<double> kw;
      for (int i : train) {
        if (data.t[i] != static_cast<int>(t)) continue;
        if (continuous) {
          const double w = epanechnikov_weight(zobs[i], z, h);
          if (w <= 0.0) continue;
          rows.push_back(i);
          kw.push_back(w);
        } else if (std::abs(zobs[i] - z) <= 1e-9) {
          rows.push_back(i);
          kw.push_back(1.0);
        }
      }
      if (rows.size() < 2)
        throw std::runtime_error(
            "positivity failure, no training rows at the target (t, z) arm");

      const int p = continuous ? d + 1 : d;
      Matrix xs(rows.size(), p);
      Vector ys(rows.size()), ws(rows.size()), a_up(rows.size()), a_lo(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const int i = rows[r];
        xs.row(r).head(d) = data.x.row(i);
        if (continuous) xs(r, d) = zobs[i];
        ys[r] = data.y[i];
        ws[r] = kw[r];
        const RatioBounds& rb = (*bounds)[i];
        const double zi = continuous ? z : zobs[i];
        a_up[r] = alpha_level(rb.b_minus(zi), rb.b_plus(zi), true);
        a_lo[r] = alpha_level(rb.b_minus(zi), rb.b_plus(zi), false);
      }

      auto q_up = std::make_shared<FittedModel>(
          fit_quantile(xs, ys, ws, a_up, specs.quantile));
      auto q_lo = std::make_shared<FittedModel>(
          fit_quantile(xs, ys, ws, a_lo, specs.quantile));

      Vector qhat_up(rows.size()), qhat_lo(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        qhat_up[r] = q_up->predict(xs.row(r));
        qhat_lo[r] = q_lo->predict(xs.row(r));
      }
      auto tails_up = fit_tail_moments(xs, ys, ws, qhat_up, specs.regression);
      auto tails_lo = fit_tail_moments(xs, ys, ws, qhat_lo, specs.regression);
      auto gu_up = std::make_shared<FittedModel>(std::move(tails_up.first));
      auto gl_up = std::make_shared<FittedModel>(std::move(tails_up.second));
      auto gu_lo = std::make_shared<FittedModel>(std::move(tails_lo.first));
      auto gl_lo = std::make_shared<FittedModel>(std::move(tails_lo.second));

      NuisanceSet& set = cf.sets[k];
      set.t_target = t;
      set.z_target = z;
      set.continuous_z = continuous;
      set.eps_clip = eps_clip;
      set.trained_on = k;
      set.unit_propensity = [pm](int, XRef xr) { return pm->predict(xr); };
      set.exposure_propensity = [ep](int node, double zq, XRef xr) {
        return ep->evaluate(node, zq, xr);
      };

      const double t_target = t, z_target = z;
      auto check_target = [t_target, z_target, continuous](double tq, double zq) {
        if (std::abs(tq - t_target) > 1e-9)
          throw std::invalid_argument("nuisance set serves a different treatment arm");
        if (!continuous && std::abs(zq - z_target) > 1e-9)
          throw std::invalid_argument("nuisance set serves a different exposure level");
      };
      auto features = [continuous, d](double zq, XRef xr) {
        Vector f(continuous ? d + 1 : d);
        f.head(d) = xr;
        if (continuous) f[d] = zq;
        return f;
      };
      // Quantile crossing repair by pointwise sorting, applied only in
      // the regular regime alpha- <= alpha+; the degenerate edges (b- or
      // b+ equal to 1) legitimately put the lower-bound quantile above
      // the upper-bound one.
      auto both_q = [q_up, q_lo, bounds, features](int node, double zq, XRef xr) {
        const Vector f = features(zq, xr);
        double up = q_up->predict(f), lo = q_lo->predict(f);
        const RatioBounds& rb = (*bounds)[node];
        const double au = alpha_level(rb.b_minus(zq), rb.b_plus(zq), true);
        const double al = alpha_level(rb.b_minus(zq), rb.b_plus(zq), false);
        if (al <= au && lo > up) std::swap(lo, up);
        return std::make_pair(up, lo);
      };
      set.quantile_upper = [both_q, check_target](int node, double tq, double zq, XRef xr) {
        check_target(tq, zq);
        return both_q(node, zq, xr).first;
      };
      set.quantile_lower = [both_q, check_target](int node, double tq, double zq, XRef xr) {
        check_target(tq, zq);
        return both_q(node, zq, xr).second;
      };
      auto make_tail = [check_target, features](std::shared_ptr<FittedModel> m) {
        return [m, check_target, features](int, double tq, double zq, XRef xr) {
          check_target(tq, zq);
          return pos(m->predict(features(zq, xr)));
        };
      };
      set.tail_up_upper = make_tail(gu_up);
      set.tail_low_upper = make_tail(gl_up);
      set.tail_up_lower = make_tail(gu_lo);
      set.tail_low_lower = make_tail(gl_lo);
    } catch (const std::exception& e) {
      throw std::runtime_error("crossfit_nuisances: fold " + std::to_string(k) +
                               ": " + e.what());
    }
  }
  return cf;
}

}  // namespace netbound
