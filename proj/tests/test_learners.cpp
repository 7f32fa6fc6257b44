#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <netbound/dgp.hpp>
#include <netbound/learners.hpp>
#include <netbound/netgraph.hpp>
#include <netbound/oracle.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

using namespace netbound;

namespace {

std::vector<int> fold_sizes(const FoldPlan& plan) {
  std::vector<int> sizes(static_cast<std::size_t>(plan.K), 0);
  for (Eigen::Index i = 0; i < plan.assignments.size(); ++i)
    ++sizes[static_cast<std::size_t>(plan.assignments[i])];
  return sizes;
}

Dataset simulate_threshold(const Graph& g, std::uint64_t seed, double noise_sd = 1.0) {
  DgpConfig cfg;
  cfg.d = 1;
  cfg.noise_sd = noise_sd;
  cfg.spec_true = ExposureSpec::threshold(0.5);
  cfg.spec_assumed = ExposureSpec::threshold(0.5);
  cfg.seed = seed;
  return simulate(cfg, g);
}

}  // namespace

TEST_CASE("fold plans are balanced partitions") {
  const FoldPlan even = make_folds(10, 5, 1);
  CHECK(fold_sizes(even) == std::vector<int>{2, 2, 2, 2, 2});

  std::vector<int> uneven = fold_sizes(make_folds(11, 5, 1));
  std::sort(uneven.begin(), uneven.end());
  CHECK(uneven == std::vector<int>{2, 2, 2, 2, 3});

  Rng rng(42);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 5 + static_cast<int>(rng.below(200));
    const int K = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1)));
    const FoldPlan plan = make_folds(n, K, rep);
    REQUIRE(plan.assignments.size() == n);
    const std::vector<int> sizes = fold_sizes(plan);
    const int lo = *std::min_element(sizes.begin(), sizes.end());
    const int hi = *std::max_element(sizes.begin(), sizes.end());
    CHECK(hi - lo <= 1);
    for (Eigen::Index i = 0; i < plan.assignments.size(); ++i) {
      CHECK(plan.assignments[i] >= 0);
      CHECK(plan.assignments[i] < K);
    }
  }

  CHECK_THROWS(make_folds(3, 4, 1));
  CHECK_THROWS(make_folds(10, 1, 1));
  CHECK((make_folds(30, 3, 9).assignments - make_folds(30, 3, 9).assignments)
            .cwiseAbs()
            .maxCoeff() == 0);
}

TEST_CASE("unit propensity fit tracks the logistic truth") {
  const int n = 20000;
  const Matrix x = sample_covariates(n, 1, 71);
  Vector beta = Vector::Constant(1, 0.8);
  const IntVector t = assign_treatments(x, beta, 72);

  LearnerSpec spec;
  const PropensityModel pm = fit_unit_propensity(x, t, spec, 0.01);

  double mae = 0.0;
  for (int i = 0; i < 2000; ++i)
    mae += std::abs(pm.predict(x.row(i)) - true_propensity(x.row(i), beta));
  mae /= 2000.0;
  CHECK(mae < 0.05);

  const PropensityModel again = fit_unit_propensity(x, t, spec, 0.01);
  for (int i = 0; i < 200; ++i)
    CHECK(pm.predict(x.row(i)) == again.predict(x.row(i)));
}

TEST_CASE("propensity predictions honor the overlap clip") {
  const int n = 4000;
  const Matrix x = sample_covariates(n, 1, 81);
  Vector beta = Vector::Constant(1, 5.0);  // pushes raw scores past the clip
  const IntVector t = assign_treatments(x, beta, 82);
  const double eps_clip = 0.05;
  const PropensityModel pm = fit_unit_propensity(x, t, LearnerSpec{}, eps_clip);

  Rng rng(83);
  bool clipped_somewhere = false;
  for (int rep = 0; rep < 10000; ++rep) {
    Vector probe(1);
    probe << rng.uniform(-1.0, 1.0);
    const double p = pm.predict(probe);
    CHECK(p >= eps_clip);
    CHECK(p <= 1.0 - eps_clip);
    if (p == eps_clip || p == 1.0 - eps_clip) clipped_somewhere = true;
  }
  CHECK(clipped_somewhere);
}

TEST_CASE("single class treatments are a degenerate fit") {
  const Matrix x = sample_covariates(100, 1, 5);
  const IntVector all_ones = IntVector::Constant(100, 1);
  CHECK_THROWS_WITH_AS(fit_unit_propensity(x, all_ones, LearnerSpec{}, 0.01),
                       doctest::Contains("degenerate"), std::runtime_error);
}

TEST_CASE("analytic exposure propensity on two fair neighbors") {
  const Graph path(3, {{1, 0}, {0, 2}});
  const std::vector<double> probs{0.5, 0.5, 0.5};
  const ExposurePropensity ep =
      ExposurePropensity::analytic(path, ExposureSpec::threshold(0.5), probs, 1e-9);
  Vector x = Vector::Zero(1);
  CHECK(ep.evaluate(0, 1.0, x) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(ep.evaluate(0, 0.0, x) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK_FALSE(ep.continuous());
}

TEST_CASE("analytic exposure pmfs are normalized and match enumeration") {
  const Graph g = gen_erdos_renyi(40, 0.1, 91);
  Rng rng(92);
  std::vector<double> probs(static_cast<std::size_t>(g.node_count()));
  for (double& p : probs) p = rng.uniform(0.1, 0.9);

  for (const ExposureSpec& spec :
       {ExposureSpec::mean(), ExposureSpec::threshold(0.4)}) {
    const ExposurePropensity ep = ExposurePropensity::analytic(g, spec, probs, 1e-9);
    for (int i = 0; i < g.node_count(); ++i) {
      if (g.degree(i) == 0 || g.degree(i) > 12) continue;
      const auto& pmf = ep.node_pmf(i);
      double total = 0.0;
      for (const auto& [z, p] : pmf) total += p;
      CHECK(std::abs(total - 1.0) <= 1e-9);

      const auto exact = enumerate_exposure_distribution(g, i, probs, spec);
      REQUIRE(pmf.size() == exact.size());
      for (std::size_t k = 0; k < pmf.size(); ++k) {
        CHECK(std::abs(pmf[k].first - exact[k].first) <= 1e-12);
        CHECK(std::abs(pmf[k].second - exact[k].second) <= 1e-12);
      }
    }
  }
}

TEST_CASE("analytic exposure propensity matches simulated frequencies") {
  const Graph star(4, {{0, 1}, {0, 2}, {0, 3}});
  const std::vector<double> probs{0.5, 0.3, 0.6, 0.8};
  const ExposurePropensity ep =
      ExposurePropensity::analytic(star, ExposureSpec::mean(), probs, 1e-9);

  std::map<long long, double> freq;
  Rng rng(93);
  const int reps = 100000;
  for (int rep = 0; rep < reps; ++rep) {
    int count = 0;
    for (int j = 1; j <= 3; ++j)
      if (rng.bernoulli(probs[static_cast<std::size_t>(j)])) ++count;
    freq[count] += 1.0 / reps;
  }
  Vector x = Vector::Zero(1);
  for (const auto& [count, f] : freq) {
    const double z = static_cast<double>(count) / 3.0;
    CHECK(std::abs(ep.evaluate(0, z, x) - f) < 0.01);
  }
}

TEST_CASE("directly fitted discrete exposure propensity recovers a marginal") {
  const int n = 5000;
  const Matrix x = sample_covariates(n, 1, 94);
  Vector z(n);
  Rng rng(95);
  for (int i = 0; i < n; ++i) z[i] = rng.bernoulli(0.7) ? 1.0 : 0.0;

  const ExposurePropensity ep =
      ExposurePropensity::direct_discrete(x, z, LearnerSpec{}, 0.01);
  Vector probe = Vector::Zero(1);
  CHECK(ep.evaluate(0, 1.0, probe) == doctest::Approx(0.7).epsilon(0.1));
  CHECK(ep.evaluate(0, 1.0, probe) + ep.evaluate(0, 0.0, probe) ==
        doctest::Approx(1.0).epsilon(0.02));
  CHECK_THROWS(ep.node_pmf(0));
}

TEST_CASE("directly fitted continuous exposure density integrates to one") {
  const int n = 8000;
  const Matrix x = sample_covariates(n, 1, 96);
  Vector z(n);
  Rng rng(97);
  for (int i = 0; i < n; ++i) z[i] = clamp(0.5 + 0.25 * rng.normal(), 0.0, 1.0);

  const ExposurePropensity ep = ExposurePropensity::direct_continuous(x, z, 3, 4, 1e-4);
  CHECK(ep.continuous());
  Vector probe = Vector::Zero(1);
  const int grid = 400;
  double integral = 0.0;
  for (int k = 0; k < grid; ++k) {
    const double zq = -0.5 + 2.0 * (k + 0.5) / grid;
    integral += ep.evaluate(0, zq, probe) * (2.0 / grid);
  }
  CHECK(integral == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("quantile fit reproduces constants and uniform quantiles") {
  const int n = 10000;
  const Matrix x = sample_covariates(n, 1, 98);
  const Vector constant = Vector::Constant(n, 3.25);
  const Vector alpha_mid = Vector::Constant(n, 0.37);
  const FittedModel flat =
      fit_quantile(x, constant, Vector(), alpha_mid, LearnerSpec{});
  for (int i = 0; i < 50; ++i)
    CHECK(flat.predict(x.row(i)) == doctest::Approx(3.25).epsilon(1e-9));

  Rng rng(99);
  Vector u(n);
  for (int i = 0; i < n; ++i) u[i] = rng.uniform();
  const Vector alpha23 = Vector::Constant(n, 2.0 / 3.0);
  const FittedModel qfit = fit_quantile(x, u, Vector(), alpha23, LearnerSpec{});
  double mean_pred = 0.0;
  for (int i = 0; i < 1000; ++i) mean_pred += qfit.predict(x.row(i));
  mean_pred /= 1000.0;
  CHECK(mean_pred == doctest::Approx(2.0 / 3.0).epsilon(0.045));

  const Vector alpha03 = Vector::Constant(n, 0.3);
  const FittedModel qlow = fit_quantile(x, u, Vector(), alpha03, LearnerSpec{});
  double low_pred = 0.0;
  for (int i = 0; i < 1000; ++i) low_pred += qlow.predict(x.row(i));
  low_pred /= 1000.0;
  CHECK(low_pred < mean_pred);

  CHECK_THROWS(fit_quantile(Matrix(0, 1), Vector(), Vector(), Vector(), LearnerSpec{}));
}

TEST_CASE("tail moment fits match the uniform integrals") {
  const int n = 10000;
  const Matrix x = sample_covariates(n, 1, 100);
  Rng rng(101);
  Vector u(n);
  for (int i = 0; i < n; ++i) u[i] = rng.uniform();

  const Vector q_flat = Vector::Constant(n, 2.0 / 3.0);
  const auto [gamma_up, gamma_lo] =
      fit_tail_moments(x, u, Vector(), q_flat, LearnerSpec{});

  double up = 0.0, lo = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double gu = gamma_up.predict(x.row(i));
    const double gl = gamma_lo.predict(x.row(i));
    CHECK(gu >= 0.0);
    CHECK(gl >= 0.0);
    up += gu;
    lo += gl;
  }
  up /= 1000.0;
  lo /= 1000.0;
  CHECK(up == doctest::Approx(1.0 / 18.0).epsilon(0.18));
  CHECK(std::abs(up - 1.0 / 18.0) < 0.01);
  CHECK(std::abs(lo - 2.0 / 9.0) < 0.01);
  // (a)+ - (-a)+ = a turns the two tails into the mean residual.
  CHECK(up - lo == doctest::Approx(0.5 - 2.0 / 3.0).epsilon(0.1));

  const auto [zero_up, zero_lo] = fit_tail_moments(x, q_flat, Vector(), q_flat,
                                                   LearnerSpec{});
  for (int i = 0; i < 50; ++i) {
    CHECK(zero_up.predict(x.row(i)) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(zero_lo.predict(x.row(i)) == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("cross fitting trains one set per fold on the complement") {
  const Graph g = gen_erdos_renyi(100, 0.08, 102);
  const Dataset data = simulate_threshold(g, 103);
  const MisspecModel misspec = MisspecModel::threshold(0.05, 0.5);

  const CrossfitNuisances cf = crossfit_nuisances(data, g, ExposureSpec::threshold(0.5),
                                                  misspec, 2, 1.0, 1.0, 0.0, {}, 7);
  REQUIRE(cf.sets.size() == 2);
  REQUIRE(cf.bounds.size() == 2);
  CHECK(cf.folds.K == 2);
  CHECK(fold_sizes(cf.folds) == std::vector<int>{50, 50});
  CHECK(cf.sets[0].trained_on == 0);
  CHECK(cf.sets[1].trained_on == 1);
  REQUIRE(cf.bounds[0].size() == 100);

  // Count-based bounds live on the two-point exposure grid.
  const RatioBounds& rb = cf.bounds[0][0];
  CHECK_FALSE(rb.constant());
  CHECK(rb.b_minus(1.0) <= 1.0 + 1e-12);
  CHECK(rb.b_plus(1.0) >= 1.0 - 1e-12);
}

TEST_CASE("served nuisance predictions are clipped and deterministic") {
  const Graph g = gen_erdos_renyi(400, 0.02, 104);
  const Dataset data = simulate_threshold(g, 105);
  const MisspecModel misspec = MisspecModel::threshold(0.05, 0.5);
  const double eps_clip = 0.05;

  const CrossfitNuisances cf =
      crossfit_nuisances(data, g, ExposureSpec::threshold(0.5), misspec, 3, 1.0, 1.0,
                         0.0, {}, 11, eps_clip);
  const CrossfitNuisances cf2 =
      crossfit_nuisances(data, g, ExposureSpec::threshold(0.5), misspec, 3, 1.0, 1.0,
                         0.0, {}, 11, eps_clip);

  Rng rng(106);
  for (int rep = 0; rep < 10000; ++rep) {
    Vector x(1);
    x << rng.uniform(-1.0, 1.0);
    const int node = static_cast<int>(rng.below(400));
    const auto& set = cf.sets[static_cast<std::size_t>(rep % 3)];
    const double pi_t = set.unit_propensity(node, x);
    CHECK(pi_t >= eps_clip);
    CHECK(pi_t <= 1.0 - eps_clip);
    const double pi_g = set.exposure_propensity(node, 1.0, x);
    CHECK(pi_g >= eps_clip);

    const double q_hi = set.quantile_upper(node, 1.0, 1.0, x);
    const double q_lo = set.quantile_lower(node, 1.0, 1.0, x);
    CHECK(q_lo <= q_hi + 1e-12);
    CHECK(set.tail_up_upper(node, 1.0, 1.0, x) >= 0.0);
    CHECK(set.tail_low_lower(node, 1.0, 1.0, x) >= 0.0);

    const auto& set2 = cf2.sets[static_cast<std::size_t>(rep % 3)];
    CHECK(set2.unit_propensity(node, x) == pi_t);
    CHECK(set2.quantile_upper(node, 1.0, 1.0, x) == q_hi);
  }
}

TEST_CASE("nuisance closures reject mismatched targets") {
  const Graph g = gen_erdos_renyi(100, 0.08, 107);
  const Dataset data = simulate_threshold(g, 108);
  const CrossfitNuisances cf =
      crossfit_nuisances(data, g, ExposureSpec::threshold(0.5),
                         MisspecModel::threshold(0.05, 0.5), 2, 1.0, 1.0, 0.0, {}, 13);
  Vector x = Vector::Zero(1);
  CHECK_THROWS_WITH_AS(cf.sets[0].quantile_upper(0, 0.0, 1.0, x),
                       doctest::Contains("treatment arm"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(cf.sets[0].tail_up_upper(0, 1.0, 0.5, x),
                       doctest::Contains("exposure level"), std::invalid_argument);
}

TEST_CASE("sub fit failures name the fold") {
  const Graph g = gen_erdos_renyi(60, 0.1, 109);
  Dataset data = simulate_threshold(g, 110);
  data.t.setConstant(1);  // degenerate propensity arm in every fold
  CHECK_THROWS_WITH_AS(
      crossfit_nuisances(data, g, ExposureSpec::threshold(0.5),
                         MisspecModel::threshold(0.05, 0.5), 2, 1.0, 1.0, 0.0, {}, 17),
      doctest::Contains("fold"), std::runtime_error);
}

TEST_CASE("node bounds collapse to constants for user specified models") {
  const Graph g = gen_erdos_renyi(50, 0.1, 111);
  const Matrix x = sample_covariates(50, 1, 112);
  const auto pi_t = [](int, XRef) { return 0.5; };

  const auto msm_bounds = build_node_bounds(MisspecModel::msm(0.8, 1.25), g,
                                            ExposureSpec::mean(), x, pi_t);
  REQUIRE(msm_bounds.size() == 50);
  for (const RatioBounds& rb : msm_bounds) {
    CHECK(rb.constant());
    CHECK(rb.b_minus(0.0) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(rb.b_plus(0.0) == doctest::Approx(1.25).epsilon(1e-12));
  }

  const auto thr_bounds = build_node_bounds(MisspecModel::threshold(0.05, 0.5), g,
                                            ExposureSpec::threshold(0.5), x, pi_t);
  for (int i = 0; i < 50; ++i) {
    if (g.degree(i) == 0) continue;
    const RatioBounds& rb = thr_bounds[static_cast<std::size_t>(i)];
    CHECK_FALSE(rb.constant());
    CHECK(rb.b_minus(1.0) <= 1.0 + 1e-12);
    CHECK(rb.b_plus(0.0) >= 1.0 - 1e-12);
  }
}
