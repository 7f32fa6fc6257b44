#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <netbound/estimator.hpp>
#include <netbound/harness.hpp>
#include <netbound/oracle.hpp>

#include <cmath>

using namespace netbound;

namespace {

// iid rows with a known Gaussian conditional law: x uniform on [-1,1],
// t Bernoulli(p_t), binary exposure Bernoulli(p_z1), and
// y = m(t,z,x) + sd * normal. No graph is involved; the law is exactly
// the one the closed forms describe, so nuisances can be injected
// without error.
struct SynthProblem {
  Dataset data;
  DgpConfig law;
  double sd = 0.5;
  double p_t = 0.6;
  double p_z1 = 0.7;
};

SynthProblem make_synth(int n, double sd, std::uint64_t seed, double fixed_x = 2.0) {
  SynthProblem sp;
  sp.sd = sd;
  sp.law.noise_sd = sd;
  Rng rng(seed);
  sp.data.x.resize(n, 1);
  sp.data.t.resize(n);
  sp.data.z_true.values.resize(n);
  sp.data.y.resize(n);
  for (int i = 0; i < n; ++i) {
    sp.data.x(i, 0) = fixed_x <= 1.0 ? fixed_x : rng.uniform(-1.0, 1.0);
    sp.data.t[i] = rng.bernoulli(sp.p_t) ? 1 : 0;
    const double z = rng.bernoulli(sp.p_z1) ? 1.0 : 0.0;
    sp.data.z_true.values[i] = z;
    sp.data.y[i] = outcome_mean(sp.law, sp.data.t[i], z, sp.data.x.row(i)) +
                   sd * rng.normal();
  }
  sp.data.z_assumed = sp.data.z_true;
  return sp;
}

// Exact conditional quantiles and partial moments of the synthetic law.
NuisanceSet exact_nuisances(const SynthProblem& sp, double bm, double bp) {
  NuisanceSet ns;
  ns.eps_clip = 1e-9;
  const DgpConfig law = sp.law;
  const double sd = sp.sd, p_t = sp.p_t, p_z1 = sp.p_z1;
  ns.unit_propensity = [p_t](int, XRef) { return p_t; };
  ns.exposure_propensity = [p_z1](int, double zq, XRef) {
    return zq >= 0.5 ? p_z1 : 1.0 - p_z1;
  };
  auto quant = [law, sd, bm, bp](bool upper, double tq, double zq, XRef x) {
    const double a = clamp(alpha_level(bm, bp, upper), 1e-12, 1.0 - 1e-12);
    return outcome_mean(law, tq, zq, x) + sd * norm_quantile(a);
  };
  ns.quantile_upper = [quant](int, double tq, double zq, XRef x) {
    return quant(true, tq, zq, x);
  };
  ns.quantile_lower = [quant](int, double tq, double zq, XRef x) {
    return quant(false, tq, zq, x);
  };
  auto tail = [law, sd, quant](bool upper_endpoint, bool upper_tail, double tq,
                               double zq, XRef x) {
    const double q = quant(upper_endpoint, tq, zq, x);
    const double u = (q - outcome_mean(law, tq, zq, x)) / sd;
    return upper_tail ? sd * (norm_pdf(u) - u * (1.0 - norm_cdf(u)))
                      : sd * (u * norm_cdf(u) + norm_pdf(u));
  };
  ns.tail_up_upper = [tail](int, double tq, double zq, XRef x) {
    return tail(true, true, tq, zq, x);
  };
  ns.tail_low_upper = [tail](int, double tq, double zq, XRef x) {
    return tail(true, false, tq, zq, x);
  };
  ns.tail_up_lower = [tail](int, double tq, double zq, XRef x) {
    return tail(false, true, tq, zq, x);
  };
  ns.tail_low_lower = [tail](int, double tq, double zq, XRef x) {
    return tail(false, false, tq, zq, x);
  };
  return ns;
}

// Sharp endpoint of the unit Gaussian under (b-, b+); the synthetic
// conditional bound is m(t,z,x) + sd * this.
double unit_gaussian_bound(double bm, double bp, bool upper) {
  GaussianMixture gm;
  gm.weights = {1.0};
  gm.means = {0.0};
  gm.sd = 1.0;
  return mixture_capo_bound(gm, bm, bp, upper);
}

PseudoOutcomeVector synth_pseudo(const SynthProblem& sp, double bm, double bp,
                                 double t, double z) {
  const NuisanceSet ns = exact_nuisances(sp, bm, bp);
  const RatioBounds rb = RatioBounds::constants(bm, bp);
  const KernelSpec kernel;
  const int n = static_cast<int>(sp.data.size());
  PseudoOutcomeVector pv;
  pv.t = t;
  pv.z = z;
  pv.phi_plus.resize(n);
  pv.phi_minus.resize(n);
  pv.fold_of = IntVector::Zero(n);
  for (int i = 0; i < n; ++i) {
    pv.rows.push_back(i);
    pv.phi_plus[i] = pseudo_outcome(true, sp.data, i, ns, rb, t, z, kernel, true);
    pv.phi_minus[i] = pseudo_outcome(false, sp.data, i, ns, rb, t, z, kernel, true);
  }
  return pv;
}

// Closed-form endpoint for a discrete conditional law, with the
// quantile and partial moments computed directly from the atoms.
double discrete_bound(const DiscreteConditional& dc, double bm, double bp,
                      bool upper) {
  const double a = alpha_level(bm, bp, upper);
  const double q = dc.quantile(a);
  double gu = 0.0, gl = 0.0;
  for (std::size_t k = 0; k < dc.support.size(); ++k) {
    gu += dc.probs[k] * pos(dc.support[k] - q);
    gl += dc.probs[k] * pos(q - dc.support[k]);
  }
  return capo_closed_form(upper, q, gu, gl, bm, bp);
}

DiscreteConditional random_conditional(Rng& rng) {
  const int m = 2 + static_cast<int>(rng.below(5));
  DiscreteConditional dc;
  double y = rng.uniform(-2.0, 0.0);
  double total = 0.0;
  for (int k = 0; k < m; ++k) {
    y += rng.uniform(0.1, 1.0);
    dc.support.push_back(y);
    const double p = rng.uniform(0.05, 1.0);
    dc.probs.push_back(p);
    total += p;
  }
  for (double& p : dc.probs) p /= total;
  return dc;
}

}  // namespace

TEST_CASE("kernels integrate to one") {
  CHECK(kernel_value(KernelKind::epanechnikov, 0.0) == doctest::Approx(0.75));
  CHECK(kernel_value(KernelKind::epanechnikov, 1.0) == doctest::Approx(0.0));
  CHECK(kernel_value(KernelKind::box, 0.5) == doctest::Approx(0.5));
  CHECK(kernel_value(KernelKind::gaussian, 0.0) ==
        doctest::Approx(1.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-12));

  for (const KernelKind kind :
       {KernelKind::epanechnikov, KernelKind::gaussian, KernelKind::box}) {
    double integral = 0.0;
    const int grid = 20000;
    for (int k = 0; k < grid; ++k) {
      const double u = -6.0 + 12.0 * (k + 0.5) / grid;
      integral += kernel_value(kind, u) * (12.0 / grid);
    }
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("localization weights") {
  const KernelSpec kernel{KernelKind::epanechnikov, 0.1};
  CHECK(localization_weight(true, 1.0, 1.0, kernel) == 1.0);
  CHECK(localization_weight(true, 0.5, 1.0, kernel) == 0.0);
  CHECK(localization_weight(false, 0.3, 0.3, kernel) ==
        doctest::Approx(0.75 / 0.1).epsilon(1e-12));

  double integral = 0.0;
  const int grid = 4000;
  for (int k = 0; k < grid; ++k) {
    const double z = 0.3 + (-0.5 + (k + 0.5) / grid);
    integral += localization_weight(false, z, 0.3, kernel) * (1.0 / grid);
  }
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-4));

  KernelSpec bad = kernel;
  bad.h = 0.0;
  CHECK_THROWS(localization_weight(false, 0.3, 0.3, bad));
}

TEST_CASE("closed form endpoint identities") {
  Rng rng(7);
  for (int rep = 0; rep < 100; ++rep) {
    const double q = rng.uniform(-2.0, 2.0);
    const double gu = rng.uniform(0.0, 1.0);
    const double gl = rng.uniform(0.0, 1.0);
    CHECK(capo_closed_form(true, q, gu, gl, 1.0, 1.0) ==
          doctest::Approx(q + gu - gl).epsilon(1e-12));
    CHECK(capo_closed_form(false, q, gu, gl, 1.0, 1.0) ==
          doctest::Approx(q + gu - gl).epsilon(1e-12));
  }

  // Uniform[0,1] outcome with bounds (0.5, 2): the level-2/3 quantile
  // is 2/3, the tails are 1/18 and 2/9, and the sharp upper bound
  // collapses back to the mean of the tilted uniform, 2/3.
  CHECK(alpha_level(0.5, 2.0, true) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(capo_closed_form(true, 2.0 / 3.0, 1.0 / 18.0, 2.0 / 9.0, 0.5, 2.0) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("closed form matches the variational scan on random laws") {
  Rng rng(11);
  for (int rep = 0; rep < 60; ++rep) {
    const DiscreteConditional dc = random_conditional(rng);
    const double bm = rng.uniform(0.2, 1.0);
    const double bp = 1.0 + rng.uniform(0.0, 3.0);
    const ScanResult scan = rockafellar_scan(dc, bm, bp, 20000);
    CHECK(discrete_bound(dc, bm, bp, true) ==
          doctest::Approx(scan.mu_plus).epsilon(1e-6));
    CHECK(discrete_bound(dc, bm, bp, false) ==
          doctest::Approx(scan.mu_minus).epsilon(1e-6));
  }
}

TEST_CASE("symmetric law with reciprocal bounds gives symmetric endpoints") {
  DiscreteConditional dc;
  dc.support = {-1.0, 0.0, 1.0};
  dc.probs = {0.25, 0.5, 0.25};
  for (const double bp : {1.2, 1.6, 2.5, 4.0}) {
    const ScanResult scan = rockafellar_scan(dc, 1.0 / bp, bp, 20000);
    CHECK(scan.mu_plus + scan.mu_minus ==
          doctest::Approx(2.0 * dc.mean()).epsilon(1e-8));
  }
}

TEST_CASE("bounds approach the support ends as the budget grows") {
  DiscreteConditional dc;
  dc.support = {-1.3, -0.4, 0.2, 0.9, 2.1};
  dc.probs = {0.15, 0.2, 0.3, 0.25, 0.1};
  double prev_hi = -1e300, prev_lo = 1e300;
  double hi = 0.0, lo = 0.0;
  for (int j = 0; j <= 20; ++j) {
    const double bp = std::pow(2.0, j);
    const double bm = 1.0 / bp;
    hi = discrete_bound(dc, bm, bp, true);
    lo = discrete_bound(dc, bm, bp, false);
    CHECK(hi >= prev_hi - 1e-12);
    CHECK(lo <= prev_lo + 1e-12);
    prev_hi = hi;
    prev_lo = lo;
  }
  CHECK(hi == doctest::Approx(2.1).epsilon(1e-4));
  CHECK(lo == doctest::Approx(-1.3).epsilon(1e-4));
}

TEST_CASE("pseudo outcome equals the plug-in part off the treated arm") {
  const SynthProblem sp = make_synth(200, 0.5, 21);
  const NuisanceSet ns = exact_nuisances(sp, 0.8, 1.5);
  const RatioBounds rb = RatioBounds::constants(0.8, 1.5);
  const KernelSpec kernel;
  for (int i = 0; i < 200; ++i) {
    if (sp.data.t[i] == 1) continue;
    const auto x = sp.data.x.row(i).transpose();
    const double plug =
        capo_closed_form(true, ns.quantile_upper(i, 1.0, 1.0, x),
                         ns.tail_up_upper(i, 1.0, 1.0, x),
                         ns.tail_low_upper(i, 1.0, 1.0, x), 0.8, 1.5);
    CHECK(pseudo_outcome(true, sp.data, i, ns, rb, 1.0, 1.0, kernel, true) ==
          doctest::Approx(plug).epsilon(1e-12));
  }
}

TEST_CASE("identity bounds reduce the pseudo outcome to aipw") {
  const SynthProblem sp = make_synth(500, 0.5, 23);
  const NuisanceSet ns = exact_nuisances(sp, 1.0, 1.0);
  const RatioBounds rb = RatioBounds::constants(1.0, 1.0);
  const KernelSpec kernel;
  const double t = 1.0, z = 1.0;
  for (int i = 0; i < 500; ++i) {
    const auto x = sp.data.x.row(i).transpose();
    const double m_hat = ns.quantile_upper(i, t, z, x) + ns.tail_up_upper(i, t, z, x) -
                         ns.tail_low_upper(i, t, z, x);
    double expected = m_hat;
    if (sp.data.t[i] == 1 && std::abs(sp.data.z_assumed.values[i] - z) <= 1e-9) {
      const double w = 1.0 / (sp.p_t * sp.p_z1);
      expected += w * (sp.data.y[i] - m_hat);
    }
    const double up = pseudo_outcome(true, sp.data, i, ns, rb, t, z, kernel, true);
    const double lo = pseudo_outcome(false, sp.data, i, ns, rb, t, z, kernel, true);
    CHECK(up == doctest::Approx(expected).epsilon(1e-10));
    CHECK(lo == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("pseudo outcomes are conditionally unbiased for the sharp bound") {
  // All rows share x = 0.3, so the sample mean of phi+ targets the
  // conditional bound at that covariate value.
  const SynthProblem sp = make_synth(100000, 0.5, 29, 0.3);
  const double bm = 0.7, bp = 1.6;
  const PseudoOutcomeVector pv = synth_pseudo(sp, bm, bp, 1.0, 1.0);

  Vector x(1);
  x << 0.3;
  const double mu_plus =
      outcome_mean(sp.law, 1.0, 1.0, x) + sp.sd * unit_gaussian_bound(bm, bp, true);
  const double mu_minus =
      outcome_mean(sp.law, 1.0, 1.0, x) + sp.sd * unit_gaussian_bound(bm, bp, false);

  const ApoBounds apo = estimate_apo_bounds(pv);
  const double se_hi = std::sqrt(apo.var_hi / apo.n_used);
  const double se_lo = std::sqrt(apo.var_lo / apo.n_used);
  CHECK(std::abs(apo.hi - mu_plus) < 3.0 * se_hi);
  CHECK(std::abs(apo.lo - mu_minus) < 3.0 * se_lo);
  CHECK(apo.lo < apo.hi);
}

TEST_CASE("non finite intermediates name the offending row") {
  SynthProblem sp = make_synth(50, 0.5, 31);
  int bad = -1;
  for (int i = 0; i < 50; ++i) {
    if (sp.data.t[i] == 1 && sp.data.z_assumed.values[i] == 1.0) {
      bad = i;
      break;
    }
  }
  REQUIRE(bad >= 0);
  sp.data.y[bad] = std::numeric_limits<double>::quiet_NaN();
  const NuisanceSet ns = exact_nuisances(sp, 0.8, 1.5);
  const RatioBounds rb = RatioBounds::constants(0.8, 1.5);
  CHECK_THROWS_WITH_AS(
      pseudo_outcome(true, sp.data, bad, ns, rb, 1.0, 1.0, KernelSpec{}, true),
      doctest::Contains("row"), std::runtime_error);
}

TEST_CASE("apo estimates from constant pseudo outcomes are a point") {
  PseudoOutcomeVector pv;
  pv.rows = {0, 1, 2, 3};
  pv.phi_plus = Vector::Constant(4, 1.25);
  pv.phi_minus = Vector::Constant(4, 0.75);
  pv.fold_of = IntVector::Zero(4);
  const ApoBounds apo = estimate_apo_bounds(pv);
  CHECK(apo.hi == doctest::Approx(1.25).epsilon(1e-14));
  CHECK(apo.lo == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(apo.var_hi == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(apo.ci_hi[0] == doctest::Approx(1.25).epsilon(1e-14));
  CHECK(apo.ci_hi[1] == doctest::Approx(1.25).epsilon(1e-14));

  PseudoOutcomeVector empty;
  CHECK_THROWS(estimate_apo_bounds(empty));
}

TEST_CASE("noiseless matched data with identity bounds recovers the truth exactly") {
  const Graph g = ExperimentConfig{}.make_network(800, 5);
  DgpConfig law;
  law.noise_sd = 0.0;
  law.spec_true = ExposureSpec::mean();
  law.spec_assumed = ExposureSpec::mean();
  law.seed = 6;
  const Dataset data = simulate(law, g);

  const MisspecModel identity = MisspecModel::msm(1.0, 1.0);
  const CrossfitNuisances cf = oracle_nuisances(data, g, law, identity, 1.0, 0.5);
  const PseudoOutcomeVector pv = compute_pseudo_outcomes(
      data, g, ExposureSpec::mean(), cf, 1.0, 0.5, KernelSpec{});
  const ApoBounds apo = estimate_apo_bounds(pv);

  double truth = 0.0;
  for (const int i : pv.rows)
    truth += outcome_mean(law, 1.0, 0.5, data.x.row(i));
  truth /= static_cast<double>(pv.rows.size());

  CHECK(apo.hi == doctest::Approx(truth).epsilon(1e-10));
  CHECK(apo.lo == doctest::Approx(truth).epsilon(1e-10));
  CHECK(apo.attainable_share < 1.0);
  CHECK(apo.attainable_share > 0.1);
}

TEST_CASE("apo confidence intervals are calibrated") {
  const double bm = 0.8, bp = 1.4, sd = 0.5;
  // Population bound: covariate mean of m plus the Gaussian tilt. The
  // uniform covariate makes the odd baseline terms vanish, leaving
  // E f(x) = -0.2/3.
  const double base = 0.8 + 0.6 + 0.2;  // m(1, 1, 0)
  const double psi_plus = base - 0.2 / 3.0 + sd * unit_gaussian_bound(bm, bp, true);

  int covered = 0;
  const int reps = 200;
  for (int rep = 0; rep < reps; ++rep) {
    const SynthProblem sp = make_synth(2000, sd, 1000 + rep);
    const PseudoOutcomeVector pv = synth_pseudo(sp, bm, bp, 1.0, 1.0);
    const ApoBounds apo = estimate_apo_bounds(pv);
    if (psi_plus >= apo.ci_hi[0] && psi_plus <= apo.ci_hi[1]) ++covered;
  }
  CHECK(covered >= 180);
  CHECK(covered <= 198);
}

TEST_CASE("capo second stage recovers curves and repairs crossings") {
  PseudoOutcomeVector flat;
  flat.rows = {0, 1, 2, 3, 4, 5, 6, 7};
  flat.phi_plus = Vector::Constant(8, 2.5);
  flat.phi_minus = Vector::Constant(8, 2.5);
  flat.fold_of = IntVector::Zero(8);
  Dataset small;
  small.x = sample_covariates(8, 1, 3);
  Matrix grid(5, 1);
  grid << -0.8, -0.4, 0.0, 0.4, 0.8;
  const CapoCurve curve = estimate_capo_bounds(flat, small, grid, LearnerSpec{});
  for (int k = 0; k < 5; ++k) {
    CHECK(curve.lo[k] == doctest::Approx(2.5).epsilon(1e-9));
    CHECK(curve.hi[k] == doctest::Approx(2.5).epsilon(1e-9));
  }

  const SynthProblem sp = make_synth(20000, 0.5, 37);
  const double bm = 0.7, bp = 1.6;
  const PseudoOutcomeVector pv = synth_pseudo(sp, bm, bp, 1.0, 1.0);
  Matrix xg(101, 1);
  for (int k = 0; k <= 100; ++k) xg(k, 0) = -1.0 + 0.02 * k;
  LearnerSpec second;
  second.kind = LearnerKind::binned;
  second.bins = 20;
  const CapoCurve fit = estimate_capo_bounds(pv, sp.data, xg, second);

  double l2_hi = 0.0, l2_lo = 0.0;
  for (int k = 0; k <= 100; ++k) {
    CHECK(fit.lo[k] <= fit.hi[k] + 1e-12);
    const double mu_hi = outcome_mean(sp.law, 1.0, 1.0, xg.row(k)) +
                         sp.sd * unit_gaussian_bound(bm, bp, true);
    const double mu_lo = outcome_mean(sp.law, 1.0, 1.0, xg.row(k)) +
                         sp.sd * unit_gaussian_bound(bm, bp, false);
    l2_hi += (fit.hi[k] - mu_hi) * (fit.hi[k] - mu_hi);
    l2_lo += (fit.lo[k] - mu_lo) * (fit.lo[k] - mu_lo);
  }
  CHECK(std::sqrt(l2_hi / 101.0) < 0.1);
  CHECK(std::sqrt(l2_lo / 101.0) < 0.1);
}

TEST_CASE("effect bounds collapse to the point effect at identity bounds") {
  const SynthProblem sp = make_synth(40000, 0.5, 41);
  const PseudoOutcomeVector treated = synth_pseudo(sp, 1.0, 1.0, 1.0, 0.0);
  const PseudoOutcomeVector control = synth_pseudo(sp, 1.0, 1.0, 0.0, 0.0);
  const EffectBounds ade = effect_bounds(EffectKind::direct, treated, control);
  CHECK(ade.hi == doctest::Approx(ade.lo).epsilon(1e-10));
  const double se = std::sqrt(ade.var_hi / ade.n_used);
  CHECK(std::abs(ade.hi - 0.8) < 3.0 * se);
  CHECK(ade.n_used == 40000);
}

TEST_CASE("effect bounds order and widen with the budget") {
  const SynthProblem sp = make_synth(5000, 0.5, 43);
  const PseudoOutcomeVector a1 = synth_pseudo(sp, 0.9, 1.1, 1.0, 0.0);
  const PseudoOutcomeVector b1 = synth_pseudo(sp, 0.9, 1.1, 0.0, 0.0);
  const PseudoOutcomeVector a2 = synth_pseudo(sp, 0.81, 1.21, 1.0, 0.0);
  const PseudoOutcomeVector b2 = synth_pseudo(sp, 0.81, 1.21, 0.0, 0.0);

  const EffectBounds narrow = effect_bounds(EffectKind::direct, a1, b1);
  const EffectBounds wide = effect_bounds(EffectKind::direct, a2, b2);
  CHECK(narrow.lo <= narrow.hi);
  CHECK(wide.lo <= wide.hi);
  CHECK(wide.hi - wide.lo >= narrow.hi - narrow.lo - 1e-12);
}

TEST_CASE("effect bounds validate their arguments") {
  const SynthProblem sp = make_synth(100, 0.5, 47);
  const PseudoOutcomeVector a = synth_pseudo(sp, 0.9, 1.1, 1.0, 1.0);
  const PseudoOutcomeVector b = synth_pseudo(sp, 0.9, 1.1, 0.0, 0.0);
  CHECK_THROWS_WITH_AS(effect_bounds(EffectKind::direct, a, b),
                       doctest::Contains("matching z"), std::invalid_argument);
  const PseudoOutcomeVector c = synth_pseudo(sp, 0.9, 1.1, 1.0, 0.0);
  CHECK_THROWS_WITH_AS(effect_bounds(EffectKind::spillover, a, b),
                       doctest::Contains("matching treatments"), std::invalid_argument);
  CHECK_NOTHROW(effect_bounds(EffectKind::overall, a, b));
  CHECK_NOTHROW(effect_bounds(EffectKind::spillover, a, c));
}

TEST_CASE("plug-in and orthogonal estimates agree under true nuisances") {
  const Graph g = ExperimentConfig{}.make_network(5000, 51);
  DgpConfig law;
  law.noise_sd = 0.5;
  law.spec_true = ExposureSpec::mean();
  law.spec_assumed = ExposureSpec::mean();
  law.seed = 52;
  const Dataset data = simulate(law, g);

  const MisspecModel misspec = MisspecModel::msm(0.8, 1.25);
  const CrossfitNuisances cf = oracle_nuisances(data, g, law, misspec, 1.0, 0.5);
  const KernelSpec kernel;
  const PseudoOutcomeVector pv =
      compute_pseudo_outcomes(data, g, ExposureSpec::mean(), cf, 1.0, 0.5, kernel);
  const ApoBounds ortho = estimate_apo_bounds(pv);
  const ApoBounds plug = plugin_estimate(data, g, ExposureSpec::mean(), cf, 1.0, 0.5,
                                         kernel);
  const ApoBounds plug2 = plugin_estimate(data, g, ExposureSpec::mean(), cf, 1.0, 0.5,
                                          kernel);
  CHECK(plug.hi == plug2.hi);
  CHECK(plug.lo == plug2.lo);

  // The correction term averages to zero in expectation, so the two
  // estimators differ by Monte Carlo noise only.
  const double se_hi = std::sqrt(ortho.var_hi / ortho.n_used);
  const double se_lo = std::sqrt(ortho.var_lo / ortho.n_used);
  CHECK(std::abs(ortho.hi - plug.hi) < 4.0 * se_hi);
  CHECK(std::abs(ortho.lo - plug.lo) < 4.0 * se_lo);
  CHECK(plug.lo <= plug.hi);
}

TEST_CASE("bound results serialize to json") {
  BoundResult result;
  result.t = 1.0;
  result.z = 0.5;
  result.model = "msm";
  result.factor = 2.0;
  result.apo.lo = 0.1;
  result.apo.hi = 0.9;
  EffectBounds eff;
  eff.kind = EffectKind::direct;
  result.effects.push_back(eff);
  const std::string json = result.to_json(2);
  for (const char* key :
       {"\"target\"", "\"model\"", "\"factor\"", "\"apo\"", "\"effects\"",
        "\"capo_grid\"", "\"direct\""}) {
    CHECK(json.find(key) != std::string::npos);
  }
}
