#include "netbound/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

using namespace netbound;

#ifndef NETBOUND_VERSION
#define NETBOUND_VERSION "0.0.0"
#endif

void write_edge_list(const Graph& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "'");
  out << "i,j\n";
  for (const auto& [i, j] : g.edge_list()) out << i << "," << j << "\n";
  if (!out.good()) throw std::runtime_error("write failed for '" + path + "'");
}

struct NetworkArgs {
  std::string generator = "erdos_renyi";
  int n = 1000;
  double avg_degree = 10.0;
  int ba_m = 3;
  int sbm_blocks = 4;
  double sbm_p_in = 0.03;
  double sbm_p_out = 0.003;
};

void add_network_flags(CLI::App* cmd, NetworkArgs& net) {
  cmd->add_option("--generator", net.generator,
                  "erdos_renyi, barabasi_albert or sbm")
      ->check(CLI::IsMember({"erdos_renyi", "barabasi_albert", "sbm"}));
  cmd->add_option("--n", net.n, "node count")->check(CLI::PositiveNumber);
  cmd->add_option("--avg-degree", net.avg_degree, "erdos_renyi expected degree");
  cmd->add_option("--ba-m", net.ba_m, "barabasi_albert attachment count");
  cmd->add_option("--sbm-blocks", net.sbm_blocks, "sbm block count");
  cmd->add_option("--sbm-p-in", net.sbm_p_in, "sbm within-block probability");
  cmd->add_option("--sbm-p-out", net.sbm_p_out, "sbm between-block probability");
}

Graph build_network(const NetworkArgs& net, std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.generator = net.generator;
  cfg.n_nodes = net.n;
  cfg.avg_degree = net.avg_degree;
  cfg.ba_m = net.ba_m;
  cfg.sbm_blocks = net.sbm_blocks;
  cfg.sbm_p_in = net.sbm_p_in;
  cfg.sbm_p_out = net.sbm_p_out;
  return cfg.make_network(net.n, seed);
}

nlohmann::json apo_json(const ApoBounds& b) {
  nlohmann::json j;
  j["lo"] = b.lo;
  j["hi"] = b.hi;
  j["ci_lo"] = {b.ci_lo[0], b.ci_lo[1]};
  j["ci_hi"] = {b.ci_hi[0], b.ci_hi[1]};
  j["var_lo"] = b.var_lo;
  j["var_hi"] = b.var_hi;
  j["n_used"] = b.n_used;
  j["attainable_share"] = b.attainable_share;
  j["clipped_share"] = b.clipped_share;
  j["sharp"] = b.sharp;
  return j;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"netbound: sharp bounds on network treatment effects under "
               "misspecified exposure mappings"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "write a network edge list");
  NetworkArgs gen_net;
  std::uint64_t gen_seed = 1;
  std::string gen_out = "network.csv";
  add_network_flags(gen, gen_net);
  gen->add_option("--seed", gen_seed, "rng seed");
  gen->add_option("--out", gen_out, "output edge-list csv");

  auto* sim = app.add_subcommand("simulate", "simulate one dataset from a config");
  std::string sim_config;
  std::string sim_out = "dataset.csv";
  std::uint64_t sim_seed = 0;
  int sim_n = 0;
  sim->add_option("--config", sim_config, "experiment config (ini or json)")
      ->required()
      ->check(CLI::ExistingFile);
  sim->add_option("--out", sim_out, "output dataset csv");
  sim->add_option("--seed", sim_seed, "override config seed");
  sim->add_option("--n", sim_n, "override node count")->check(CLI::PositiveNumber);

  auto* est = app.add_subcommand(
      "estimate", "simulate once and print bound estimates for the target arm");
  std::string est_config;
  std::uint64_t est_seed = 0;
  double est_factor = 1.0;
  std::string est_out;
  est->add_option("--config", est_config, "experiment config (ini or json)")
      ->required()
      ->check(CLI::ExistingFile);
  est->add_option("--seed", est_seed, "override config seed");
  est->add_option("--factor", est_factor, "sensitivity budget factor")
      ->check(CLI::PositiveNumber);
  est->add_option("--out", est_out, "write the JSON report here instead of stdout");

  auto* exp = app.add_subcommand("experiment", "run a full experiment config");
  std::string exp_config;
  std::string exp_out, exp_format;
  std::uint64_t exp_seed = 0;
  int exp_workers = 0;
  exp->add_option("--config", exp_config, "experiment config (ini or json)")
      ->required()
      ->check(CLI::ExistingFile);
  exp->add_option("--out", exp_out, "output path base");
  exp->add_option("--seed", exp_seed, "override config seed");
  exp->add_option("--workers", exp_workers, "worker threads (0: auto)");
  exp->add_option("--format", exp_format, "csv or json")
      ->check(CLI::IsMember({"csv", "json"}));

  auto* chk = app.add_subcommand(
      "oracle-check", "triangulate closed form, scan and tilted mean");
  int chk_instances = 200;
  std::uint64_t chk_seed = 1;
  chk->add_option("--instances", chk_instances, "random instances")
      ->check(CLI::PositiveNumber);
  chk->add_option("--seed", chk_seed, "rng seed");

  app.add_subcommand("version", "print the version");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);  // --help and friends
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (gen->parsed()) {
    const Graph g = build_network(gen_net, gen_seed);
    write_edge_list(g, gen_out);
    std::cout << "wrote " << gen_out << ": n=" << g.node_count()
              << " edges=" << g.edge_count() << "\n";
    return 0;
  }

  if (sim->parsed()) {
    ExperimentConfig cfg = ExperimentConfig::from_file(sim_config);
    if (sim->count("--seed")) cfg.seed = sim_seed;
    if (sim->count("--n")) cfg.n_nodes = sim_n;
    cfg.validate();
    const Graph g = cfg.make_network(cfg.n_nodes, cfg.seed);
    const DgpConfig dgp = cfg.dgp_config(g, cfg.seed);
    const Dataset data = simulate(dgp, g);
    data.save_csv_file(sim_out);
    std::cout << "wrote " << sim_out << ": n=" << data.size() << " d=" << cfg.d
              << "\n";
    return 0;
  }

  if (est->parsed()) {
    ExperimentConfig cfg = ExperimentConfig::from_file(est_config);
    if (est->count("--seed")) cfg.seed = est_seed;
    cfg.validate();
    const Graph g = cfg.make_network(cfg.n_nodes, cfg.seed);
    const DgpConfig dgp = cfg.dgp_config(g, cfg.seed);
    const Dataset data = simulate(dgp, g);
    const double t = cfg.t_target;
    const double z = cfg.resolved_z();
    const KernelSpec kernel{KernelKind::epanechnikov, cfg.h};
    const ExposureSpec assumed = cfg.spec_assumed();
    const MisspecModel misspec = cfg.misspec_model(est_factor);
    const auto cf =
        crossfit_nuisances(data, g, assumed, misspec, cfg.K, t, z, cfg.h,
                           cfg.learner_specs(), cfg.seed, cfg.eps_clip);
    const auto pv = compute_pseudo_outcomes(data, g, assumed, cf, t, z, kernel, true,
                                            cfg.workers);
    const ApoBounds apo = estimate_apo_bounds(pv);
    const ApoBounds plug = plugin_estimate(data, g, assumed, cf, t, z, kernel);

    nlohmann::json j;
    j["scenario"] = scenario_name(cfg.scenario);
    j["t"] = t;
    j["z"] = z;
    j["factor"] = est_factor;
    j["n"] = cfg.n_nodes;
    j["apo"] = apo_json(apo);
    j["apo_plugin"] = apo_json(plug);
    const std::string text = j.dump(2) + "\n";
    if (est_out.empty()) {
      std::cout << text;
    } else {
      std::ofstream out(est_out);
      if (!out) throw std::runtime_error("cannot open '" + est_out + "'");
      out << text;
    }
    return 0;
  }

  if (exp->parsed()) {
    ExperimentConfig cfg = ExperimentConfig::from_file(exp_config);
    if (exp->count("--seed")) cfg.seed = exp_seed;
    if (exp->count("--workers")) cfg.workers = exp_workers;
    if (exp->count("--out")) cfg.output = exp_out;
    if (exp->count("--format")) cfg.format = exp_format;
    const ExperimentSummary summary = run_experiment(cfg);
    emit_results(summary.records, cfg.output, cfg.format);
    std::cout << "records: " << summary.records.size() << "\n";
    for (const auto& fs : summary.by_factor) {
      std::cout << "factor " << fs.factor << ": apo_cov=" << fs.apo_coverage
                << " capo_cov=" << fs.capo_coverage
                << " effect_cov=" << fs.effect_coverage
                << " mean_width=" << fs.mean_width;
      if (summary.mode == ExperimentMode::width)
        std::cout << " rel_width=" << fs.mean_relative_width
                  << " excl0=" << fs.frac_excluding_zero;
      std::cout << "\n";
    }
    if (summary.mode == ExperimentMode::convergence) {
      std::cout << "spearman_rho=" << summary.spearman_rho
                << " ortho_wins_at_largest=" << summary.ortho_wins_at_largest << "/"
                << cfg.runs << "\n";
    }
    std::cout << "wrote " << cfg.output << " (" << cfg.format << ")\n";
    return 0;
  }

  if (chk->parsed()) {
    const double dev = triangulation_max_deviation(chk_instances, chk_seed);
    std::cout << "triangulation max deviation over " << chk_instances
              << " instances: " << dev << "\n";
    return dev < 1e-6 ? 0 : 1;
  }

  std::cout << "netbound " << NETBOUND_VERSION << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
