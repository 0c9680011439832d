// Command-line front end for the experiment harness.

#include "armcmc/experiment.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>

namespace ex = armcmc::experiment;

namespace {

void print_report(const ex::MetricsReport& report) {
  std::cout << std::left << std::setw(10) << "method";
  for (const auto& n : report.param_names) std::cout << std::setw(14) << ("mae_" + n);
  for (const auto& n : report.param_names) std::cout << std::setw(14) << ("l2_" + n);
  const bool actuator = report.model == ex::ModelKind::actuator;
  std::cout << std::setw(14) << (actuator ? "l2_alpha" : "mae_force") << "step_ms\n";
  std::cout << std::setprecision(5);
  for (const auto& [name, m] : report.rows) {
    std::cout << std::setw(10) << name;
    for (Eigen::Index j = 0; j < m.mae.size(); ++j) std::cout << std::setw(14) << m.mae[j];
    for (Eigen::Index j = 0; j < m.l2.size(); ++j) std::cout << std::setw(14) << m.l2[j];
    std::cout << std::setw(14) << (actuator ? m.prediction_l2 : m.prediction_mae) << m.mean_step_ms << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive recursive MCMC identification experiments"};
  app.require_subcommand(1);

  std::string preset_name;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  auto* simulate = app.add_subcommand("simulate", "Generate a dataset and its ground truth");
  simulate->add_option("preset", preset_name, "actuator | hunt_crossley | hunt_crossley_puncture")->required();
  simulate->add_option("--out", out_dir, "Output directory")->required();
  simulate->add_option("--seed", seed, "RNG seed")->each([&](const std::string&) { seed_set = true; });

  std::string config_file;
  std::string override_out;
  auto* identify = app.add_subcommand("identify", "Run ARMCMC on the configured dataset");
  identify->add_option("--config", config_file, "INI run description")->required()->check(CLI::ExistingFile);
  identify->add_option("--out", override_out, "Override the output directory");
  auto* compare = app.add_subcommand("compare", "Run every configured method and report metrics");
  compare->add_option("--config", config_file, "INI run description")->required()->check(CLI::ExistingFile);
  compare->add_option("--out", override_out, "Override the output directory");

  std::vector<double> eps;
  std::vector<double> delta;
  std::vector<double> lambdas;
  std::string curve_out;
  auto* kmin = app.add_subcommand("kmin-curve", "Minimum chain length over a forgetting-factor grid");
  kmin->add_option("--eps", eps, "Precision values")->required();
  kmin->add_option("--delta", delta, "Reliability values (paired with --eps, or one for all)")->required();
  kmin->add_option("--lambda", lambdas, "Forgetting factors (default 0.05, 0.10, ..., 0.95, 1)");
  kmin->add_option("--out", curve_out, "Output CSV (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate) {
      auto cfg = ex::preset(preset_name);
      if (seed_set) cfg.seed = seed;
      std::mt19937_64 rng(cfg.seed);
      const auto data = ex::simulate_dataset(cfg, rng);
      ex::write_dataset(out_dir, data);
      std::cout << "wrote " << data.observations.size() << " samples to " << out_dir << '\n';
    } else if (*identify || *compare) {
      auto cfg = ex::load_config(config_file);
      if (!override_out.empty()) cfg.output_dir = override_out;
      if (*identify) cfg.methods = {ex::Method::armcmc};
      const auto result = ex::run_experiment(cfg);
      print_report(result.report);
    } else if (*kmin) {
      if (delta.size() != 1 && delta.size() != eps.size())
        throw armcmc::Error("kmin-curve: give one --delta or one per --eps");
      std::vector<armcmc::PrecisionReliability> prs;
      for (std::size_t i = 0; i < eps.size(); ++i) {
        armcmc::PrecisionReliability pr{eps[i], delta.size() == 1 ? delta[0] : delta[i]};
        armcmc::validate(pr);
        prs.push_back(pr);
      }
      if (lambdas.empty()) {
        for (int i = 1; i <= 19; ++i) lambdas.push_back(i / 20.0);
        lambdas.push_back(1.0);
      }
      if (curve_out.empty()) {
        ex::emit_kmin_curve(std::cout, prs, lambdas);
      } else {
        std::ofstream out(curve_out);
        if (!out) throw armcmc::Error("cannot write " + curve_out);
        ex::emit_kmin_curve(out, prs, lambdas);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
