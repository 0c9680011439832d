#include "armcmc/experiment.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace armcmc;
using namespace armcmc::experiment;
using armcmc::testing::vec;

namespace {

struct Traces {
  std::vector<ParamVector> est, truth;
  std::vector<double> pred, ref;
  std::vector<char> active;

  MethodMetrics metrics() const { return compute_metrics(est, truth, pred, ref, active); }
};

Traces constant_traces(std::size_t n, const ParamVector& theta) {
  Traces t;
  t.est.assign(n, theta);
  t.truth.assign(n, theta);
  t.pred.assign(n, 1.0);
  t.ref.assign(n, 1.0);
  t.active.assign(n, 1);
  return t;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// File contents with the last comma-separated field of every line removed.
std::string drop_last_column(const std::string& text) {
  std::istringstream in(text);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
  return out;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("armcmc_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

RunConfig short_needle_run() {
  RunConfig cfg = hunt_crossley_preset();
  cfg.duration = 0.6;
  cfg.needle.trajectory.offset = -2.0;
  cfg.armcmc.pr = {0.05, 0.9};
  cfg.mcmc_plain.samples = 500;
  return cfg;
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics

TEST(Metrics, IdenticalTracesScoreZero) {
  const auto m = constant_traces(10, vec({1.0, 2.0})).metrics();
  EXPECT_EQ(m.mae, ParamVector::Zero(2));
  EXPECT_EQ(m.l2, ParamVector::Zero(2));
  EXPECT_EQ(m.prediction_l2, 0.0);
  EXPECT_EQ(m.prediction_mae, 0.0);
}

TEST(Metrics, ConstantOffsetOnOneParameter) {
  auto t = constant_traces(7, vec({1.0, 2.0}));
  for (auto& e : t.est) e[0] += 1.0;
  const auto m = t.metrics();
  EXPECT_DOUBLE_EQ(m.mae[0], 1.0);
  EXPECT_EQ(m.mae[1], 0.0);
  EXPECT_DOUBLE_EQ(m.l2[0], std::sqrt(7.0));
}

TEST(Metrics, TwoStepHandExample) {
  Traces t = constant_traces(2, vec({1.0}));
  t.est = {vec({0.0}), vec({2.0})};
  EXPECT_DOUBLE_EQ(t.metrics().mae[0], 1.0);
}

TEST(Metrics, MaeUsesActiveSamplesOnly) {
  Traces t = constant_traces(4, vec({0.0}));
  t.est = {vec({5.0}), vec({1.0}), vec({1.0}), vec({5.0})};
  t.active = {0, 1, 1, 0};
  const auto m = t.metrics();
  EXPECT_DOUBLE_EQ(m.mae[0], 1.0);
  EXPECT_DOUBLE_EQ(m.l2[0], std::sqrt(52.0));
}

TEST(Metrics, LengthMismatchThrows) {
  Traces t = constant_traces(5, vec({1.0}));
  t.pred.pop_back();
  EXPECT_THROW(t.metrics(), Error);
  t = constant_traces(5, vec({1.0}));
  t.truth.pop_back();
  EXPECT_THROW(t.metrics(), Error);
}

TEST(Metrics, NonNegativeProperty) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 50; ++trial) {
    Traces t = constant_traces(20, vec({0.0, 0.0, 0.0}));
    for (std::size_t k = 0; k < 20; ++k) {
      t.est[k] = vec({n(rng), n(rng), n(rng)});
      t.pred[k] = n(rng);
      t.active[k] = static_cast<char>(k % 3 != 0);
    }
    const auto m = t.metrics();
    EXPECT_GE(m.mae.minCoeff(), 0.0);
    EXPECT_GE(m.l2.minCoeff(), 0.0);
    EXPECT_GE(m.prediction_l2, 0.0);
    EXPECT_GE(m.prediction_mae, 0.0);
  }
}

// ---------------------------------------------------------------------------
// k_min curve

TEST(KminCurve, EndpointsAndCompleteness) {
  const std::vector<PrecisionReliability> prs{{0.01, 0.9}, {0.05, 0.95}};
  std::vector<double> lambdas{0.0};
  for (int i = 1; i <= 19; ++i) lambdas.push_back(i / 20.0);
  lambdas.push_back(1.0);
  const auto rows = kmin_curve(prs, lambdas);
  ASSERT_EQ(rows.size(), prs.size() * lambdas.size());
  for (const auto& r : rows) {
    EXPECT_TRUE(r.converged) << r.lambda;
    if (r.lambda == 0.0 || r.lambda == 1.0) EXPECT_EQ(r.k_min, chernoff_min_samples({r.epsilon, r.delta}));
  }
  EXPECT_EQ(rows[lambdas.size() - 1].k_min, 14979u);
}

TEST(KminCurve, NonConvergenceIsFlaggedNotDropped) {
  const std::vector<PrecisionReliability> prs{{0.01, 0.9}};
  const std::vector<double> lambdas{0.3, 0.7, 1.0};
  const auto rows = kmin_curve(prs, lambdas, 1);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_FALSE(rows[0].converged);
  EXPECT_FALSE(rows[1].converged);
  EXPECT_TRUE(rows[2].converged);
}

TEST(KminCurve, CsvFormat) {
  const std::vector<PrecisionReliability> prs{{0.01, 0.9}};
  const std::vector<double> lambdas{1.0};
  std::ostringstream out;
  emit_kmin_curve(out, prs, lambdas);
  EXPECT_EQ(out.str(), "epsilon,delta,lambda,k_min,converged\n0.01,0.9,1,14979,1\n");
  EXPECT_THROW(kmin_curve(prs, std::span<const double>{}), Error);
}

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, OverridesPresetValues) {
  std::istringstream in(R"(
[run]
preset = hunt_crossley
methods = rls, pf
seed = 11
duration = 2.5

[armcmc]
epsilon = 0.02
noise_sigma = 0.3
prior_mean = 1.1, 0.2, 1.3
gaussian_center = point_estimate

[pf]
particles = 64
resample = ess

[needle]
amplitude = 12
)");
  const RunConfig cfg = parse_config(in);
  EXPECT_EQ(cfg.model, ModelKind::hunt_crossley);
  EXPECT_EQ(cfg.methods, (std::vector<Method>{Method::rls, Method::pf}));
  EXPECT_EQ(cfg.seed, 11u);
  EXPECT_EQ(cfg.duration, 2.5);
  EXPECT_EQ(cfg.armcmc.pr.epsilon, 0.02);
  EXPECT_EQ(cfg.armcmc.pr.delta, 0.9);
  EXPECT_EQ(cfg.armcmc_noise_sigma.value(), 0.3);
  EXPECT_EQ(cfg.armcmc.prior.mean, vec({1.1, 0.2, 1.3}));
  EXPECT_EQ(cfg.armcmc.gaussian_center, GaussianCenter::point_estimate);
  EXPECT_EQ(cfg.pf.particles, 64u);
  EXPECT_EQ(cfg.pf.policy, ResamplePolicy::ess_triggered);
  EXPECT_EQ(cfg.needle.trajectory.amplitude, 12.0);
}

TEST(Config, ActuatorSchedule) {
  std::istringstream in("[run]\npreset = actuator\n[actuator]\nschedule = 1.5:0.3:0; 0.5:0:0.2\n");
  const RunConfig cfg = parse_config(in);
  ASSERT_EQ(cfg.actuator.schedule.size(), 2u);
  EXPECT_EQ(cfg.actuator.schedule[1].duration, 0.5);
  EXPECT_EQ(cfg.actuator.schedule[1].u_d, 0.2);
}

TEST(Config, Errors) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
  };
  EXPECT_THROW(parse("[armcmc]\nepsilon = 0.1\n"), Error);
  EXPECT_THROW(parse("[run]\npreset = bogus\n"), Error);
  EXPECT_THROW(parse("[run]\npreset = actuator\nmethods = rls, magic\n"), Error);
  EXPECT_THROW(parse("[run]\npreset = actuator\n[armcmc]\nprior_mean = 1, 2, 3\n"), Error);
  EXPECT_THROW(parse("[run]\npreset = actuator\n[armcmc]\nepsilon = 2\n"), Error);
  EXPECT_THROW(parse("[run]\npreset = actuator\nseed = -1\n"), Error);
  EXPECT_THROW(load_config("/nonexistent/armcmc.ini"), Error);
}

TEST(Config, ShippedExamplesParse) {
  for (const char* name : {"hunt_crossley.ini", "actuator.ini"}) {
    const auto path = std::filesystem::path(ARMCMC_SOURCE_DIR) / "configs" / name;
    EXPECT_NO_THROW(load_config(path)) << name;
  }
}

// ---------------------------------------------------------------------------
// Experiment runs

TEST(Experiment, MissingMethodsYieldAbsentRows) {
  RunConfig cfg = short_needle_run();
  cfg.methods = {Method::rls};
  const auto r = run_experiment(cfg);
  ASSERT_EQ(r.report.rows.size(), 1u);
  EXPECT_NE(r.report.find("rls"), nullptr);
  EXPECT_EQ(r.report.find("ar-aps"), nullptr);
  EXPECT_EQ(r.report.find("pf"), nullptr);
  EXPECT_THROW(r.report.at("pf"), Error);
}

TEST(Experiment, NeedleReportHasContactMetricSet) {
  const auto r = run_experiment(short_needle_run());
  EXPECT_EQ(r.report.param_names, (std::vector<std::string>{"K_e", "B_e", "p"}));
  for (const char* name : {"rls", "ar-maps", "ar-aps", "mcmc-1"}) {
    const auto* m = r.report.find(name);
    ASSERT_NE(m, nullptr) << name;
    EXPECT_EQ(m->mae.size(), 3);
    EXPECT_TRUE(std::isfinite(m->prediction_mae));
  }
  EXPECT_EQ(r.evaluated_samples % 100, 0u);
  EXPECT_EQ(r.diagnostics.size(), r.evaluated_samples / 100);
}

TEST(Experiment, ActuatorReportHasTable2MetricSet) {
  RunConfig cfg = actuator_preset();
  cfg.duration = 0.5;
  cfg.armcmc.pr = {0.05, 0.9};
  const auto r = run_experiment(cfg);
  EXPECT_EQ(r.report.param_names, (std::vector<std::string>{"theta1", "theta2"}));
  for (const char* name : {"rls", "pf", "ar-maps", "ar-aps"}) {
    const auto* m = r.report.find(name);
    ASSERT_NE(m, nullptr) << name;
    EXPECT_EQ(m->l2.size(), 2);
    EXPECT_GE(m->prediction_l2, 0.0);
    EXPECT_GE(m->mean_step_ms, 0.0);
  }
}

TEST(Experiment, SameSeedSameNumbersAndFiles) {
  RunConfig cfg = short_needle_run();
  cfg.methods = {Method::rls, Method::pf, Method::armcmc, Method::mcmc_plain};
  const auto dir_a = scratch_dir("det_a");
  const auto dir_b = scratch_dir("det_b");
  cfg.output_dir = dir_a.string();
  const auto a = run_experiment(cfg);
  cfg.output_dir = dir_b.string();
  const auto b = run_experiment(cfg);
  EXPECT_TRUE(same_numbers(a.report, b.report));

  for (const char* f : {"dataset.csv", "truth.csv", "posterior_grid.csv", "trace_rls.csv", "trace_pf.csv",
                        "trace_ar-maps.csv", "trace_ar-aps.csv", "trace_mcmc-1.csv"}) {
    ASSERT_TRUE(std::filesystem::exists(dir_a / f)) << f;
    EXPECT_EQ(slurp(dir_a / f), slurp(dir_b / f)) << f;
  }
  // Timing sits in the last column of these files.
  for (const char* f : {"armcmc_diagnostics.csv", "metrics.csv"})
    EXPECT_EQ(drop_last_column(slurp(dir_a / f)), drop_last_column(slurp(dir_b / f))) << f;

  cfg.seed += 1;
  cfg.output_dir.clear();
  EXPECT_FALSE(same_numbers(a.report, run_experiment(cfg).report));
}

TEST(Experiment, MethodStreamsAreIndependent) {
  RunConfig cfg = short_needle_run();
  cfg.methods = {Method::armcmc};
  const auto alone = run_experiment(cfg);
  cfg.methods = {Method::pf, Method::rls, Method::armcmc};
  const auto mixed = run_experiment(cfg);
  const auto& x = alone.report.at("ar-aps");
  const auto& y = mixed.report.at("ar-aps");
  EXPECT_EQ(x.mae, y.mae);
  EXPECT_EQ(x.prediction_l2, y.prediction_l2);
}

TEST(Experiment, SimulatedDatasetReloads) {
  RunConfig cfg = short_needle_run();
  cfg.methods = {Method::rls};
  const auto dir = scratch_dir("reload");
  cfg.output_dir = dir.string();
  const auto first = run_experiment(cfg);
  cfg.output_dir.clear();
  cfg.dataset_dir = dir.string();
  const auto second = run_experiment(cfg);
  ASSERT_EQ(second.dataset.observations.size(), first.dataset.observations.size());
  for (std::size_t k = 0; k < first.dataset.observations.size(); ++k) {
    ASSERT_EQ(second.dataset.observations[k].input, first.dataset.observations[k].input);
    ASSERT_EQ(second.dataset.observations[k].output, first.dataset.observations[k].output);
    ASSERT_EQ(second.dataset.true_theta[k], first.dataset.true_theta[k]);
    ASSERT_EQ(second.dataset.active[k], first.dataset.active[k]);
  }
  EXPECT_EQ(second.dataset.noise_sigma, first.dataset.noise_sigma);
  EXPECT_TRUE(same_numbers(first.report, second.report));
}

TEST(Experiment, DiagnosticsJsonMirrorsCsv) {
  RunConfig cfg = short_needle_run();
  cfg.methods = {Method::armcmc};
  const auto r = run_experiment(cfg);
  ASSERT_FALSE(r.diagnostics.empty());
  const auto first = diagnostics_json(r.diagnostics.front());
  EXPECT_TRUE(first["zeta"].is_null());
  EXPECT_EQ(first["mode"], "modification");
  const auto second = diagnostics_json(r.diagnostics[1]);
  EXPECT_DOUBLE_EQ(second["zeta"].get<double>(), r.diagnostics[1].zeta);
  EXPECT_EQ(second["k_min"].get<std::size_t>(), r.diagnostics[1].k_min);
}

/**
 * Noise-free, stationary actuator inflation over five packs. Thresholds are
 * per method and expressed in units of the prior scale: RLS solves an exact
 * linear model, ARMCMC is limited by its Monte Carlo resolution and the PF
 * by its parameter jitter.
 */
TEST(Experiment, NoiselessStationaryMicroRun) {
  RunConfig cfg = actuator_preset();
  cfg.duration = 0.5;
  cfg.actuator.noise_pressure = 0.0;
  cfg.actuator.noise_pressure_rate = 0.0;
  cfg.actuator.schedule = {{10.0, 0.4, 0.0}};
  cfg.armcmc_noise_sigma = 0.1;
  const auto r = run_experiment(cfg);
  ASSERT_EQ(r.evaluated_samples, 500u);
  const ParamVector scale = cfg.armcmc.prior.scale;
  const std::vector<std::pair<std::string, double>> limits{
      {"rls", 0.1}, {"ar-maps", 0.2}, {"ar-aps", 0.2}, {"pf", 2.0}};
  for (const auto& [name, limit] : limits) {
    const ParamVector rel = r.report.at(name).mae.cwiseQuotient(scale);
    EXPECT_LT(rel.maxCoeff(), limit) << name << " " << rel.transpose();
  }
}

TEST(Experiment, UnknownNamesAreRejected) {
  EXPECT_THROW(preset("nope"), Error);
  EXPECT_THROW(parse_method("kalman"), Error);
  EXPECT_THROW(parse_model("pendulum"), Error);
  EXPECT_EQ(parse_method("mcmc_plain"), Method::mcmc_plain);
}
