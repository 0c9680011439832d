#pragma once

// Experiment harness: build a dataset (simulated or loaded), run the
// selected identification methods over it, and score them against the
// ground truth.

#include "armcmc/armcmc.hpp"
#include "armcmc/baselines.hpp"
#include "armcmc/core.hpp"
#include "armcmc/csv.hpp"
#include "armcmc/models.hpp"
#include "armcmc/sampler.hpp"
#include "armcmc/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace armcmc::experiment {

enum class ModelKind { actuator, hunt_crossley };
enum class Method { armcmc, rls, pf, mcmc_plain };

inline const char* to_string(ModelKind m) { return m == ModelKind::actuator ? "actuator" : "hunt_crossley"; }

inline const char* to_string(Method m) {
  switch (m) {
    case Method::armcmc:
      return "armcmc";
    case Method::rls:
      return "rls";
    case Method::pf:
      return "pf";
    case Method::mcmc_plain:
      return "mcmc_plain";
  }
  return "?";
}

inline ModelKind parse_model(const std::string& s) {
  if (s == "actuator") return ModelKind::actuator;
  if (s == "hunt_crossley" || s == "hunt-crossley") return ModelKind::hunt_crossley;
  throw Error("unknown model '" + s + "'");
}

inline Method parse_method(const std::string& s) {
  if (s == "armcmc") return Method::armcmc;
  if (s == "rls") return Method::rls;
  if (s == "pf") return Method::pf;
  if (s == "mcmc_plain" || s == "mcmc") return Method::mcmc_plain;
  throw Error("unknown method '" + s + "'");
}

struct RlsOptions {
  // Regressor scaling; empty means ones.
  ParamVector input_scale;
  double initial_covariance = 1.0;
  // Saturation half-width in units of the prior scale (0 disables it).
  double saturation_span = 10.0;
};

struct PfRunOptions {
  std::size_t particles = 100;
  // Random-walk jitter on parameters as a fraction of the prior scale.
  double jitter_fraction = 0.01;
  ResamplePolicy policy = ResamplePolicy::every_step;
};

enum class McmcVariant {
  // Fixed reduced chain length per pack.
  reduced_samples,
  // Chernoff-length chains over packs twice as long.
  doubled_pack,
};

struct McmcPlainOptions {
  McmcVariant variant = McmcVariant::reduced_samples;
  std::size_t samples = 5000;
};

struct HeatmapOptions {
  std::size_t bins = 100;
  ParamVector lower;
  ParamVector upper;
};

struct RunConfig {
  ModelKind model = ModelKind::hunt_crossley;
  std::vector<Method> methods{Method::armcmc, Method::rls};
  ArmcmcConfig armcmc;
  // Unset: use the simulator's measurement noise level.
  std::optional<double> armcmc_noise_sigma;
  sim::ActuatorSimConfig actuator;
  sim::NeedleEnvConfig needle;
  double duration = 10.0;
  std::uint64_t seed = 1;
  std::string output_dir;
  // Directory holding dataset.csv and truth.csv written by `simulate`.
  std::string dataset_dir;
  RlsOptions rls;
  PfRunOptions pf;
  McmcPlainOptions mcmc_plain;
  HeatmapOptions heatmap;
};

inline std::vector<std::string> param_names(ModelKind m) {
  if (m == ModelKind::actuator) return {"theta1", "theta2"};
  return {"K_e", "B_e", "p"};
}

inline csv::Schema observation_schema(ModelKind m) {
  if (m == ModelKind::actuator) return {"time_index", {"u_c", "u_d", "p", "pdot"}, {"y"}};
  return {"time_index", {"x", "xdot"}, {"force"}};
}

// ---------------------------------------------------------------------------
// Presets

/// Soft actuator: 20 s of alternating inflate/deflate cycles.
inline RunConfig actuator_preset() {
  RunConfig cfg;
  cfg.model = ModelKind::actuator;
  cfg.methods = {Method::rls, Method::pf, Method::armcmc};
  cfg.duration = 20.0;
  cfg.seed = 2;
  cfg.actuator.schedule = sim::default_actuator_schedule();
  cfg.actuator.noise_pressure = 700.0;         // 0.1% of the 700 kPa span
  cfg.actuator.noise_pressure_rate = 5000.0;   // Pa/s

  auto& a = cfg.armcmc;
  a.pr = {0.01, 0.9};
  a.pack_size = 100;
  a.rho = 0.0;
  a.zeta_threshold = 5.0;
  a.noise = NoiseModel::gaussian(0.0, 5.0);
  a.prior.mean = (ParamVector(2) << -1.5e-4, 2.0e-9).finished();
  a.prior.scale = (ParamVector(2) << 1.0e-4, 5.0e-9).finished();
  a.proposal_scale = (ParamVector(2) << 1.0e-4, 5.0e-9).finished();
  cfg.armcmc_noise_sigma = 5.0;

  cfg.rls.input_scale = (ParamVector(2) << 1e-4, 1e-9).finished();
  cfg.heatmap.lower = (ParamVector(2) << -4e-4, -1e-8).finished();
  cfg.heatmap.upper = (ParamVector(2) << 1e-4, 1.5e-8).finished();
  return cfg;
}

/// Needle contact: one insertion/retraction leaving the tissue near t = 5 s.
inline RunConfig hunt_crossley_preset() {
  RunConfig cfg;
  cfg.model = ModelKind::hunt_crossley;
  cfg.methods = {Method::rls, Method::armcmc, Method::mcmc_plain};
  cfg.duration = 10.0;
  cfg.seed = 3;

  auto& a = cfg.armcmc;
  a.pr = {0.01, 0.9};
  a.pack_size = 100;
  a.rho = 0.0;
  a.zeta_threshold = 0.5;
  a.prior.mean = ParamVector::Constant(3, 1.0);
  a.prior.scale = ParamVector::Constant(3, 0.1);
  a.proposal_scale = ParamVector::Constant(3, 0.1);
  a.gaussian_center = GaussianCenter::chain_state;
  cfg.armcmc_noise_sigma.reset();

  cfg.rls.input_scale = ParamVector::Ones(3);
  cfg.heatmap.lower = ParamVector::Zero(3);
  cfg.heatmap.upper = ParamVector::Constant(3, 2.0);
  return cfg;
}

/// Same as the needle preset but deep enough to puncture the tissue.
inline RunConfig hunt_crossley_puncture_preset() {
  RunConfig cfg = hunt_crossley_preset();
  cfg.needle.trajectory.amplitude = 20.0;
  return cfg;
}

inline RunConfig preset(const std::string& name) {
  if (name == "actuator") return actuator_preset();
  if (name == "hunt_crossley" || name == "hunt-crossley" || name == "needle") return hunt_crossley_preset();
  if (name == "hunt_crossley_puncture" || name == "needle_puncture") return hunt_crossley_puncture_preset();
  throw Error("unknown preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// Dataset

struct Dataset {
  ModelKind model = ModelKind::hunt_crossley;
  std::vector<Observation> observations;
  // Ground-truth parameters at every sample.
  std::vector<ParamVector> true_theta;
  // Samples where the parameters are defined (contact / actuated).
  std::vector<char> active;
  // Noise-free value of interest: actuator angle or contact force.
  std::vector<double> reference;
  double noise_sigma = 0.0;
};

template <class Rng>
Dataset simulate_dataset(const RunConfig& cfg, Rng& rng) {
  Dataset d;
  d.model = cfg.model;
  if (cfg.model == ModelKind::actuator) {
    auto run = sim::simulate_actuator(cfg.actuator, cfg.duration, rng);
    d.observations = std::move(run.observations);
    for (const auto& t : run.truth) {
      d.true_theta.push_back(t.theta);
      d.active.push_back(1);
      d.reference.push_back(t.alpha);
    }
    d.noise_sigma = cfg.actuator.noise_pressure_rate;
  } else {
    auto run = sim::simulate_needle_run(cfg.needle, cfg.duration, rng);
    d.observations = std::move(run.observations);
    for (const auto& t : run.truth) {
      d.true_theta.push_back(t.theta);
      d.active.push_back(t.in_contact && !t.punctured ? 1 : 0);
      d.reference.push_back(t.force);
    }
    d.noise_sigma = run.noise_sigma;
  }
  return d;
}

inline void write_truth(std::ostream& out, const Dataset& d) {
  const auto names = param_names(d.model);
  out << "time_index,active,reference";
  for (const auto& n : names) out << ',' << n;
  out << ",noise_sigma\n";
  for (std::size_t k = 0; k < d.observations.size(); ++k) {
    out << d.observations[k].time_index << ',' << int(d.active[k]) << ',' << csv::format(d.reference[k]);
    for (Eigen::Index j = 0; j < d.true_theta[k].size(); ++j) out << ',' << csv::format(d.true_theta[k][j]);
    out << ',' << csv::format(d.noise_sigma) << '\n';
  }
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& d) {
  std::filesystem::create_directories(dir);
  std::ofstream obs(dir / "dataset.csv");
  csv::write_observations(obs, d.observations, observation_schema(d.model));
  std::ofstream truth(dir / "truth.csv");
  write_truth(truth, d);
}

inline Dataset load_dataset(const std::filesystem::path& dir, ModelKind model) {
  Dataset d;
  d.model = model;
  std::ifstream obs(dir / "dataset.csv");
  if (!obs) throw Error("cannot open " + (dir / "dataset.csv").string());
  d.observations = csv::read_observations(obs, observation_schema(model));

  std::ifstream truth(dir / "truth.csv");
  if (!truth) throw Error("cannot open " + (dir / "truth.csv").string());
  std::string line;
  std::getline(truth, line);
  const auto dim = param_names(model).size();
  while (std::getline(truth, line)) {
    if (line.empty()) continue;
    const auto cells = csv::split(line);
    if (cells.size() < 4 + dim) throw Error("truth.csv: short row");
    d.active.push_back(csv::parse_double(cells[1]) != 0.0 ? 1 : 0);
    d.reference.push_back(csv::parse_double(cells[2]));
    ParamVector theta(static_cast<Eigen::Index>(dim));
    for (std::size_t j = 0; j < dim; ++j) theta[static_cast<Eigen::Index>(j)] = csv::parse_double(cells[3 + j]);
    d.true_theta.push_back(std::move(theta));
    d.noise_sigma = csv::parse_double(cells[3 + dim]);
  }
  if (d.true_theta.size() != d.observations.size()) throw Error("dataset.csv and truth.csv lengths differ");
  return d;
}

// ---------------------------------------------------------------------------
// Metrics

struct MethodMetrics {
  // Mean absolute parameter error over active samples.
  ParamVector mae;
  // L2 norm of the parameter error over the whole run.
  ParamVector l2;
  // L2 norm and mean absolute error of the predicted value of interest.
  double prediction_l2 = 0.0;
  double prediction_mae = 0.0;
  double mean_step_ms = 0.0;
};

/**
 * Per-method error summary. All traces must have equal length; `active`
 * selects the samples entering the parameter MAE.
 */
inline MethodMetrics compute_metrics(std::span<const ParamVector> estimates, std::span<const ParamVector> truth,
                                     std::span<const double> predictions, std::span<const double> reference,
                                     std::span<const char> active, std::span<const double> step_ms = {}) {
  const std::size_t n = estimates.size();
  if (truth.size() != n || predictions.size() != n || reference.size() != n || active.size() != n)
    throw Error("compute_metrics: trace length mismatch");
  if (n == 0) throw Error("compute_metrics: empty traces");
  const auto d = truth.front().size();
  MethodMetrics m;
  m.mae = ParamVector::Zero(d);
  m.l2 = ParamVector::Zero(d);
  std::size_t active_count = 0;
  double pred_sq = 0.0;
  double pred_abs = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (estimates[k].size() != d || truth[k].size() != d) throw Error("compute_metrics: dimension mismatch");
    const ParamVector err = estimates[k] - truth[k];
    m.l2 += err.cwiseAbs2();
    if (active[k]) {
      m.mae += err.cwiseAbs();
      ++active_count;
    }
    const double e = predictions[k] - reference[k];
    pred_sq += e * e;
    pred_abs += std::abs(e);
  }
  m.l2 = m.l2.cwiseSqrt();
  if (active_count > 0) m.mae /= static_cast<double>(active_count);
  m.prediction_l2 = std::sqrt(pred_sq);
  m.prediction_mae = pred_abs / static_cast<double>(n);
  if (!step_ms.empty()) {
    double s = 0.0;
    for (double v : step_ms) s += v;
    m.mean_step_ms = s / static_cast<double>(step_ms.size());
  }
  return m;
}

struct MetricsReport {
  ModelKind model = ModelKind::hunt_crossley;
  std::vector<std::string> param_names;
  // Only methods that ran appear.
  std::vector<std::pair<std::string, MethodMetrics>> rows;

  const MethodMetrics* find(const std::string& name) const {
    for (const auto& [n, m] : rows)
      if (n == name) return &m;
    return nullptr;
  }
  const MethodMetrics& at(const std::string& name) const {
    if (const auto* m = find(name)) return *m;
    throw Error("MetricsReport: no row for method '" + name + "'");
  }
};

/// Numeric equality ignoring wall-clock timings.
inline bool same_numbers(const MetricsReport& a, const MetricsReport& b) {
  if (a.rows.size() != b.rows.size()) return false;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const auto& [na, ma] = a.rows[i];
    const auto& [nb, mb] = b.rows[i];
    if (na != nb || ma.mae != mb.mae || ma.l2 != mb.l2 || ma.prediction_l2 != mb.prediction_l2 ||
        ma.prediction_mae != mb.prediction_mae)
      return false;
  }
  return true;
}

inline void write_metrics(std::ostream& out, const MetricsReport& r) {
  out << "method";
  for (const auto& n : r.param_names) out << ",mae_" << n;
  for (const auto& n : r.param_names) out << ",l2_" << n;
  out << (r.model == ModelKind::actuator ? ",l2_alpha,mae_alpha" : ",l2_force,mae_force") << ",mean_step_ms\n";
  for (const auto& [name, m] : r.rows) {
    out << name;
    for (Eigen::Index j = 0; j < m.mae.size(); ++j) out << ',' << csv::format(m.mae[j]);
    for (Eigen::Index j = 0; j < m.l2.size(); ++j) out << ',' << csv::format(m.l2[j]);
    out << ',' << csv::format(m.prediction_l2) << ',' << csv::format(m.prediction_mae) << ','
        << csv::format(m.mean_step_ms) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Value-of-interest predictions

/**
 * Open-loop actuator angle from per-sample parameter estimates.
 *
 * Pressure is integrated from the logged controls with the estimated flow
 * relation (clamped to [p_atm, p_s]) and drives the angle dynamics.
 */
inline std::vector<double> predict_actuator_angle(std::span<const ParamVector> estimates,
                                                  std::span<const Observation> observations,
                                                  const sim::ActuatorSimConfig& cfg) {
  const std::size_t n = std::min(estimates.size(), observations.size());
  std::vector<double> alpha(n, 0.0);
  State<3> y{0.0, 0.0, cfg.p_atm};
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const double u_c = observations[k].input[models::kControlInflate];
    const double u_d = observations[k].input[models::kControlDeflate];
    const ParamVector& theta = estimates[k];
    auto pressure_rate = [&](double p) {
      const double denom = theta[0] + theta[1] * p;
      const double rate = models::actuator_output(u_c, u_d, p, cfg.p_atm, cfg.p_s) / denom;
      return std::isfinite(rate) ? rate : 0.0;
    };
    auto f = [&](double, const State<3>& s) {
      return State<3>{s[1], cfg.q1 * (s[2] - cfg.p_atm) * sim::kPaPerPa - cfg.q2 * s[1] - cfg.q3 * s[0],
                      pressure_rate(s[2])};
    };
    y = rk4_step(f, 0.0, y, cfg.dt);
    y[2] = std::clamp(y[2], cfg.p_atm, cfg.p_s);
    alpha[k + 1] = y[0];
  }
  return alpha;
}

inline std::vector<double> predict_contact_force(std::span<const ParamVector> estimates,
                                                 std::span<const Observation> observations) {
  const std::size_t n = std::min(estimates.size(), observations.size());
  std::vector<double> force(n);
  const models::HuntCrossleyModel model;
  for (std::size_t k = 0; k < n; ++k) {
    double out = 0.0;
    model.predict(estimates[k], observations[k].input, std::span<double>(&out, 1));
    force[k] = std::isfinite(out) ? out : 0.0;
  }
  return force;
}

// ---------------------------------------------------------------------------
// Method runners

struct MethodTrace {
  std::string name;
  std::vector<ParamVector> estimates;
  std::vector<double> predictions;
  std::vector<double> step_ms;
  // Per-step auxiliary column (covariance trace for RLS, ESS for PF).
  std::vector<double> auxiliary;
};

struct ArmcmcRun {
  std::vector<StepDiagnostics> diagnostics;
  // Long-format marginal density rows: pack, parameter index, bin center, density.
  struct GridRow {
    std::size_t pack;
    std::size_t parameter;
    double center;
    double density;
  };
  std::vector<GridRow> grid;
  MethodTrace maps;
  MethodTrace aps;
};

inline std::vector<ArmcmcRun::GridRow> posterior_density_grid(const PosteriorEnsemble& ensemble,
                                                              const HeatmapOptions& opts) {
  std::vector<ArmcmcRun::GridRow> rows;
  if (opts.bins == 0 || opts.lower.size() != ensemble.dim() || opts.upper.size() != ensemble.dim()) return rows;
  const auto samples = ensemble.post_burn_in();
  for (Eigen::Index j = 0; j < ensemble.dim(); ++j) {
    const double lo = opts.lower[j];
    const double width = (opts.upper[j] - lo) / static_cast<double>(opts.bins);
    std::vector<double> counts(opts.bins, 0.0);
    for (const auto& s : samples) {
      const double b = std::floor((s[j] - lo) / width);
      if (b >= 0.0 && b < static_cast<double>(opts.bins)) counts[static_cast<std::size_t>(b)] += 1.0;
    }
    for (std::size_t b = 0; b < opts.bins; ++b)
      rows.push_back({ensemble.pack_index(), static_cast<std::size_t>(j), lo + (static_cast<double>(b) + 0.5) * width,
                      counts[b] / (static_cast<double>(samples.size()) * width)});
  }
  return rows;
}

template <ParametricModel Model, class Rng>
ArmcmcRun run_armcmc(const Dataset& data, const Model& model, const ArmcmcConfig& cfg, const HeatmapOptions& heatmap,
                     Rng& rng, const std::string& label = "ar") {
  ArmcmcRun out;
  out.maps.name = label + "-maps";
  out.aps.name = label + "-aps";
  const auto packs = partition_stream(data.observations, cfg.pack_size);
  auto state = ArmcmcState::initial(cfg);
  for (const auto& pack : packs) {
    try {
      state = armcmc_step(state, pack, model, cfg, rng);
    } catch (const Error& e) {
      throw Error("pack " + std::to_string(pack.index) + ": " + e.what());
    }
    const auto& diag = *state.last_diagnostics;
    out.diagnostics.push_back(diag);
    auto grid = posterior_density_grid(*state.ensemble, heatmap);
    out.grid.insert(out.grid.end(), grid.begin(), grid.end());
    for (std::size_t i = 0; i < pack.size(); ++i) {
      out.maps.estimates.push_back(diag.point_maps);
      out.aps.estimates.push_back(diag.point_aps);
    }
    out.maps.step_ms.push_back(diag.wall_ms);
    out.aps.step_ms.push_back(diag.wall_ms);
    out.maps.auxiliary.push_back(diag.lambda);
    out.aps.auxiliary.push_back(diag.lambda);
  }
  return out;
}

inline Bounds saturation_bounds(const ParamVector& center, const ParamVector& scale, double span) {
  return {center - span * scale, center + span * scale};
}

/// RLS on y = theta1 pdot + theta2 pdot p, one update per sample.
inline MethodTrace run_rls_actuator(const Dataset& data, const RunConfig& cfg) {
  MethodTrace trace;
  trace.name = "rls";
  const auto& prior = cfg.armcmc.prior;
  const ParamVector scale = cfg.rls.input_scale.size() == prior.mean.size() ? cfg.rls.input_scale
                                                                            : ParamVector::Ones(prior.mean.size());
  std::optional<Bounds> sat;
  if (cfg.rls.saturation_span > 0.0) sat = saturation_bounds(prior.mean, prior.scale, cfg.rls.saturation_span);
  auto state = RlsState::make(prior.mean.cwiseQuotient(scale),
                              cfg.rls.initial_covariance * Eigen::MatrixXd::Identity(prior.mean.size(), prior.mean.size()),
                              scale, sat);
  ParamVector u(2);
  for (const auto& obs : data.observations) {
    const auto started = std::chrono::steady_clock::now();
    const double pdot = obs.input[models::kPressureRate];
    u << pdot, pdot * obs.input[models::kPressure];
    state = rls_update(state, u, obs.output[0]);
    trace.estimates.push_back(state.physical_theta());
    trace.step_ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count());
    trace.auxiliary.push_back(state.covariance.trace());
  }
  return trace;
}

/**
 * RLS on the log-linearized contact model, updated only while the needle
 * is inside the tissue with a positive measured force. Predictions use the
 * identified log-linear model.
 */
inline MethodTrace run_rls_hunt_crossley(const Dataset& data, const RunConfig& cfg) {
  MethodTrace trace;
  trace.name = "rls";
  const auto& prior = cfg.armcmc.prior;
  const ParamVector lin0 = models::hc_linear_params(prior.mean);
  const ParamVector scale = cfg.rls.input_scale.size() == 3 ? cfg.rls.input_scale : ParamVector::Ones(3);
  std::optional<Bounds> sat;
  if (cfg.rls.saturation_span > 0.0) sat = saturation_bounds(lin0, prior.scale, cfg.rls.saturation_span);
  auto state = RlsState::make(lin0.cwiseQuotient(scale), cfg.rls.initial_covariance * Eigen::MatrixXd::Identity(3, 3),
                              scale, sat);
  ParamVector u(3);
  for (const auto& obs : data.observations) {
    const auto started = std::chrono::steady_clock::now();
    const double x = obs.input[models::kPosition];
    const double xdot = obs.input[models::kVelocity];
    const double f = obs.output[0];
    if (x > 0.0 && f > 0.0) {
      const auto lin = models::hc_log_output(f, x, xdot);
      u << lin.regressor[0], lin.regressor[1], lin.regressor[2];
      state = rls_update(state, u, lin.y_lin);
    }
    const ParamVector theta_lin = state.physical_theta();
    trace.estimates.push_back(models::hc_physical_params(theta_lin));
    double pred = 0.0;
    if (x > 0.0) {
      u << 1.0, xdot, std::log(x);
      pred = std::exp(theta_lin.dot(u));
      if (!std::isfinite(pred)) pred = 0.0;
    }
    trace.predictions.push_back(pred);
    trace.step_ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count());
    trace.auxiliary.push_back(state.covariance.trace());
  }
  return trace;
}

inline double gaussian_log_pdf(double x, double mean, double sigma) {
  const double z = (x - mean) / sigma;
  return -0.5 * z * z - std::log(sigma * std::sqrt(2.0 * std::numbers::pi));
}

/**
 * SISR filter over [alpha, alpha_dot, p, theta1, theta2]: RK4 dynamics for
 * the first three states, random-walk jitter on the parameters, and a
 * Gaussian likelihood on the measured p and pdot.
 */
template <class Rng>
MethodTrace run_pf_actuator(const Dataset& data, const RunConfig& cfg, Rng& rng) {
  MethodTrace trace;
  trace.name = "pf";
  const auto& sc = cfg.actuator;
  const auto& prior = cfg.armcmc.prior;
  const ParamVector jitter = cfg.pf.jitter_fraction * prior.scale;
  const double sigma_p = std::max(sc.noise_pressure, 1.0);
  const double sigma_pdot = std::max(sc.noise_pressure_rate, 1.0);

  std::normal_distribution<double> normal;
  std::vector<Eigen::VectorXd> particles;
  for (std::size_t i = 0; i < cfg.pf.particles; ++i) {
    Eigen::VectorXd x(5);
    x << 0.0, 0.0, sc.p_atm, prior.mean[0] + prior.scale[0] * normal(rng), prior.mean[1] + prior.scale[1] * normal(rng);
    particles.push_back(std::move(x));
  }
  ParticleSet ps = ParticleSet::uniform(std::move(particles));

  auto rate = [&](const Eigen::VectorXd& x, double p, double u_c, double u_d) {
    const double r = models::actuator_output(u_c, u_d, p, sc.p_atm, sc.p_s) / (x[3] + x[4] * p);
    return std::isfinite(r) ? r : 0.0;
  };

  const auto& obs = data.observations;
  for (std::size_t k = 0; k < obs.size(); ++k) {
    const auto started = std::chrono::steady_clock::now();
    if (k > 0) {
      const double u_c = obs[k - 1].input[models::kControlInflate];
      const double u_d = obs[k - 1].input[models::kControlDeflate];
      auto transition = [&](Eigen::VectorXd& x, Rng& g) {
        auto f = [&](double, const State<3>& s) {
          return State<3>{s[1], sc.q1 * (s[2] - sc.p_atm) * sim::kPaPerPa - sc.q2 * s[1] - sc.q3 * s[0],
                          rate(x, s[2], u_c, u_d)};
        };
        const State<3> next = rk4_step(f, 0.0, State<3>{x[0], x[1], x[2]}, sc.dt);
        x[0] = next[0];
        x[1] = next[1];
        x[2] = std::clamp(next[2], sc.p_atm, sc.p_s);
        x[3] += jitter[0] * normal(g);
        x[4] += jitter[1] * normal(g);
      };
      const double uc_k = obs[k].input[models::kControlInflate];
      const double ud_k = obs[k].input[models::kControlDeflate];
      auto log_lik = [&](const Eigen::VectorXd& x, const Observation& o) {
        return gaussian_log_pdf(o.input[models::kPressure], x[2], sigma_p) +
               gaussian_log_pdf(o.input[models::kPressureRate], rate(x, x[2], uc_k, ud_k), sigma_pdot);
      };
      auto result = pf_step(ps, obs[k], transition, log_lik, rng, PfOptions{cfg.pf.policy});
      ps = std::move(result.set);
      trace.auxiliary.push_back(result.ess);
    } else {
      trace.auxiliary.push_back(static_cast<double>(ps.size()));
    }
    const Eigen::VectorXd m = ps.mean();
    trace.estimates.push_back(m.tail(2));
    trace.step_ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count());
  }
  return trace;
}

/// Parameter-only SISR filter for the contact model.
template <class Rng>
MethodTrace run_pf_hunt_crossley(const Dataset& data, const RunConfig& cfg, double sigma, Rng& rng) {
  MethodTrace trace;
  trace.name = "pf";
  const auto& prior = cfg.armcmc.prior;
  const ParamVector jitter = cfg.pf.jitter_fraction * prior.scale;
  std::normal_distribution<double> normal;
  std::vector<Eigen::VectorXd> particles;
  for (std::size_t i = 0; i < cfg.pf.particles; ++i) {
    Eigen::VectorXd x(3);
    for (int j = 0; j < 3; ++j) x[j] = prior.mean[j] + prior.scale[j] * normal(rng);
    particles.push_back(std::move(x));
  }
  ParticleSet ps = ParticleSet::uniform(std::move(particles));
  const models::HuntCrossleyModel model;
  for (const auto& o : data.observations) {
    const auto started = std::chrono::steady_clock::now();
    auto transition = [&](Eigen::VectorXd& x, Rng& g) {
      for (int j = 0; j < 3; ++j) x[j] += jitter[j] * normal(g);
    };
    auto log_lik = [&](const Eigen::VectorXd& x, const Observation& ob) {
      double f = 0.0;
      model.predict(x, ob.input, std::span<double>(&f, 1));
      return std::isfinite(f) ? gaussian_log_pdf(ob.output[0], f, sigma) : -std::numeric_limits<double>::infinity();
    };
    auto result = pf_step(ps, o, transition, log_lik, rng, PfOptions{cfg.pf.policy});
    ps = std::move(result.set);
    trace.auxiliary.push_back(result.ess);
    trace.estimates.push_back(ps.mean());
    trace.step_ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count());
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Orchestration

struct ExperimentResult {
  Dataset dataset;
  MetricsReport report;
  std::vector<MethodTrace> traces;
  std::vector<StepDiagnostics> diagnostics;
  std::vector<ArmcmcRun::GridRow> posterior_grid;
  // Samples covered by every method (whole packs only).
  std::size_t evaluated_samples = 0;
};

inline ArmcmcConfig effective_armcmc_config(const RunConfig& cfg, const Dataset& data) {
  ArmcmcConfig a = cfg.armcmc;
  const double sigma = cfg.armcmc_noise_sigma.value_or(data.noise_sigma);
  a.noise = NoiseModel::gaussian(a.noise.mu, sigma > 0.0 ? sigma : 1.0);
  return a;
}

inline ArmcmcConfig plain_mcmc_config(const RunConfig& cfg, const ArmcmcConfig& base) {
  ArmcmcConfig a = base;
  a.always_modify = true;
  if (cfg.mcmc_plain.variant == McmcVariant::reduced_samples)
    a.fixed_chain_length = cfg.mcmc_plain.samples;
  else
    a.pack_size = 2 * base.pack_size;
  return a;
}

inline void write_outputs(const std::filesystem::path& dir, const ExperimentResult& result);

/**
 * Simulates (or loads) the dataset, runs every configured method and scores
 * it. Files are written when `cfg.output_dir` is set.
 */
inline ExperimentResult run_experiment(const RunConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  ExperimentResult result;
  result.dataset = cfg.dataset_dir.empty() ? simulate_dataset(cfg, rng) : load_dataset(cfg.dataset_dir, cfg.model);
  const Dataset& data = result.dataset;
  const ArmcmcConfig acfg = effective_armcmc_config(cfg, data);

  // Each method draws from its own stream so adding or removing a method
  // leaves the others unchanged.
  auto method_rng = [&](Method m) { return std::mt19937_64(cfg.seed * 1000003ULL + static_cast<unsigned>(m) + 1); };

  for (Method m : cfg.methods) {
    auto mrng = method_rng(m);
    switch (m) {
      case Method::armcmc:
      case Method::mcmc_plain: {
        const bool plain = m == Method::mcmc_plain;
        const ArmcmcConfig c = plain ? plain_mcmc_config(cfg, acfg) : acfg;
        const std::string label =
            plain ? (cfg.mcmc_plain.variant == McmcVariant::reduced_samples ? "mcmc-1" : "mcmc-2") : "ar";
        ArmcmcRun run = cfg.model == ModelKind::actuator
                            ? run_armcmc(data, models::ActuatorRegressionModel{}, c, cfg.heatmap, mrng, label)
                            : run_armcmc(data, models::HuntCrossleyModel{}, c, cfg.heatmap, mrng, label);
        if (plain) {
          run.aps.name = label;
          result.traces.push_back(std::move(run.aps));
        } else {
          result.diagnostics = std::move(run.diagnostics);
          result.posterior_grid = std::move(run.grid);
          result.traces.push_back(std::move(run.maps));
          result.traces.push_back(std::move(run.aps));
        }
        break;
      }
      case Method::rls:
        result.traces.push_back(cfg.model == ModelKind::actuator ? run_rls_actuator(data, cfg)
                                                                 : run_rls_hunt_crossley(data, cfg));
        break;
      case Method::pf:
        result.traces.push_back(cfg.model == ModelKind::actuator
                                    ? run_pf_actuator(data, cfg, mrng)
                                    : run_pf_hunt_crossley(data, cfg, acfg.noise.sigma, mrng));
        break;
    }
  }

  std::size_t n = data.observations.size();
  for (const auto& t : result.traces) n = std::min(n, t.estimates.size());
  result.evaluated_samples = n;

  result.report.model = cfg.model;
  result.report.param_names = param_names(cfg.model);
  const std::span<const Observation> obs(data.observations.data(), n);
  for (auto& t : result.traces) {
    if (t.predictions.empty() || t.predictions.size() < n)
      t.predictions = cfg.model == ModelKind::actuator
                          ? predict_actuator_angle(std::span<const ParamVector>(t.estimates.data(), n), obs, cfg.actuator)
                          : predict_contact_force(std::span<const ParamVector>(t.estimates.data(), n), obs);
    result.report.rows.emplace_back(
        t.name, compute_metrics(std::span<const ParamVector>(t.estimates.data(), n),
                                std::span<const ParamVector>(data.true_theta.data(), n),
                                std::span<const double>(t.predictions.data(), n),
                                std::span<const double>(data.reference.data(), n),
                                std::span<const char>(data.active.data(), n), t.step_ms));
  }

  if (!cfg.output_dir.empty()) write_outputs(cfg.output_dir, result);
  return result;
}

// ---------------------------------------------------------------------------
// k_min curve

struct KminRow {
  double epsilon;
  double delta;
  double lambda;
  std::size_t k_min;
  bool converged;
};

/// k_min over a lambda grid for every (epsilon, delta) pair.
inline std::vector<KminRow> kmin_curve(std::span<const PrecisionReliability> prs, std::span<const double> lambdas,
                                       std::size_t max_iterations = 10000) {
  if (prs.empty() || lambdas.empty()) throw Error("kmin_curve: empty grid");
  std::vector<KminRow> rows;
  for (const auto& pr : prs) {
    for (double lambda : lambdas) {
      try {
        rows.push_back({pr.epsilon, pr.delta, lambda, armcmc_min_samples(pr, lambda, max_iterations), true});
      } catch (const MinSamplesNotConverged& e) {
        rows.push_back({pr.epsilon, pr.delta, lambda, static_cast<std::size_t>(std::ceil(e.last_iterate())), false});
      }
    }
  }
  return rows;
}

inline void emit_kmin_curve(std::ostream& out, std::span<const PrecisionReliability> prs,
                            std::span<const double> lambdas) {
  out << "epsilon,delta,lambda,k_min,converged\n";
  for (const auto& r : kmin_curve(prs, lambdas))
    out << csv::format(r.epsilon) << ',' << csv::format(r.delta) << ',' << csv::format(r.lambda) << ',' << r.k_min
        << ',' << (r.converged ? 1 : 0) << '\n';
}

}  // namespace armcmc::experiment

#include "armcmc/experiment_io.hpp"
