// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include "armcmc/experiment.hpp"
#include "kalman_oracle.hpp"
#include "support.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

using namespace armcmc;
using armcmc::testing::vec;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome chernoff_count() {
  const auto k = chernoff_min_samples({0.01, 0.9});
  const double rel = std::abs(static_cast<double>(k) - 15000.0) / 15000.0;
  return {k == 14979 && rel < 0.002, fmt("k=%zu, |k-15000|/15000=%.5f", k, rel)};
}

Outcome min_sample_solver() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> eps(0.005, 0.2), del(0.5, 0.99);
  bool chernoff_equal = true;
  for (int i = 0; i < 20; ++i) {
    const PrecisionReliability pr{eps(rng), del(rng)};
    chernoff_equal = chernoff_equal && armcmc_min_samples(pr, 1.0) == chernoff_min_samples(pr);
  }
  const std::vector<PrecisionReliability> prs{{0.01, 0.9}, {0.05, 0.9}, {0.01, 0.99}};
  std::vector<double> lambdas;
  for (int i = 1; i <= 19; ++i) lambdas.push_back(i / 20.0);
  const auto rows = experiment::kmin_curve(prs, lambdas);
  const bool complete = rows.size() == prs.size() * lambdas.size() &&
                        std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.converged; });
  const auto at07 = armcmc_min_samples({0.01, 0.9}, 0.7);
  const double secs = seconds_since(t0);
  return {chernoff_equal && complete && secs < 1.0,
          fmt("lambda=1 equals Chernoff for 20 random pairs: %s; curve rows converged: %s; "
              "k_min(0.01,0.9,0.7)=%zu; %.3f s",
              chernoff_equal ? "yes" : "no", complete ? "yes" : "no", at07, secs)};
}

Outcome mh_standard_normal() {
  const auto t0 = std::chrono::steady_clock::now();
  const VariableJumpProposal q(ProposalSpec{0.0, nullptr, vec({0.0}), vec({2.0})});
  auto target = [](const ParamVector& t) { return -0.5 * t[0] * t[0]; };
  std::mt19937_64 rng(2024);
  const auto e = mh_chain(vec({0.0}), target, q, 20000, rng);
  const auto post = e.post_burn_in();
  double m = 0.0, v = 0.0;
  for (const auto& s : post) m += s[0];
  m /= static_cast<double>(post.size());
  for (const auto& s : post) v += (s[0] - m) * (s[0] - m);
  v /= static_cast<double>(post.size() - 1);
  const double secs = seconds_since(t0);
  return {std::abs(m) <= 0.05 && v >= 0.9 && v <= 1.1 && secs < 5.0,
          fmt("mean=%.4f, variance=%.4f, %.3f s", m, v, secs)};
}

Outcome actuator_experiment() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = experiment::run_experiment(experiment::actuator_preset());
  const double secs = seconds_since(t0);
  const auto& maps = r.report.at("ar-maps");
  const auto& rls = r.report.at("rls");
  const auto& pf = r.report.at("pf");
  const bool theta_ok = 2.0 * maps.l2[0] <= rls.l2[0];
  const bool alpha_ok = maps.prediction_l2 <= 0.75 * rls.prediction_l2 && maps.prediction_l2 <= 0.75 * pf.prediction_l2;
  return {theta_ok && alpha_ok && secs < 300.0,
          fmt("|d theta1| AR-MAPS %.4g vs RLS %.4g (PF %.4g); |d alpha| AR-MAPS %.4g vs RLS %.4g, PF %.4g; %.1f s",
              maps.l2[0], rls.l2[0], pf.l2[0], maps.prediction_l2, rls.prediction_l2, pf.prediction_l2, secs)};
}

/**
 * RLS transition degradation: the largest RLS force error within one pack
 * of a mode switch (contact onset, velocity reversal, contact exit) against
 * its median error on the remaining contact samples.
 */
double rls_switch_ratio(const experiment::ExperimentResult& r, const experiment::MethodTrace& rls, std::size_t window) {
  const auto& d = r.dataset;
  const std::size_t n = r.evaluated_samples;
  std::vector<std::size_t> switches;
  for (std::size_t k = 1; k < n; ++k) {
    const bool contact_change = d.active[k] != d.active[k - 1];
    const bool reversal = d.active[k] && (d.observations[k].input[models::kVelocity] > 0.0) !=
                                             (d.observations[k - 1].input[models::kVelocity] > 0.0);
    if (contact_change || reversal) switches.push_back(k);
  }
  double peak = 0.0;
  std::vector<double> calm;
  for (std::size_t k = 0; k < n; ++k) {
    if (!d.active[k]) continue;
    const double e = std::abs(rls.predictions[k] - d.reference[k]);
    const bool near = std::any_of(switches.begin(), switches.end(),
                                  [&](std::size_t s) { return k + window >= s && k <= s + window; });
    if (near)
      peak = std::max(peak, e);
    else
      calm.push_back(e);
  }
  if (calm.empty()) return 0.0;
  std::nth_element(calm.begin(), calm.begin() + static_cast<std::ptrdiff_t>(calm.size() / 2), calm.end());
  return peak / calm[calm.size() / 2];
}

Outcome hunt_crossley_experiment() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = experiment::run_experiment(experiment::hunt_crossley_preset());
  const double secs = seconds_since(t0);
  const auto& aps = r.report.at("ar-aps");
  const auto& rls = r.report.at("rls");
  const double improvement = 1.0 - aps.prediction_mae / rls.prediction_mae;
  const auto rls_trace = std::find_if(r.traces.begin(), r.traces.end(), [](const auto& t) { return t.name == "rls"; });
  const double ratio = rls_switch_ratio(r, *rls_trace, 100);
  const bool mae_ok = aps.mae.maxCoeff() <= 0.15;
  return {mae_ok && improvement >= 0.40 && ratio >= 1.5 && secs < 600.0,
          fmt("AR-APS MAE K_e %.4f B_e %.4f p %.4f; force MAE AR-APS %.4f vs RLS %.4f (%.0f%% better); "
              "RLS switch-window peak / calm median = %.2f; %.1f s",
              aps.mae[0], aps.mae[1], aps.mae[2], aps.prediction_mae, rls.prediction_mae, 100.0 * improvement, ratio,
              secs)};
}

Outcome mode_switch_detection() {
  const auto t0 = std::chrono::steady_clock::now();
  ArmcmcConfig cfg;
  cfg.pr = {0.05, 0.9};
  cfg.zeta_threshold = 0.5;
  cfg.noise = NoiseModel::gaussian(0.0, 0.1);
  cfg.pack_size = 100;
  cfg.prior = {ParamVector::Zero(2), ParamVector::Constant(2, 5.0)};
  cfg.proposal_scale = ParamVector::Constant(2, 0.05);
  cfg.gaussian_center = GaussianCenter::chain_state;
  const armcmc::testing::LinearModel model{2};

  // The mismatch index is a signed mean and modification fires when it
  // reaches the threshold, so a change "exceeding zeta_th" is an upward
  // shift of the mean residual. Downward shifts are counted separately for
  // information only.
  auto trial_detects = [&](int trial, double direction) {
    std::mt19937_64 rng(1000 + trial);
    std::uniform_real_distribution<double> u(-2.0, 2.0), jump(1.0, 3.0);
    const ParamVector before = vec({u(rng), u(rng)});
    // The first regressor is constant 1, so the jump moves the mean
    // residual by at least 2 * zeta_threshold.
    ParamVector after = before;
    after[0] += direction * jump(rng);
    auto stream = armcmc::testing::linear_stream(before, 300, 0.1, 2 * trial + 1);
    auto tail = armcmc::testing::linear_stream(after, 100, 0.1, 2 * trial + 2);
    for (std::size_t i = 0; i < tail.size(); ++i) {
      tail[i].time_index = 300 + i;
      stream.push_back(tail[i]);
    }
    const auto packs = partition_stream(stream, 100);
    auto state = ArmcmcState::initial(cfg);
    for (const auto& pack : packs) state = armcmc_step(state, pack, model, cfg, rng);
    return state.last_diagnostics->mode == Mode::modification;
  };

  const int trials = 100;
  int detected = 0;
  int downward = 0;
  for (int trial = 0; trial < trials; ++trial) {
    detected += trial_detects(trial, 1.0) ? 1 : 0;
    downward += trial_detects(trial, -1.0) ? 1 : 0;
  }
  return {detected == trials,
          fmt("%d/%d upward shifts switched to modification on the changed pack "
              "(downward shifts, not covered by the signed index: %d/%d); %.1f s",
              detected, trials, downward, trials, seconds_since(t0))};
}

Outcome forgetting_factor_properties() {
  const double mu = 0.3;
  const auto at_mean = temporal_forgetting_factor(mu, mu, 2.0);
  const auto at_th = temporal_forgetting_factor(2.0, mu, 2.0);
  const auto beyond = temporal_forgetting_factor(7.0, mu, 2.0);
  const auto half = temporal_forgetting_factor(mu + std::numbers::ln2, mu, 2.0);
  const bool ok = at_mean.lambda == 1.0 && at_th.lambda == 0.0 && beyond.lambda == 0.0 &&
                  std::abs(half.lambda - 0.5) <= 1e-12;
  return {ok, fmt("lambda(mu)=%.17g, lambda(th)=%g, lambda(>th)=%g, lambda(mu+ln2)=%.17g", at_mean.lambda, at_th.lambda,
                  beyond.lambda, half.lambda)};
}

Outcome pf_oracle() {
  const auto cmp = armcmc::testing::compare_pf_with_kalman({}, 5000, 200, 2024);
  const double frac = static_cast<double>(cmp.within) / static_cast<double>(cmp.steps);
  return {frac >= 0.95, fmt("%zu/%zu steps within 3 Kalman standard errors (%.1f%%)", cmp.within, cmp.steps, 100 * frac)};
}

Outcome rls_oracle() {
  const ParamVector truth = vec({0.7, -1.2, 2.5});
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  auto s = RlsState::make(ParamVector::Zero(3), 1e8 * Eigen::MatrixXd::Identity(3, 3));
  for (int k = 0; k < 30; ++k) {
    const ParamVector u = vec({n(rng), n(rng), n(rng)});
    s = rls_update(s, u, truth.dot(u));
  }
  const double err = (s.theta - truth).norm();

  const double scale = 1e7;
  auto plain = RlsState::make(vec({0.1, 0.1}), 10.0 * Eigen::MatrixXd::Identity(2, 2));
  auto scaled = RlsState::make(vec({0.1, 0.1}) / scale, 10.0 / (scale * scale) * Eigen::MatrixXd::Identity(2, 2),
                               ParamVector::Constant(2, scale));
  double worst = 0.0;
  for (int k = 0; k < 500; ++k) {
    const ParamVector u = vec({n(rng), n(rng)});
    const double y = 0.8 * u[0] - 0.3 * u[1] + 0.1 * n(rng);
    plain = rls_update(plain, u, y);
    scaled = rls_update(scaled, u, y);
    const double ref = plain.predict(u);
    worst = std::max(worst, std::abs(scaled.predict(u) - ref) / std::max(1.0, std::abs(ref)));
  }
  return {err < 1e-6 && worst <= 1e-9,
          fmt("|theta - truth| after 30 updates = %.3g; worst scaled prediction gap = %.3g", err, worst)};
}

Outcome simulator_consistency() {
  sim::ActuatorSimConfig act;
  act.schedule = sim::default_actuator_schedule();
  std::mt19937_64 rng(4);
  const auto run = sim::simulate_actuator(act, 20.0, rng);
  double worst = 0.0;
  for (std::size_t k = 0; k < run.observations.size(); ++k) {
    const auto& o = run.observations[k];
    const double rhs =
        models::actuator_predict(run.truth[k].theta, o.input[models::kPressureRate], o.input[models::kPressure]);
    worst = std::max(worst, std::abs(o.output[0] - rhs));
  }

  const sim::NeedleEnvConfig cfg;
  const sim::PunctureState intact;
  const sim::PunctureState punctured{true, 2.0};
  const std::vector<std::pair<double, double>> pinned{
      {sim::needle_force(2.0, 1.0, 0.0, intact, cfg).total, 2.6268256530059864},
      {sim::needle_force(4.0, 0.002, 0.0, intact, cfg).total, 5.109618824543142},
      {sim::needle_force(3.0, -1.0, 0.0, intact, cfg).total, 2.7757154272002342},
      {sim::needle_force(12.0, 2.0, 3.0, punctured, cfg).total, 9.884376647380158},
      {sim::needle_force(12.0, -0.002, 3.0, punctured, cfg).total, 1.88}};
  double needle_worst = 0.0;
  for (const auto& [got, want] : pinned) needle_worst = std::max(needle_worst, std::abs(got - want));
  return {worst <= 1e-10 && needle_worst <= 1e-12,
          fmt("actuator flow relation gap %.3g; needle pinned-point gap %.3g", worst, needle_worst)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"sample count", chernoff_count},
      {"min-sample solver", min_sample_solver},
      {"MH standard normal", mh_standard_normal},
      {"actuator experiment", actuator_experiment},
      {"needle contact experiment", hunt_crossley_experiment},
      {"mode-switch detection", mode_switch_detection},
      {"forgetting factor", forgetting_factor_properties},
      {"PF vs Kalman", pf_oracle},
      {"RLS oracle", rls_oracle},
      {"simulator consistency", simulator_consistency},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("%s %zu: %s -- %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
