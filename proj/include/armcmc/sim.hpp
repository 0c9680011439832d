#pragma once

// Ground-truth data generators for the soft actuator and the needle
// insertion environment.

#include "armcmc/core.hpp"
#include "armcmc/models.hpp"
#include "armcmc/ode.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace armcmc::sim {

inline constexpr double kPaPerPa = 1e-3;

// ---------------------------------------------------------------------------
// Soft bending actuator

struct ControlSegment {
  double duration = 1.0;
  double u_c = 0.0;
  double u_d = 0.0;
};

struct ActuatorSimConfig {
  // Angle dynamics; (p - p_atm) enters in kPa.
  double q1 = 1408.50;
  double q2 = 132.28;
  double q3 = 3319.40;
  // Flow relation coefficients (pressure in Pa): q4, q5 inflating; q6, q7 deflating.
  double q4 = -2.14e-4;
  double q5 = 6.12e-9;
  double q6 = -9.76e-5;
  double q7 = -1.90e-9;
  double p_atm = 101.3e3;
  double p_s = 800e3;
  double dt = 1e-3;
  // Repeated cyclically over the run.
  std::vector<ControlSegment> schedule;
  double noise_pressure = 0.0;
  double noise_pressure_rate = 0.0;
};

inline void validate(const ActuatorSimConfig& cfg) {
  if (!(cfg.dt > 0.0)) throw Error("ActuatorSimConfig: dt must be positive");
  if (cfg.schedule.empty()) throw Error("ActuatorSimConfig: empty control schedule");
  for (const auto& seg : cfg.schedule) {
    if (!(seg.duration > 0.0)) throw Error("ActuatorSimConfig: control segment duration must be positive");
    if (seg.u_c != 0.0 && seg.u_d != 0.0) throw Error("ActuatorSimConfig: u_c and u_d both active in a segment");
  }
  if (!(cfg.p_s > cfg.p_atm)) throw Error("ActuatorSimConfig: supply pressure must exceed atmosphere");
}

/// Control inputs (u_c, u_d) at time t.
inline std::pair<double, double> control_at(const ActuatorSimConfig& cfg, double t) {
  double cycle = 0.0;
  for (const auto& seg : cfg.schedule) cycle += seg.duration;
  double tau = std::fmod(t, cycle);
  for (const auto& seg : cfg.schedule) {
    if (tau < seg.duration) return {seg.u_c, seg.u_d};
    tau -= seg.duration;
  }
  return {cfg.schedule.back().u_c, cfg.schedule.back().u_d};
}

/// [theta1, theta2] of the flow relation active for the given controls.
inline ParamVector actuator_true_theta(const ActuatorSimConfig& cfg, double u_c, double u_d) {
  ParamVector theta(2);
  if (models::actuator_mode(u_c, u_d) == models::ActuatorMode::contraction)
    theta << cfg.q6, cfg.q7;
  else
    theta << cfg.q4, cfg.q5;
  return theta;
}

/// pdot solved from the active flow relation.
inline double actuator_pressure_rate(const ActuatorSimConfig& cfg, double p, double u_c, double u_d) {
  const auto mode = models::actuator_mode(u_c, u_d);
  if (mode == models::ActuatorMode::idle) return 0.0;
  const ParamVector theta = actuator_true_theta(cfg, u_c, u_d);
  const double denom = theta[0] + theta[1] * p;
  if (std::abs(denom) < 1e-15) throw Error("pressure dynamics singular");
  return models::actuator_output(u_c, u_d, p, cfg.p_atm, cfg.p_s) / denom;
}

struct ActuatorTruth {
  double t = 0.0;
  double alpha = 0.0;
  double alpha_dot = 0.0;
  double pressure = 0.0;
  double pressure_rate = 0.0;
  double u_c = 0.0;
  double u_d = 0.0;
  ParamVector theta;
};

struct ActuatorRun {
  std::vector<Observation> observations;
  std::vector<ActuatorTruth> truth;
};

/**
 * RK4 integration of angle and pressure with zero-order-hold controls.
 *
 * Observation inputs are [u_c, u_d, p, pdot] with Gaussian noise on p and
 * pdot; the output is the flow-relation left side evaluated at the
 * measured pressure.
 */
template <class Rng>
ActuatorRun simulate_actuator(const ActuatorSimConfig& cfg, double duration, Rng& rng) {
  validate(cfg);
  const auto n = static_cast<std::size_t>(std::llround(duration / cfg.dt));
  std::normal_distribution<double> normal;
  ActuatorRun run;
  run.observations.reserve(n);
  run.truth.reserve(n);

  State<3> y{0.0, 0.0, cfg.p_atm};
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * cfg.dt;
    const auto [u_c, u_d] = control_at(cfg, t);
    const double pdot = actuator_pressure_rate(cfg, y[2], u_c, u_d);

    ActuatorTruth truth{t, y[0], y[1], y[2], pdot, u_c, u_d, actuator_true_theta(cfg, u_c, u_d)};
    const double p_meas = y[2] + cfg.noise_pressure * normal(rng);
    const double pdot_meas = pdot + cfg.noise_pressure_rate * normal(rng);
    Observation obs;
    obs.time_index = k;
    obs.input = {u_c, u_d, p_meas, pdot_meas};
    obs.output = {models::actuator_output(u_c, u_d, p_meas, cfg.p_atm, cfg.p_s)};
    run.observations.push_back(std::move(obs));
    run.truth.push_back(std::move(truth));

    auto f = [&](double, const State<3>& s) {
      return State<3>{s[1], cfg.q1 * (s[2] - cfg.p_atm) * kPaPerPa - cfg.q2 * s[1] - cfg.q3 * s[0],
                      actuator_pressure_rate(cfg, s[2], u_c, u_d)};
    };
    y = rk4_step(f, t, y, cfg.dt);
  }
  return run;
}

/// Alternating inflate/deflate schedule with varied valve openings.
inline std::vector<ControlSegment> default_actuator_schedule() {
  return {{1.23, 0.30, 0.0}, {0.87, 0.0, 0.45}, {1.11, 0.55, 0.0}, {0.94, 0.0, 0.25},
          {1.37, 0.20, 0.0}, {1.06, 0.0, 0.60}, {0.78, 0.40, 0.0}, {1.19, 0.0, 0.35}};
}

// ---------------------------------------------------------------------------
// Needle insertion environment

struct NeedleTrajectory {
  double amplitude = 8.0;  // mm
  double period = 10.0;    // s
  double offset = 0.25;    // mm

  double position(double t) const { return amplitude * std::sin(2.0 * std::numbers::pi * t / period) - offset; }
  double velocity(double t) const {
    const double w = 2.0 * std::numbers::pi / period;
    return amplitude * w * std::cos(w * t);
  }
};

struct NeedleEnvConfig {
  double x1 = 16.65;  // pre-puncture yield depth, mm
  double x2 = 10.21;  // post-puncture tissue position, mm
  double stiffness = 0.9;
  double damping = 0.2;
  double exponent = 1.25;
  double c_n = -11.96e-3;
  double c_p = 10.57e-3;
  double d_n = -0.01823;
  double d_p = 0.01845;
  double half_band = 0.005;  // mm/s
  double cutting = 0.94;     // N
  double dt = 1e-3;
  // Force noise standard deviation; unset means 1% of the clean signal range.
  std::optional<double> noise_sigma;
  NeedleTrajectory trajectory;

  ParamVector contact_theta() const {
    ParamVector theta(3);
    theta << stiffness, damping, exponent;
    return theta;
  }
};

inline void validate(const NeedleEnvConfig& cfg) {
  if (!(cfg.x2 > 0.0 && cfg.x2 < cfg.x1)) throw Error("NeedleEnvConfig: require 0 < x2 < x1");
  if (!(cfg.dt > 0.0)) throw Error("NeedleEnvConfig: dt must be positive");
  if (!(cfg.half_band > 0.0)) throw Error("NeedleEnvConfig: velocity band must be positive");
}

struct PunctureState {
  bool punctured = false;
  double t_p = std::numeric_limits<double>::infinity();
};

struct NeedleForce {
  double total = 0.0;
  double stiffness = 0.0;
  double friction = 0.0;
  double cutting = 0.0;
  PunctureState state;
};

/**
 * Stiffness + friction + cutting force on the needle.
 *
 * Stiffness is Hunt-Crossley elastic force until the puncture (x > x1);
 * after it the cutting force acts beyond x2. Friction is the modified
 * Karnopp model with the applied force F_a taken as the cutting force. A
 * full retraction (x < 0) resets the puncture.
 */
inline NeedleForce needle_force(double x, double xdot, double t, PunctureState state, const NeedleEnvConfig& cfg) {
  NeedleForce f;
  if (x < 0.0) return f;  // free motion; state reset
  if (!state.punctured && x > cfg.x1) state = {true, t};
  f.state = state;

  const double xp = std::pow(x, cfg.exponent);
  if (!state.punctured) f.stiffness = cfg.stiffness * xp;
  if (state.punctured && x > cfg.x2) f.cutting = cfg.cutting;

  const double applied = f.cutting;
  const double sgn = xdot > 0.0 ? 1.0 : (xdot < 0.0 ? -1.0 : 0.0);
  if (xdot <= -cfg.half_band)
    f.friction = cfg.c_n * sgn + cfg.damping * xp * xdot;
  else if (xdot <= 0.0)
    f.friction = std::max(cfg.d_n, applied);
  else if (xdot < cfg.half_band)
    f.friction = std::max(cfg.d_p, applied);
  else
    f.friction = cfg.c_p * sgn + cfg.damping * xp * xdot;

  f.total = f.stiffness + f.friction + f.cutting;
  return f;
}

struct NeedleTruth {
  double t = 0.0;
  double x = 0.0;
  double xdot = 0.0;
  double force = 0.0;
  bool punctured = false;
  bool in_contact = false;
  // Contact parameters while the Hunt-Crossley regime holds, zeros otherwise.
  ParamVector theta;
};

struct NeedleRun {
  std::vector<Observation> observations;
  std::vector<NeedleTruth> truth;
  double noise_sigma = 0.0;
};

/// Samples the trajectory every dt; inputs [x, xdot], output [measured force].
template <class Rng>
NeedleRun simulate_needle_run(const NeedleEnvConfig& cfg, const std::function<std::pair<double, double>(double)>& trajectory,
                              double duration, Rng& rng) {
  validate(cfg);
  const auto n = static_cast<std::size_t>(std::llround(duration / cfg.dt));
  NeedleRun run;
  run.truth.reserve(n);
  PunctureState state;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * cfg.dt;
    const auto [x, xdot] = trajectory(t);
    const NeedleForce f = needle_force(x, xdot, t, state, cfg);
    state = f.state;
    NeedleTruth truth{t, x, xdot, f.total, state.punctured, x >= 0.0, ParamVector::Zero(3)};
    if (truth.in_contact && !state.punctured) truth.theta = cfg.contact_theta();
    lo = std::min(lo, f.total);
    hi = std::max(hi, f.total);
    run.truth.push_back(std::move(truth));
  }
  run.noise_sigma = cfg.noise_sigma.value_or(n > 0 ? 0.01 * (hi - lo) : 0.0);

  std::normal_distribution<double> normal;
  run.observations.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& tr = run.truth[k];
    Observation obs;
    obs.time_index = k;
    obs.input = {tr.x, tr.xdot};
    obs.output = {tr.force + run.noise_sigma * normal(rng)};
    run.observations.push_back(std::move(obs));
  }
  return run;
}

template <class Rng>
NeedleRun simulate_needle_run(const NeedleEnvConfig& cfg, double duration, Rng& rng) {
  const NeedleTrajectory traj = cfg.trajectory;
  return simulate_needle_run(
      cfg, [traj](double t) { return std::pair{traj.position(t), traj.velocity(t)}; }, duration, rng);
}

}  // namespace armcmc::sim
