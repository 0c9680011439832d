#pragma once

// Parametric models for the two benchmark systems.
//
// Soft bending actuator (pressures in Pa in the flow relation):
//   u sign(dp) sqrt|dp| = theta1 pdot + theta2 pdot p
// with dp = p_s - p while inflating (u_c active) and dp = p - p_atm while
// deflating (u_d active).
//
// Hunt-Crossley contact (x in mm, force in N):
//   f = K x^p + B x^p xdot   for x >= 0,   0 otherwise.

#include "armcmc/core.hpp"
#include "armcmc/ode.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace armcmc::models {

// ---------------------------------------------------------------------------
// Soft actuator

/// Observation input layout for the actuator.
enum ActuatorInput : std::size_t { kControlInflate = 0, kControlDeflate = 1, kPressure = 2, kPressureRate = 3 };

enum class ActuatorMode { idle, retraction, contraction };

inline ActuatorMode actuator_mode(double u_c, double u_d) {
  if (u_c != 0.0 && u_d != 0.0) throw Error("actuator: u_c and u_d active simultaneously");
  if (u_c != 0.0) return ActuatorMode::retraction;
  if (u_d != 0.0) return ActuatorMode::contraction;
  return ActuatorMode::idle;
}

inline double signed_sqrt(double v) { return v > 0.0 ? std::sqrt(v) : (v < 0.0 ? -std::sqrt(-v) : 0.0); }

/// Left side of the flow relation: u sign(dp) sqrt|dp| for the active valve.
inline double actuator_output(double u_c, double u_d, double p, double p_atm, double p_s) {
  switch (actuator_mode(u_c, u_d)) {
    case ActuatorMode::retraction:
      return u_c * signed_sqrt(p_s - p);
    case ActuatorMode::contraction:
      return u_d * signed_sqrt(p - p_atm);
    case ActuatorMode::idle:
      break;
  }
  return 0.0;
}

inline double actuator_predict(const ParamVector& theta, double pdot, double p) {
  return theta[0] * pdot + theta[1] * pdot * p;
}

/// theta = [theta1, theta2]; input = [u_c, u_d, p, pdot]; output = flow-relation left side.
struct ActuatorRegressionModel {
  std::size_t dim() const { return 2; }
  std::size_t output_dim() const { return 1; }
  void predict(const ParamVector& theta, std::span<const double> input, std::span<double> out) const {
    out[0] = actuator_predict(theta, input[kPressureRate], input[kPressure]);
  }
};

/**
 * Integrates alpha'' = q1 (p - p_atm) - q2 alpha' - q3 alpha from rest.
 *
 * `pressure` is sampled every `dt` seconds (kPa, like `p_atm`); it is
 * interpolated linearly inside a step. Returns alpha at every sample.
 */
inline std::vector<double> actuator_angle_simulate(std::span<const double> pressure, double q1, double q2, double q3,
                                                   double dt, double p_atm) {
  if (!(dt > 0.0)) throw Error("actuator_angle_simulate: dt must be positive");
  if (pressure.empty()) throw Error("actuator_angle_simulate: empty pressure trajectory");
  std::vector<double> alpha(pressure.size(), 0.0);
  State<2> y{0.0, 0.0};
  for (std::size_t i = 0; i + 1 < pressure.size(); ++i) {
    const double p0 = pressure[i];
    const double p1 = pressure[i + 1];
    auto f = [&](double tau, const State<2>& s) {
      const double p = p0 + (p1 - p0) * (tau / dt);
      return State<2>{s[1], q1 * (p - p_atm) - q2 * s[1] - q3 * s[0]};
    };
    y = rk4_step(f, 0.0, y, dt);
    alpha[i + 1] = y[0];
  }
  return alpha;
}

// ---------------------------------------------------------------------------
// Hunt-Crossley contact

enum HcInput : std::size_t { kPosition = 0, kVelocity = 1 };

namespace detail {

inline double hunt_crossley_unchecked(double stiffness, double damping, double exponent, double x, double xdot) {
  if (x < 0.0) return 0.0;
  const double xp = std::pow(x, exponent);
  return stiffness * xp + damping * xp * xdot;
}

}  // namespace detail

/// theta = [K_e, B_e, p].
inline double hunt_crossley_force(const ParamVector& theta, double x, double xdot) {
  if (x < 0.0) return 0.0;
  if (!std::isfinite(theta[2])) throw Error("hunt_crossley_force: non-finite exponent");
  return detail::hunt_crossley_unchecked(theta[0], theta[1], theta[2], x, xdot);
}

/// theta = [K_e, B_e, p]; input = [x, xdot]; output = contact force.
struct HuntCrossleyModel {
  std::size_t dim() const { return 3; }
  std::size_t output_dim() const { return 1; }
  void predict(const ParamVector& theta, std::span<const double> input, std::span<double> out) const {
    out[0] = detail::hunt_crossley_unchecked(theta[0], theta[1], theta[2], input[kPosition], input[kVelocity]);
  }
};

struct HcLinearization {
  double y_lin;
  // [1, xdot, log x]
  std::array<double, 3> regressor;
};

/**
 * Log-linear form used by the RLS baseline:
 *   log f ~ log K + (B / K) xdot + p log x.
 * Exact when xdot == 0 or B == 0.
 */
inline HcLinearization hc_log_output(double force, double x, double xdot) {
  if (!(force > 0.0) || !(x > 0.0)) throw Error("log-linearization undefined: force and position must be positive");
  return {std::log(force), {1.0, xdot, std::log(x)}};
}

/// [K, B, p] -> [log K, B / K, p]
inline ParamVector hc_linear_params(const ParamVector& theta) {
  ParamVector lin(3);
  lin << std::log(theta[0]), theta[1] / theta[0], theta[2];
  return lin;
}

/// [log K, B / K, p] -> [K, B, p]
inline ParamVector hc_physical_params(const ParamVector& lin) {
  ParamVector theta(3);
  const double stiffness = std::exp(lin[0]);
  theta << stiffness, lin[1] * stiffness, lin[2];
  return theta;
}

}  // namespace armcmc::models
