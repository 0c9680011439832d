#pragma once

// Reference estimators: recursive least squares and a SISR particle filter.

#include "armcmc/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace armcmc {

// ---------------------------------------------------------------------------
// Recursive least squares

struct Bounds {
  ParamVector lower;
  ParamVector upper;
};

/**
 * RLS estimate for y = theta^T U.
 *
 * The regressor is multiplied component-wise by `input_scale` before use,
 * so `theta` and `covariance` live in scaled coordinates. The saturation
 * bounds apply to the physical parameters (theta * input_scale).
 */
struct RlsState {
  ParamVector theta;
  Eigen::MatrixXd covariance;
  ParamVector input_scale;
  std::optional<Bounds> saturation;

  static RlsState make(const ParamVector& theta0, const Eigen::MatrixXd& p0,
                       std::optional<ParamVector> input_scale = std::nullopt,
                       std::optional<Bounds> saturation = std::nullopt) {
    RlsState s{theta0, p0, input_scale.value_or(ParamVector::Ones(theta0.size())), std::move(saturation)};
    if (s.covariance.rows() != theta0.size() || s.covariance.cols() != theta0.size() ||
        s.input_scale.size() != theta0.size())
      throw Error("RlsState: dimension mismatch");
    return s;
  }

  std::size_t dim() const { return static_cast<std::size_t>(theta.size()); }
  ParamVector physical_theta() const { return theta.cwiseProduct(input_scale); }
  double predict(const ParamVector& regressor) const { return theta.dot(regressor.cwiseProduct(input_scale)); }
};

inline bool covariance_valid(const Eigen::MatrixXd& p, double symmetry_tol = 1e-9) {
  if (!p.allFinite() || (p.diagonal().array() <= 0.0).any()) return false;
  const double scale = std::max(1.0, p.cwiseAbs().maxCoeff());
  return (p - p.transpose()).cwiseAbs().maxCoeff() <= symmetry_tol * scale;
}

class RlsDivergence : public Error {
 public:
  explicit RlsDivergence(RlsState pre_update)
      : Error("rls_update: non-finite update"), state_(std::move(pre_update)) {}
  const RlsState& pre_update_state() const { return state_; }

 private:
  RlsState state_;
};

inline RlsState rls_update(const RlsState& state, const ParamVector& regressor, double y) {
  if (regressor.size() != state.theta.size()) throw Error("rls_update: regressor dimension mismatch");
  const ParamVector u = regressor.cwiseProduct(state.input_scale);
  const double error = y - state.theta.dot(u);
  const ParamVector pu = state.covariance * u;
  const ParamVector gain = pu / (1.0 + u.dot(pu));

  RlsState next = state;
  next.theta = state.theta + gain * error;
  next.covariance = state.covariance - gain * (u.transpose() * state.covariance);
  next.covariance = 0.5 * (next.covariance + next.covariance.transpose());
  if (!next.theta.allFinite() || !next.covariance.allFinite()) throw RlsDivergence(state);

  if (next.saturation) {
    const ParamVector phys =
        next.physical_theta().cwiseMax(next.saturation->lower).cwiseMin(next.saturation->upper);
    next.theta = phys.cwiseQuotient(next.input_scale);
  }
  return next;
}

// ---------------------------------------------------------------------------
// Particle filter

struct ParticleSet {
  std::vector<Eigen::VectorXd> particles;
  std::vector<double> weights;

  static ParticleSet uniform(std::vector<Eigen::VectorXd> particles) {
    const double w = 1.0 / static_cast<double>(particles.size());
    std::vector<double> weights(particles.size(), w);
    return {std::move(particles), std::move(weights)};
  }

  std::size_t size() const { return particles.size(); }

  Eigen::VectorXd mean() const {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(particles.front().size());
    for (std::size_t i = 0; i < particles.size(); ++i) m += weights[i] * particles[i];
    return m;
  }
};

/// Single-uniform systematic resampling; returns ancestor indices.
template <class Rng>
std::vector<std::size_t> systematic_resample(std::span<const double> weights, Rng& rng) {
  const std::size_t n = weights.size();
  std::vector<std::size_t> idx(n);
  if (n == 0) return idx;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double step = 1.0 / static_cast<double>(n);
  const double u0 = unit(rng) * step;
  std::size_t j = 0;
  double cumulative = weights[0];
  for (std::size_t i = 0; i < n; ++i) {
    const double u = u0 + static_cast<double>(i) * step;
    while (u >= cumulative && j + 1 < n) cumulative += weights[++j];
    idx[i] = j;
  }
  return idx;
}

inline double effective_sample_size(std::span<const double> weights) {
  double s = 0.0;
  for (double w : weights) s += w * w;
  return s > 0.0 ? 1.0 / s : 0.0;
}

class ParticleDegeneracy : public Error {
 public:
  ParticleDegeneracy(std::size_t particles, double max_log_likelihood)
      : Error("particle degeneracy: all " + std::to_string(particles) +
              " weights are zero (max log-likelihood " + std::to_string(max_log_likelihood) + ")") {}
};

enum class ResamplePolicy { every_step, ess_triggered };

struct PfOptions {
  ResamplePolicy policy = ResamplePolicy::every_step;
  // Resample when ESS < threshold * N (ess_triggered only).
  double ess_threshold = 0.5;
};

struct PfStepResult {
  ParticleSet set;
  // Effective sample size of the normalized weights before resampling.
  double ess = 0.0;
};

/**
 * Propagate, weight, normalize and resample.
 *
 * `transition(state, rng)` mutates a particle in place;
 * `log_likelihood(state, y)` returns log p(y | state) (use -inf for zero).
 */
template <class Y, class Transition, class LogLikelihood, class Rng>
PfStepResult pf_step(const ParticleSet& ps, const Y& y, const Transition& transition,
                     const LogLikelihood& log_likelihood, Rng& rng, const PfOptions& options = {}) {
  const std::size_t n = ps.size();
  if (n == 0) throw Error("pf_step: empty particle set");
  ParticleSet next = ps;
  std::vector<double> logw(n);
  double max_logw = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    transition(next.particles[i], rng);
    const double ll = log_likelihood(next.particles[i], y);
    logw[i] = (ps.weights[i] > 0.0 && !std::isnan(ll)) ? std::log(ps.weights[i]) + ll
                                                        : -std::numeric_limits<double>::infinity();
    max_logw = std::max(max_logw, logw[i]);
  }
  if (!std::isfinite(max_logw)) throw ParticleDegeneracy(n, max_logw);

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    next.weights[i] = std::exp(logw[i] - max_logw);
    total += next.weights[i];
  }
  for (auto& w : next.weights) w /= total;

  PfStepResult result;
  result.ess = effective_sample_size(next.weights);
  const bool resample = options.policy == ResamplePolicy::every_step ||
                        result.ess < options.ess_threshold * static_cast<double>(n);
  if (resample) {
    const auto ancestors = systematic_resample(std::span<const double>(next.weights), rng);
    std::vector<Eigen::VectorXd> resampled;
    resampled.reserve(n);
    for (auto a : ancestors) resampled.push_back(next.particles[a]);
    next = ParticleSet::uniform(std::move(resampled));
  }
  result.set = std::move(next);
  return result;
}

}  // namespace armcmc
