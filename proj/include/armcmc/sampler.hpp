#pragma once

// Metropolis-Hastings machinery: sample-count bounds, the two-branch
// variable jump proposal and the chain driver.

#include "armcmc/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>

namespace armcmc {

struct PrecisionReliability {
  double epsilon = 0.01;
  double delta = 0.9;
};

inline void validate(const PrecisionReliability& pr) {
  if (pr.delta == 1.0) throw Error("unreachable reliability: delta must be < 1");
  if (!(pr.epsilon > 0.0 && pr.epsilon <= 1.0))
    throw Error("precision epsilon must lie in (0, 1], got " + std::to_string(pr.epsilon));
  if (!(pr.delta >= 0.0 && pr.delta < 1.0))
    throw Error("reliability delta must lie in [0, 1), got " + std::to_string(pr.delta));
}

namespace detail {

// (1 / 2 eps^2) * log(2 / denominator)
inline double log_bound(double epsilon, double denominator) {
  return std::log(2.0 / denominator) / (2.0 * epsilon * epsilon);
}

}  // namespace detail

/// Smallest k with k >= (1 / 2 eps^2) log(2 / (1 - delta)).
inline std::size_t chernoff_min_samples(const PrecisionReliability& pr) {
  validate(pr);
  const double k = std::ceil(detail::log_bound(pr.epsilon, 1.0 - pr.delta));
  return std::max<std::size_t>(1, static_cast<std::size_t>(k));
}

class MinSamplesNotConverged : public Error {
 public:
  MinSamplesNotConverged(double last_iterate, std::size_t iterations)
      : Error("armcmc_min_samples: no convergence after " + std::to_string(iterations) +
              " iterations (last iterate " + std::to_string(last_iterate) + ")"),
        last_iterate_(last_iterate) {}
  double last_iterate() const { return last_iterate_; }

 private:
  double last_iterate_;
};

/**
 * Minimum chain length when a fraction `lambda` of proposals reuses the
 * previous posterior.
 *
 * Solves the implicit relation
 *
 *   k = (1 / 2 eps^2) log(2 / (lambda (1 - delta) + 2 (1 - lambda) exp(-2 eps^2 (1 - lambda) k)))
 *
 * by fixed-point iteration with damping 0.5, starting from the Chernoff
 * bound and stopping once successive iterates differ by less than 0.5.
 * For lambda == 0 the relation is the identity, and the Chernoff bound is
 * returned.
 */
inline std::size_t armcmc_min_samples(const PrecisionReliability& pr, double lambda,
                                      std::size_t max_iterations = 10000) {
  validate(pr);
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw Error("armcmc_min_samples: lambda must lie in [0, 1], got " + std::to_string(lambda));
  const std::size_t chernoff = chernoff_min_samples(pr);
  if (lambda == 0.0) return chernoff;

  const double eps2 = pr.epsilon * pr.epsilon;
  auto rhs = [&](double k) {
    const double denom =
        lambda * (1.0 - pr.delta) + 2.0 * (1.0 - lambda) * std::exp(-2.0 * eps2 * (1.0 - lambda) * k);
    return detail::log_bound(pr.epsilon, denom);
  };

  double k = static_cast<double>(chernoff);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    const double next = 0.5 * k + 0.5 * rhs(k);
    if (!std::isfinite(next)) throw MinSamplesNotConverged(next, it + 1);
    if (std::abs(next - k) < 0.5) return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(next)));
    k = next;
  }
  throw MinSamplesNotConverged(k, max_iterations);
}

/// min{1, exp(log posterior ratio + log reverse/forward proposal ratio)}.
inline double acceptance_probability(double log_post_cnd, double log_post_prev, double log_q_prev_given_cnd,
                                     double log_q_cnd_given_prev) {
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  if (log_post_prev == neg_inf) throw Error("chain at zero-density state");
  if (log_post_cnd == neg_inf) return 0.0;
  const double log_ratio = log_post_cnd - log_post_prev + log_q_prev_given_cnd - log_q_cnd_given_prev;
  if (std::isnan(log_ratio)) throw Error("acceptance_probability: undefined log ratio");
  if (log_ratio >= 0.0) return 1.0;
  return std::exp(log_ratio);
}

inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// Product-kernel Gaussian density estimate with Silverman bandwidths.
class GaussianKde {
 public:
  GaussianKde() = default;

  /**
   * `max_centers` thins the sample set by even striding; `bandwidth_floor`
   * bounds each bandwidth from below so point-mass ensembles stay
   * evaluable.
   */
  GaussianKde(std::span<const ParamVector> samples, std::size_t max_centers, const ParamVector& bandwidth_floor) {
    if (samples.empty()) throw Error("GaussianKde: no samples");
    const auto d = samples.front().size();
    const std::size_t n = samples.size();

    ParamVector mean = ParamVector::Zero(d);
    for (const auto& s : samples) mean += s;
    mean /= static_cast<double>(n);
    ParamVector var = ParamVector::Zero(d);
    for (const auto& s : samples) var += (s - mean).cwiseAbs2();
    if (n > 1) var /= static_cast<double>(n - 1);

    const std::size_t m = std::clamp<std::size_t>(max_centers, 1, n);
    centers_.resize(d, static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < m; ++i) centers_.col(static_cast<Eigen::Index>(i)) = samples[i * n / m];

    const double factor =
        std::pow(4.0 / ((static_cast<double>(d) + 2.0) * static_cast<double>(m)), 1.0 / (static_cast<double>(d) + 4.0));
    bandwidth_ = (var.cwiseSqrt() * factor).cwiseMax(bandwidth_floor);
    inv_bandwidth_ = bandwidth_.cwiseInverse();
    log_norm_ = -std::log(static_cast<double>(m)) - bandwidth_.array().log().sum() -
                0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
  }

  double log_density(const ParamVector& theta) const {
    const auto m = centers_.cols();
    if (m == 0) return -std::numeric_limits<double>::infinity();
    // log-sum-exp over kernels
    double max_term = -std::numeric_limits<double>::infinity();
    scratch_.resize(m);
    for (Eigen::Index j = 0; j < m; ++j) {
      const double q = ((theta - centers_.col(j)).cwiseProduct(inv_bandwidth_)).squaredNorm();
      scratch_[j] = -0.5 * q;
      max_term = std::max(max_term, scratch_[j]);
    }
    double acc = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) acc += std::exp(scratch_[j] - max_term);
    return log_norm_ + max_term + std::log(acc);
  }

  /// Kernel draw: a uniformly chosen center plus bandwidth-scaled Gaussian noise.
  template <class Rng>
  ParamVector sample(Rng& rng) const {
    if (centers_.cols() == 0) throw Error("GaussianKde: no centers");
    std::uniform_int_distribution<Eigen::Index> pick(0, centers_.cols() - 1);
    std::normal_distribution<double> normal;
    ParamVector theta = centers_.col(pick(rng));
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] += bandwidth_[i] * normal(rng);
    return theta;
  }

  const ParamVector& bandwidth() const { return bandwidth_; }
  Eigen::Index center_count() const { return centers_.cols(); }

 private:
  Eigen::MatrixXd centers_;
  ParamVector bandwidth_;
  ParamVector inv_bandwidth_;
  double log_norm_ = 0.0;
  mutable Eigen::VectorXd scratch_;
};

inline double gaussian_log_density(const ParamVector& theta, const ParamVector& center, const ParamVector& scale) {
  const double q = ((theta - center).cwiseQuotient(scale)).squaredNorm();
  return -0.5 * q - scale.array().log().sum() - 0.5 * static_cast<double>(theta.size()) * std::log(2.0 * std::numbers::pi);
}

// Where the Gaussian branch is centered: the fixed `center` of a ProposalSpec
// (independence proposal) or the current chain state (random walk).
enum class GaussianCenter { point_estimate, chain_state };

struct ProposalSpec {
  double lambda = 0.0;
  std::shared_ptr<const PosteriorEnsemble> previous;
  ParamVector center;
  ParamVector scale;
  std::size_t max_kde_centers = 256;
  // Lower bound on KDE bandwidths as a fraction of `scale`.
  double kde_floor_fraction = 1e-3;
  GaussianCenter gaussian_center = GaussianCenter::point_estimate;
};

enum class ProposalBranch { previous_posterior, gaussian };

struct ProposalDraw {
  ParamVector theta;
  ProposalBranch branch;
};

/**
 * Two-branch proposal: with probability lambda a draw from a KDE of the
 * previous ensemble's post burn-in samples, otherwise a Gaussian draw around
 * `center` (or around the current state for the random-walk variant).
 *
 * Draws and the density used in the acceptance ratio come from the same
 * KDE, so the mixture is an exact proposal density.
 */
class VariableJumpProposal {
 public:
  explicit VariableJumpProposal(ProposalSpec spec) : spec_(std::move(spec)) {
    if (!(spec_.lambda >= 0.0 && spec_.lambda <= 1.0)) throw Error("ProposalSpec: lambda must lie in [0, 1]");
    if (spec_.center.size() == 0 || spec_.center.size() != spec_.scale.size())
      throw Error("ProposalSpec: center/scale dimension mismatch");
    if (!(spec_.scale.array() > 0.0).all()) throw Error("ProposalSpec: gaussian scale must be positive");
    if (spec_.lambda > 0.0) {
      if (!spec_.previous || spec_.previous->empty())
        throw Error("ProposalSpec: lambda > 0 requires a previous ensemble");
      if (spec_.previous->dim() != spec_.center.size())
        throw Error("ProposalSpec: previous ensemble dimension mismatch");
      kde_ = GaussianKde(spec_.previous->post_burn_in(), spec_.max_kde_centers,
                         spec_.scale * spec_.kde_floor_fraction);
    }
  }

  template <class Rng>
  ProposalDraw sample(Rng& rng) const {
    return sample(rng, spec_.center);
  }

  /// Draw given the current chain state (only used by the random-walk branch).
  template <class Rng>
  ProposalDraw sample(Rng& rng, const ParamVector& current) const {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double lambda_k = unit(rng);
    if (spec_.lambda > 0.0 && lambda_k <= spec_.lambda) return {kde_.sample(rng), ProposalBranch::previous_posterior};
    const ParamVector& c = gaussian_center(current);
    std::normal_distribution<double> normal;
    ParamVector theta(c.size());
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = c[i] + spec_.scale[i] * normal(rng);
    return {std::move(theta), ProposalBranch::gaussian};
  }

  double log_density(const ParamVector& theta) const { return log_density(theta, spec_.center); }

  /// log q(theta | from).
  double log_density(const ParamVector& theta, const ParamVector& from) const {
    const double log_gauss = gaussian_log_density(theta, gaussian_center(from), spec_.scale);
    if (spec_.lambda == 0.0) return log_gauss;
    const double log_kde = kde_.log_density(theta);
    if (spec_.lambda == 1.0) return log_kde;
    return log_sum_exp(std::log(spec_.lambda) + log_kde, std::log1p(-spec_.lambda) + log_gauss);
  }

  bool independent() const {
    return spec_.gaussian_center == GaussianCenter::point_estimate || spec_.lambda == 1.0;
  }

  /// KDE of the previous ensemble; only meaningful when lambda > 0.
  const GaussianKde& previous_density() const { return kde_; }
  const ProposalSpec& spec() const { return spec_; }

 private:
  const ParamVector& gaussian_center(const ParamVector& current) const {
    return spec_.gaussian_center == GaussianCenter::chain_state ? current : spec_.center;
  }

  ProposalSpec spec_;
  GaussianKde kde_;
};

template <class Rng>
ProposalDraw variable_jump_sample(const ProposalSpec& spec, Rng& rng) {
  return VariableJumpProposal(spec).sample(rng);
}

inline double variable_jump_log_density(const ParamVector& theta, const ProposalSpec& spec) {
  return VariableJumpProposal(spec).log_density(theta);
}

/// A proposal whose draws do not depend on the current chain state.
template <class P, class Rng>
concept IndependenceProposal = requires(const P& p, Rng& rng, const ParamVector& theta) {
  { p.sample(rng).theta } -> std::convertible_to<ParamVector>;
  { p.log_density(theta) } -> std::convertible_to<double>;
};

/// A proposal that may condition on the current state.
template <class P, class Rng>
concept ConditionalProposal = requires(const P& p, Rng& rng, const ParamVector& theta) {
  { p.sample(rng, theta).theta } -> std::convertible_to<ParamVector>;
  { p.log_density(theta, theta) } -> std::convertible_to<double>;
  { p.independent() } -> std::convertible_to<bool>;
};

/**
 * Runs `k` Metropolis-Hastings iterations (the initial state counts as the
 * first) and returns the full chain. Rejections repeat the previous sample.
 */
template <class Target, class Proposal, class Rng>
  requires(IndependenceProposal<Proposal, Rng> || ConditionalProposal<Proposal, Rng>) &&
          std::invocable<const Target&, const ParamVector&>
PosteriorEnsemble mh_chain(const ParamVector& initial, const Target& target_log_pdf, const Proposal& proposal,
                           std::size_t k, Rng& rng, std::size_t pack_index = 0) {
  if (k == 0) throw Error("mh_chain: chain length must be >= 1");
  double log_post_prev = target_log_pdf(initial);
  if (!(log_post_prev > -std::numeric_limits<double>::infinity()))
    throw Error("mh_chain: initial state has zero posterior density");

  constexpr bool conditional = ConditionalProposal<Proposal, Rng>;
  bool independent = true;
  if constexpr (conditional) independent = proposal.independent();

  std::vector<ParamVector> chain;
  chain.reserve(k);
  chain.push_back(initial);
  // Independence proposals only need q at each state once.
  double log_q_prev = independent ? proposal.log_density(initial) : 0.0;
  std::size_t accepted = 0;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (std::size_t i = 1; i < k; ++i) {
    const ParamVector& current = chain.back();
    ProposalDraw draw;
    double log_q_cnd_given_prev = 0.0;
    double log_q_prev_given_cnd = 0.0;
    if constexpr (conditional) {
      if (independent) {
        draw = proposal.sample(rng);
      } else {
        draw = proposal.sample(rng, current);
      }
    } else {
      draw = proposal.sample(rng);
    }
    const double log_post_cnd = target_log_pdf(draw.theta);
    if (independent) {
      log_q_cnd_given_prev = proposal.log_density(draw.theta);
      log_q_prev_given_cnd = log_q_prev;
    } else if constexpr (conditional) {
      if (log_post_cnd > -std::numeric_limits<double>::infinity()) {
        log_q_cnd_given_prev = proposal.log_density(draw.theta, current);
        log_q_prev_given_cnd = proposal.log_density(current, draw.theta);
      }
    }
    const double alpha = acceptance_probability(log_post_cnd, log_post_prev, log_q_prev_given_cnd, log_q_cnd_given_prev);
    const double gamma = unit(rng);
    if (gamma <= alpha && alpha > 0.0) {
      chain.push_back(std::move(draw.theta));
      log_post_prev = log_post_cnd;
      log_q_prev = log_q_cnd_given_prev;
      ++accepted;
    } else {
      chain.push_back(chain.back());
    }
  }
  return PosteriorEnsemble(std::move(chain), pack_index, accepted);
}

}  // namespace armcmc
