#pragma once

// Adaptive recursive MCMC: one posterior update per data pack, switching
// between restarting from the prior (modification) and refining the last
// posterior (reinforcement).

#include "armcmc/core.hpp"
#include "armcmc/sampler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace armcmc {

enum class Mode { modification, reinforcement };

inline const char* to_string(Mode m) { return m == Mode::modification ? "modification" : "reinforcement"; }

/// Independent Gaussian per parameter.
struct GaussianPrior {
  ParamVector mean;
  ParamVector scale;

  double log_density(const ParamVector& theta) const { return gaussian_log_density(theta, mean, scale); }
};

enum class MismatchStatistic {
  signed_mean,
  // Non-normative variant: mean absolute residual.
  absolute_mean,
};

struct ArmcmcConfig {
  PrecisionReliability pr;
  double zeta_threshold = 1.0;
  double rho = 0.0;
  NoiseModel noise = NoiseModel::gaussian(0.0, 1.0);
  std::size_t pack_size = 100;
  GaussianPrior prior;
  // Per-component scale of the Gaussian proposal branch.
  ParamVector proposal_scale;
  GaussianCenter gaussian_center = GaussianCenter::point_estimate;
  MismatchStatistic mismatch = MismatchStatistic::signed_mean;
  // Overrides k_min when set (plain-MCMC comparators with a fixed budget).
  std::optional<std::size_t> fixed_chain_length;
  // Forces lambda = 0 at every step (plain MCMC).
  bool always_modify = false;
  std::size_t max_kde_centers = 256;
  // Re-estimate the noise mean/spread from point-estimate residuals after each step.
  bool reestimate_noise = false;
};

inline void validate(const ArmcmcConfig& cfg) {
  validate(cfg.pr);
  if (!(cfg.zeta_threshold > 0.0)) throw Error("ArmcmcConfig: zeta_threshold must be positive");
  if (!(cfg.rho >= 0.0 && cfg.rho <= 1.0)) throw Error("ArmcmcConfig: rho must lie in [0, 1]");
  if (cfg.pack_size == 0) throw Error("ArmcmcConfig: pack_size must be >= 1");
  if (cfg.prior.mean.size() == 0 || cfg.prior.mean.size() != cfg.prior.scale.size())
    throw Error("ArmcmcConfig: prior mean/scale dimension mismatch");
  if (!(cfg.prior.scale.array() > 0.0).all()) throw Error("ArmcmcConfig: prior scale must be positive");
  if (cfg.proposal_scale.size() != cfg.prior.mean.size())
    throw Error("ArmcmcConfig: proposal_scale dimension mismatch");
  if (!cfg.noise.log_pdf) throw Error("ArmcmcConfig: noise model has no log-pdf");
}

struct StepDiagnostics {
  std::size_t pack_index = 0;
  double zeta = std::numeric_limits<double>::infinity();
  double lambda = 0.0;
  Mode mode = Mode::modification;
  std::size_t k_min = 0;
  double acceptance_rate = 0.0;
  ParamVector point_maps;
  ParamVector point_aps;
  double wall_ms = 0.0;
};

struct ArmcmcState {
  std::shared_ptr<const PosteriorEnsemble> ensemble;
  // Index the next pack must carry.
  std::size_t next_pack = 0;
  std::optional<StepDiagnostics> last_diagnostics;
  NoiseModel noise;

  static ArmcmcState initial(const ArmcmcConfig& cfg) { return ArmcmcState{nullptr, 0, std::nullopt, cfg.noise}; }
};

class NonFinitePrediction : public Error {
 public:
  NonFinitePrediction(std::size_t sample, std::size_t observation)
      : Error("model prediction non-finite for ensemble sample " + std::to_string(sample) + " at observation " +
              std::to_string(observation)),
        sample_(sample) {}
  std::size_t sample() const { return sample_; }

 private:
  std::size_t sample_;
};

/**
 * Mean residual of the previous posterior's predictive mean on a new pack.
 *
 * The predictive mean averages model outputs over the post burn-in samples.
 * Returns +inf when there is no previous posterior.
 */
template <ParametricModel Model>
double model_mismatch_index(const PosteriorEnsemble* prev, const DataPack& pack, const Model& model,
                            MismatchStatistic statistic = MismatchStatistic::signed_mean) {
  if (prev == nullptr || prev->empty()) return std::numeric_limits<double>::infinity();
  if (pack.empty()) throw Error("model_mismatch_index: empty pack");
  const auto samples = prev->post_burn_in();
  const std::size_t k = model.output_dim();
  std::vector<double> out(k);
  std::vector<double> mean(k);
  double total = 0.0;
  std::size_t terms = 0;
  for (std::size_t n = 0; n < pack.size(); ++n) {
    const auto& obs = pack.observations[n];
    std::fill(mean.begin(), mean.end(), 0.0);
    for (std::size_t s = 0; s < samples.size(); ++s) {
      model.predict(samples[s], obs.input, out);
      for (std::size_t c = 0; c < k; ++c) {
        if (!std::isfinite(out[c])) throw NonFinitePrediction(prev->burn_in() + s, n);
        mean[c] += out[c];
      }
    }
    for (std::size_t c = 0; c < k; ++c) {
      const double r = obs.output[c] - mean[c] / static_cast<double>(samples.size());
      total += statistic == MismatchStatistic::signed_mean ? r : std::abs(r);
      ++terms;
    }
  }
  return total / static_cast<double>(terms);
}

struct ForgettingFactor {
  double lambda;
  Mode mode;
};

/**
 * lambda = exp(-|mu_nu - zeta|) below the mismatch threshold, 0 otherwise.
 *
 * A factor that underflows to 0 reuses nothing from the previous posterior
 * and is reported as modification.
 */
inline ForgettingFactor temporal_forgetting_factor(double zeta, double mu_nu, double zeta_threshold) {
  if (!(zeta_threshold > 0.0)) throw Error("temporal_forgetting_factor: threshold must be positive");
  if (!std::isfinite(zeta) || zeta >= zeta_threshold) return {0.0, Mode::modification};
  const double lambda = std::exp(-std::abs(mu_nu - zeta));
  if (lambda == 0.0) return {0.0, Mode::modification};
  return {lambda, Mode::reinforcement};
}

/**
 * Sum of noise log-densities of temporally weighted residuals.
 *
 * Observation n (1-based, n = N_s newest) has its residual scaled by
 * exp(-rho (N_s - n)).
 */
template <ParametricModel Model>
double weighted_log_likelihood(const ParamVector& theta, const DataPack& pack, const Model& model,
                               const NoiseModel& noise, double rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw Error("weighted_log_likelihood: rho must lie in [0, 1]");
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  const std::size_t k = model.output_dim();
  const std::size_t ns = pack.size();
  double out_buf[8];
  std::vector<double> heap;
  std::span<double> out(out_buf, k);
  if (k > 8) {
    heap.resize(k);
    out = heap;
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < ns; ++i) {
    const auto& obs = pack.observations[i];
    model.predict(theta, obs.input, out);
    const double w = rho == 0.0 ? 1.0 : std::exp(-rho * static_cast<double>(ns - 1 - i));
    for (std::size_t c = 0; c < k; ++c) {
      if (!std::isfinite(out[c])) return neg_inf;
      sum += noise.log_pdf((obs.output[c] - out[c]) * w);
    }
    if (sum == neg_inf) return neg_inf;
  }
  return sum;
}

/// Per-component median (reinforcement) or 64-bin histogram mode (modification) of the post burn-in samples.
/// The mode is the mean of the samples in the fullest bin.
inline ParamVector ar_maps(const PosteriorEnsemble& ensemble, Mode mode) {
  if (ensemble.empty()) throw Error("ar_maps: empty ensemble");
  constexpr std::size_t bins = 64;
  const auto samples = ensemble.post_burn_in();
  const auto d = ensemble.dim();
  ParamVector estimate(d);
  std::vector<double> column(samples.size());
  for (Eigen::Index j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < samples.size(); ++i) column[i] = samples[i][j];
    if (mode == Mode::reinforcement) {
      std::sort(column.begin(), column.end());
      const std::size_t n = column.size();
      estimate[j] = n % 2 == 1 ? column[n / 2] : 0.5 * (column[n / 2 - 1] + column[n / 2]);
      continue;
    }
    const auto [lo_it, hi_it] = std::minmax_element(column.begin(), column.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (!(hi > lo)) {
      estimate[j] = lo;
      continue;
    }
    const double width = (hi - lo) / static_cast<double>(bins);
    std::vector<std::size_t> counts(bins, 0);
    std::vector<double> sums(bins, 0.0);
    for (double v : column) {
      const auto b = std::min(static_cast<std::size_t>((v - lo) / width), bins - 1);
      ++counts[b];
      sums[b] += v;
    }
    // Report the mean of the samples inside the modal bin.
    const auto best = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    estimate[j] = sums[best] / static_cast<double>(counts[best]);
  }
  return estimate;
}

/// Per-component mean of the post burn-in samples.
inline ParamVector ar_aps(const PosteriorEnsemble& ensemble) {
  if (ensemble.empty()) throw Error("ar_aps: empty ensemble");
  const auto samples = ensemble.post_burn_in();
  ParamVector mean = ParamVector::Zero(ensemble.dim());
  for (const auto& s : samples) mean += s;
  return mean / static_cast<double>(samples.size());
}

namespace detail {

template <ParametricModel Model>
NoiseModel reestimate_noise(const ParamVector& theta, const DataPack& pack, const Model& model,
                            const NoiseModel& current) {
  std::vector<double> out(model.output_dim());
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t n = 0;
  for (const auto& obs : pack.observations) {
    model.predict(theta, obs.input, out);
    for (std::size_t c = 0; c < out.size(); ++c) {
      const double r = obs.output[c] - out[c];
      if (!std::isfinite(r)) return current;
      sum += r;
      sum_sq += r * r;
      ++n;
    }
  }
  if (n < 2) return current;
  const double mu = sum / static_cast<double>(n);
  const double var = (sum_sq - static_cast<double>(n) * mu * mu) / static_cast<double>(n - 1);
  const double sigma = std::sqrt(std::max(var, 0.0));
  if (!(sigma > 0.0)) return current;
  return NoiseModel::gaussian(mu, sigma);
}

}  // namespace detail

/**
 * One algorithm time step.
 *
 * Computes the mismatch index against the previous posterior, picks the
 * operating mode and forgetting factor, sizes the chain, and samples the
 * posterior proportional to the weighted likelihood of `pack` times the
 * prior. In reinforcement the prior is the previous posterior (its KDE);
 * in modification it is the configured initial prior.
 */
template <ParametricModel Model, class Rng>
ArmcmcState armcmc_step(const ArmcmcState& state, const DataPack& pack, const Model& model,
                        const ArmcmcConfig& cfg, Rng& rng) {
  const auto started = std::chrono::steady_clock::now();
  validate(cfg);
  if (pack.index != state.next_pack)
    throw Error("armcmc_step: expected pack " + std::to_string(state.next_pack) + ", got " +
                std::to_string(pack.index));
  if (pack.size() != cfg.pack_size)
    throw Error("armcmc_step: pack " + std::to_string(pack.index) + " has " + std::to_string(pack.size()) +
                " observations, expected " + std::to_string(cfg.pack_size));
  if (model.dim() != static_cast<std::size_t>(cfg.prior.mean.size()))
    throw Error("armcmc_step: model/prior dimension mismatch");

  StepDiagnostics diag;
  diag.pack_index = pack.index;
  diag.zeta = model_mismatch_index(state.ensemble.get(), pack, model, cfg.mismatch);
  auto tff = temporal_forgetting_factor(diag.zeta, state.noise.mu, cfg.zeta_threshold);
  if (cfg.always_modify) tff = {0.0, Mode::modification};
  diag.lambda = tff.lambda;
  diag.mode = tff.mode;
  diag.k_min = cfg.fixed_chain_length ? *cfg.fixed_chain_length : armcmc_min_samples(cfg.pr, tff.lambda);

  const bool reinforce = tff.mode == Mode::reinforcement;
  ProposalSpec spec;
  spec.lambda = tff.lambda;
  spec.previous = reinforce ? state.ensemble : nullptr;
  spec.center = state.last_diagnostics ? state.last_diagnostics->point_aps : cfg.prior.mean;
  spec.scale = cfg.proposal_scale;
  spec.max_kde_centers = cfg.max_kde_centers;
  spec.gaussian_center = cfg.gaussian_center;
  const VariableJumpProposal proposal(spec);

  // Reinforcement reuses the previous ensemble's KDE as the prior; it needs
  // building even when lambda is 1 and the proposal already holds it.
  const GaussianKde* prior_kde = nullptr;
  if (reinforce) prior_kde = &proposal.previous_density();

  const NoiseModel& noise = state.noise;
  auto target = [&](const ParamVector& theta) {
    const double log_prior = prior_kde ? prior_kde->log_density(theta) : cfg.prior.log_density(theta);
    if (!std::isfinite(log_prior)) return -std::numeric_limits<double>::infinity();
    return log_prior + weighted_log_likelihood(theta, pack, model, noise, cfg.rho);
  };

  ParamVector initial = spec.center;
  if (!(target(initial) > -std::numeric_limits<double>::infinity())) {
    initial = cfg.prior.mean;
    for (int attempt = 0; attempt < 1000 && !(target(initial) > -std::numeric_limits<double>::infinity());
         ++attempt)
      initial = proposal.sample(rng).theta;
    if (!(target(initial) > -std::numeric_limits<double>::infinity()))
      throw Error("armcmc_step: no initial state with positive posterior density for pack " +
                  std::to_string(pack.index));
  }

  auto ensemble =
      std::make_shared<const PosteriorEnsemble>(mh_chain(initial, target, proposal, diag.k_min, rng, pack.index));
  diag.acceptance_rate = ensemble->acceptance_rate();
  diag.point_maps = ar_maps(*ensemble, diag.mode);
  diag.point_aps = ar_aps(*ensemble);

  ArmcmcState next;
  next.ensemble = std::move(ensemble);
  next.next_pack = state.next_pack + 1;
  next.noise = cfg.reestimate_noise ? detail::reestimate_noise(diag.point_aps, pack, model, state.noise) : state.noise;
  diag.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  next.last_diagnostics = std::move(diag);
  return next;
}

}  // namespace armcmc
