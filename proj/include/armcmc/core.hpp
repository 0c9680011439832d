#pragma once

// Domain types shared by every part of the library: observations, data
// packs, parameter vectors, empirical posterior ensembles and noise models.

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace armcmc {

using ParamVector = Eigen::VectorXd;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Observation {
  std::uint64_t time_index = 0;
  std::vector<double> input;
  std::vector<double> output;
};

/// One algorithm time step worth of consecutive observations.
struct DataPack {
  std::size_t index = 0;
  std::vector<Observation> observations;

  std::size_t size() const { return observations.size(); }
  bool empty() const { return observations.empty(); }
};

inline bool all_finite(const ParamVector& v) { return v.allFinite(); }

/**
 * Splits a stream into packs of exactly `pack_size` observations.
 *
 * The trailing remainder (fewer than `pack_size` observations) is withheld;
 * it belongs to a pack that has not finished collecting yet.
 */
inline std::vector<DataPack> partition_stream(std::span<const Observation> stream,
                                              std::size_t pack_size) {
  if (pack_size == 0) throw Error("partition_stream: pack size must be >= 1");
  std::vector<DataPack> packs;
  const std::size_t count = stream.size() / pack_size;
  packs.reserve(count);
  for (std::size_t t = 0; t < count; ++t) {
    DataPack pack;
    pack.index = t;
    auto first = stream.begin() + static_cast<std::ptrdiff_t>(t * pack_size);
    pack.observations.assign(first, first + static_cast<std::ptrdiff_t>(pack_size));
    packs.push_back(std::move(pack));
  }
  return packs;
}

struct EmpiricalStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  // Set when the pack holds a single observation; variance is then 0.
  bool degenerate = false;
};

/// Component-wise mean and unbiased variance of the pack outputs.
inline EmpiricalStats empirical_stats(const DataPack& pack) {
  if (pack.empty()) throw Error("empirical_stats: empty pack");
  const auto k = static_cast<Eigen::Index>(pack.observations.front().output.size());
  const double n = static_cast<double>(pack.size());
  EmpiricalStats stats{Eigen::VectorXd::Zero(k), Eigen::VectorXd::Zero(k), pack.size() == 1};
  for (const auto& obs : pack.observations) {
    if (static_cast<Eigen::Index>(obs.output.size()) != k)
      throw Error("empirical_stats: inconsistent output dimension");
    stats.mean += Eigen::Map<const Eigen::VectorXd>(obs.output.data(), k);
  }
  stats.mean /= n;
  if (stats.degenerate) return stats;
  for (const auto& obs : pack.observations) {
    const Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(obs.output.data(), k) - stats.mean;
    stats.variance += d.cwiseProduct(d);
  }
  stats.variance /= (n - 1.0);
  return stats;
}

/**
 * Empirical posterior: the full accepted MH chain of one algorithm step.
 *
 * Rejected proposals repeat the previous sample, so the chain length equals
 * the number of iterations. Estimators use the second half of the chain
 * (indices >= burn_in()).
 */
class PosteriorEnsemble {
 public:
  PosteriorEnsemble() = default;

  PosteriorEnsemble(std::vector<ParamVector> samples, std::size_t pack_index,
                    std::size_t accepted = 0)
      : samples_(std::move(samples)), pack_index_(pack_index), accepted_(accepted) {
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      if (!samples_[i].allFinite())
        throw Error("PosteriorEnsemble: non-finite sample at index " + std::to_string(i));
      if (samples_[i].size() != samples_.front().size())
        throw Error("PosteriorEnsemble: inconsistent parameter dimension");
    }
  }

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  Eigen::Index dim() const { return empty() ? 0 : samples_.front().size(); }
  std::size_t burn_in() const { return samples_.size() / 2; }
  std::size_t pack_index() const { return pack_index_; }
  std::size_t accepted() const { return accepted_; }

  /// Fraction of iterations (after the initial state) that accepted a move.
  double acceptance_rate() const {
    return samples_.size() > 1 ? static_cast<double>(accepted_) / static_cast<double>(samples_.size() - 1)
                               : 0.0;
  }

  const std::vector<ParamVector>& samples() const { return samples_; }

  std::span<const ParamVector> post_burn_in() const {
    return std::span<const ParamVector>(samples_).subspan(burn_in());
  }

 private:
  std::vector<ParamVector> samples_;
  std::size_t pack_index_ = 0;
  std::size_t accepted_ = 0;
};

/// Measurement noise: location/spread estimates plus an evaluable log-pdf.
struct NoiseModel {
  double mu = 0.0;
  double sigma = 1.0;
  std::function<double(double)> log_pdf;

  static NoiseModel gaussian(double mu, double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error("NoiseModel: sigma must be positive");
    const double log_norm = -std::log(sigma * std::sqrt(2.0 * std::numbers::pi));
    return NoiseModel{mu, sigma, [mu, sigma, log_norm](double e) {
                        const double z = (e - mu) / sigma;
                        return log_norm - 0.5 * z * z;
                      }};
  }
};

/// A deterministic map from (parameters, input) to a predicted output vector.
template <class M>
concept ParametricModel = requires(const M& m, const ParamVector& theta, std::span<const double> input,
                                   std::span<double> out) {
  { m.dim() } -> std::convertible_to<std::size_t>;
  { m.output_dim() } -> std::convertible_to<std::size_t>;
  m.predict(theta, input, out);
};

}  // namespace armcmc
