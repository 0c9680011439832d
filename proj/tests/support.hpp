#pragma once

#include "armcmc/core.hpp"

#include <random>
#include <vector>

namespace armcmc::testing {

/// y = theta . input
struct LinearModel {
  std::size_t d = 1;
  std::size_t dim() const { return d; }
  std::size_t output_dim() const { return 1; }
  void predict(const ParamVector& theta, std::span<const double> input, std::span<double> out) const {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += theta[static_cast<Eigen::Index>(i)] * input[i];
    out[0] = s;
  }
};

inline std::vector<Observation> linear_stream(const ParamVector& theta, std::size_t n, double sigma,
                                              std::uint64_t seed, double bias = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<Observation> stream;
  for (std::size_t k = 0; k < n; ++k) {
    Observation obs;
    obs.time_index = k;
    double y = bias;
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
      obs.input.push_back(j == 0 ? 1.0 : unit(rng));
      y += theta[j] * obs.input.back();
    }
    obs.output = {y + sigma * normal(rng)};
    stream.push_back(std::move(obs));
  }
  return stream;
}

inline DataPack pack_of(std::vector<double> outputs, std::size_t index = 0) {
  DataPack p;
  p.index = index;
  for (std::size_t i = 0; i < outputs.size(); ++i) p.observations.push_back({i, {1.0}, {outputs[i]}});
  return p;
}

inline ParamVector vec(std::initializer_list<double> v) {
  ParamVector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace armcmc::testing
