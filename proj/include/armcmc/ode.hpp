#pragma once

#include <array>
#include <cstddef>

namespace armcmc {

template <std::size_t N>
using State = std::array<double, N>;

namespace detail {

template <std::size_t N>
State<N> axpy(const State<N>& y, double a, const State<N>& k) {
  State<N> r;
  for (std::size_t i = 0; i < N; ++i) r[i] = y[i] + a * k[i];
  return r;
}

}  // namespace detail

/// Classical fourth-order Runge-Kutta step for y' = f(t, y).
template <std::size_t N, class F>
State<N> rk4_step(const F& f, double t, const State<N>& y, double h) {
  const State<N> k1 = f(t, y);
  const State<N> k2 = f(t + 0.5 * h, detail::axpy(y, 0.5 * h, k1));
  const State<N> k3 = f(t + 0.5 * h, detail::axpy(y, 0.5 * h, k2));
  const State<N> k4 = f(t + h, detail::axpy(y, h, k3));
  State<N> next;
  for (std::size_t i = 0; i < N; ++i) next[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  return next;
}

}  // namespace armcmc
