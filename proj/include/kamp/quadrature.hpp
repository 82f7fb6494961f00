#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

namespace kamp {

template <std::size_t N> struct QuadratureResult {
  std::array<double, N> value{};
  std::array<double, N> error{};
  int intervals = 0;
  bool converged = false;
};

struct QuadratureOptions {
  /// Per-component absolute tolerances are abs_tol[i] + rel_tol * |value[i]|.
  double rel_tol = 1e-13;
  int max_intervals = 1000;
};

namespace detail {

// 21-point Kronrod extension of the 10-point Gauss rule (QUADPACK qk21).
inline constexpr std::array<double, 11> gk21_nodes = {
    0.995657163025808080735527280689003, 0.973906528517171720077964012084452,
    0.930157491355708226001207180059508, 0.865063366688984510732096688423493,
    0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
    0.562757134668604683339000099272694, 0.433395394129247190799265943165784,
    0.294392862701460198131126603103866, 0.148874338981631210884826001129720,
    0.000000000000000000000000000000000};

inline constexpr std::array<double, 11> gk21_kronrod_weights = {
    0.011694638867371874278064396062192, 0.032558162307964727478818972459390,
    0.054755896574351996031381300244580, 0.075039674810919952767043140916190,
    0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
    0.123491976262065851077600525452600, 0.134709217311473325928054001771707,
    0.142775938577060080797094273138717, 0.147739104901338491374841515972068,
    0.149445554002916905664936468389821};

// Gauss weights for nodes 1, 3, 5, 7, 9.
inline constexpr std::array<double, 5> gk21_gauss_weights = {
    0.066671344308688137593568809893332, 0.149451349150580593145776339657697,
    0.219086362515982043995534934228163, 0.269266719309996355091226921569469,
    0.295524224714752870173892994651338};

template <std::size_t N> struct Panel {
  double a = 0.0;
  double b = 0.0;
  std::array<double, N> value{};
  std::array<double, N> error{};
  double priority = 0.0;
  bool operator<(const Panel &o) const { return priority < o.priority; }
};

template <std::size_t N, class F>
Panel<N> gk21_panel(F &f, double a, double b,
                    const std::array<double, N> &scale) {
  Panel<N> p;
  p.a = a;
  p.b = b;
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  std::array<std::array<double, N>, 21> fx;
  fx[10] = f(c);
  for (int i = 0; i < 10; ++i) {
    const double dx = h * gk21_nodes[i];
    fx[i] = f(c - dx);
    fx[20 - i] = f(c + dx);
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < N; ++k) {
    double kron = gk21_kronrod_weights[10] * fx[10][k];
    double gauss = 0.0;
    double absint = gk21_kronrod_weights[10] * std::abs(fx[10][k]);
    for (int i = 0; i < 10; ++i) {
      const double s = fx[i][k] + fx[20 - i][k];
      kron += gk21_kronrod_weights[i] * s;
      absint += gk21_kronrod_weights[i] * (std::abs(fx[i][k]) + std::abs(fx[20 - i][k]));
      if (i % 2 == 1) {
        gauss += gk21_gauss_weights[static_cast<std::size_t>(i / 2)] * s;
      }
    }
    const double mean = 0.5 * kron;
    double resasc = gk21_kronrod_weights[10] * std::abs(fx[10][k] - mean);
    for (int i = 0; i < 10; ++i) {
      resasc += gk21_kronrod_weights[i] *
                (std::abs(fx[i][k] - mean) + std::abs(fx[20 - i][k] - mean));
    }
    kron *= h;
    gauss *= h;
    resasc *= std::abs(h);
    absint *= std::abs(h);
    double err = std::abs(kron - gauss);
    if (resasc != 0.0 && err != 0.0) {
      err = resasc * std::min(1.0, std::pow(200.0 * err / resasc, 1.5));
    }
    const double roundoff = 50.0 * std::numeric_limits<double>::epsilon() * absint;
    err = std::max(err, roundoff);
    p.value[k] = kron;
    p.error[k] = err;
    worst = std::max(worst, err / scale[k]);
  }
  p.priority = worst;
  return p;
}

} // namespace detail

/// Globally adaptive Gauss-Kronrod integration of a vector-valued integrand
/// over consecutive panels [points[i], points[i+1]].  `abs_tol` fixes the
/// absolute error budget per component.
template <std::size_t N, class F>
QuadratureResult<N> integrate_gk21(F &&f, std::span<const double> points,
                                   const std::array<double, N> &abs_tol,
                                   const QuadratureOptions &opts = {}) {
  QuadratureResult<N> out;
  std::array<double, N> scale{};
  scale.fill(1.0);
  std::vector<detail::Panel<N>> initial;
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    if (points[i + 1] > points[i]) {
      initial.push_back(detail::gk21_panel<N>(f, points[i], points[i + 1], scale));
    }
  }
  // Rank panels against the effective tolerance implied by the first pass.
  std::array<double, N> first{};
  for (const auto &p : initial) {
    for (std::size_t k = 0; k < N; ++k) {
      first[k] += p.value[k];
    }
  }
  for (std::size_t k = 0; k < N; ++k) {
    scale[k] = std::max({abs_tol[k] + opts.rel_tol * std::abs(first[k]), 1e-300});
  }
  for (auto &p : initial) {
    p.priority = 0.0;
    for (std::size_t k = 0; k < N; ++k) {
      p.priority = std::max(p.priority, p.error[k] / scale[k]);
    }
  }
  std::priority_queue<detail::Panel<N>> heap(std::less<detail::Panel<N>>{}, std::move(initial));
  auto totals = [&heap] {
    std::array<double, N> v{};
    std::array<double, N> e{};
    auto copy = heap;
    while (!copy.empty()) {
      for (std::size_t k = 0; k < N; ++k) {
        v[k] += copy.top().value[k];
        e[k] += copy.top().error[k];
      }
      copy.pop();
    }
    return std::pair{v, e};
  };

  // Running sums avoid re-scanning the heap on every refinement.
  std::array<double, N> value{};
  std::array<double, N> error{};
  std::tie(value, error) = totals();
  while (true) {
    bool done = true;
    for (std::size_t k = 0; k < N; ++k) {
      if (error[k] > abs_tol[k] + opts.rel_tol * std::abs(value[k])) {
        done = false;
      }
    }
    if (done) {
      out.converged = true;
      break;
    }
    if (heap.empty() || static_cast<int>(heap.size()) >= opts.max_intervals) {
      break;
    }
    const detail::Panel<N> worst = heap.top();
    const double mid = 0.5 * (worst.a + worst.b);
    if (!(mid > worst.a && mid < worst.b)) {
      break;
    }
    heap.pop();
    auto left = detail::gk21_panel<N>(f, worst.a, mid, scale);
    auto right = detail::gk21_panel<N>(f, mid, worst.b, scale);
    for (std::size_t k = 0; k < N; ++k) {
      value[k] += left.value[k] + right.value[k] - worst.value[k];
      error[k] += left.error[k] + right.error[k] - worst.error[k];
    }
    heap.push(std::move(left));
    heap.push(std::move(right));
  }
  // Re-sum once to shed accumulated cancellation in the running totals.
  std::tie(out.value, out.error) = totals();
  out.intervals = static_cast<int>(heap.size());
  return out;
}

} // namespace kamp
