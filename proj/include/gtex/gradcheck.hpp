// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "gtex/tensor.hpp"

namespace gtex::ad {

/// A differentiable scalar function of one tensor. The tape may be null for
/// plain numeric evaluation.
using ScalarFn = std::function<Tensor(Tape*, const Tensor&)>;

/// Compares the tape gradient of `fn` at `point` against central finite
/// differences and returns max_i |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
///
/// Coordinates within eps of zero are shifted to +2*eps before anything is
/// evaluated, so kinks that sit exactly at zero (relu, |.|) cannot land inside
/// a difference stencil.
inline double grad_check(const ScalarFn& fn, const Tensor& point, double eps) {
  if (!(eps > 0)) throw Error("grad_check: eps must be positive");

  std::vector<double> x(point.value().begin(), point.value().end());
  for (double& v : x) {
    if (std::abs(v) <= eps) v = 2.0 * eps;
  }

  Tensor p(std::vector<std::size_t>(point.shape()), std::vector<double>(x), true);
  Tape tape;
  Tensor y = fn(&tape, p);
  if (y.size() != 1) throw Error("grad_check: function must return a scalar");
  if (!std::isfinite(y.item())) throw Error("grad_check: non-finite function value");
  backward(y, tape);
  std::vector<double> g_ad(p.grad().begin(), p.grad().end());

  auto eval = [&](const std::vector<double>& v) {
    Tensor q(std::vector<std::size_t>(point.shape()), std::vector<double>(v), false);
    double r = fn(nullptr, q).item();
    if (!std::isfinite(r)) throw Error("grad_check: non-finite function value");
    return r;
  };

  double worst = 0.0;
  std::vector<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double fp = eval(probe);
    probe[i] = x[i] - eps;
    const double fm = eval(probe);
    probe[i] = x[i];
    const double g_fd = (fp - fm) / (2.0 * eps);
    if (!std::isfinite(g_fd) || !std::isfinite(g_ad[i])) {
      throw Error("grad_check: non-finite gradient");
    }
    const double denom = std::max({1.0, std::abs(g_ad[i]), std::abs(g_fd)});
    worst = std::max(worst, std::abs(g_ad[i] - g_fd) / denom);
  }
  return worst;
}

/// Same comparison over a whole parameter set: `fn` rebuilds the scalar loss
/// from current parameter values (with a tape when given one). Each parameter
/// coordinate is perturbed in place for the finite-difference probes, then
/// restored. `stride` > 1 checks every stride-th coordinate.
inline double grad_check_params(const std::function<Tensor(Tape*)>& fn,
                                std::span<Tensor> params, double eps,
                                std::size_t stride = 1) {
  if (!(eps > 0)) throw Error("grad_check_params: eps must be positive");
  for (Tensor& p : params) {
    p.ensure_grad();
    p.zero_grad();
  }
  Tape tape;
  Tensor y = fn(&tape);
  if (y.size() != 1) throw Error("grad_check_params: function must return a scalar");
  if (!std::isfinite(y.item())) throw Error("grad_check_params: non-finite value");
  backward(y, tape);

  double worst = 0.0;
  for (Tensor& p : params) {
    for (std::size_t i = 0; i < p.size(); i += stride) {
      const double saved = p.value()[i];
      p.value()[i] = saved + eps;
      const double fp = fn(nullptr).item();
      p.value()[i] = saved - eps;
      const double fm = fn(nullptr).item();
      p.value()[i] = saved;
      const double g_fd = (fp - fm) / (2.0 * eps);
      const double g_ad = p.grad()[i];
      if (!std::isfinite(g_fd) || !std::isfinite(g_ad)) {
        throw Error("grad_check_params: non-finite gradient");
      }
      const double denom = std::max({1.0, std::abs(g_ad), std::abs(g_fd)});
      worst = std::max(worst, std::abs(g_ad - g_fd) / denom);
    }
  }
  for (Tensor& p : params) p.zero_grad();
  return worst;
}

}  // namespace gtex::ad
