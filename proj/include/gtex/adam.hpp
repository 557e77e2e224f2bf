// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "gtex/tensor.hpp"

namespace gtex::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-parameter Adam moments, keyed by storage identity. Parameters outside
/// a step's set keep their moments and values untouched, so sparse latent
/// codes see correct bias correction on their own step counts.
class AdamState {
 public:
  explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t step_count() const { return step_count_; }

  void step(std::span<Tensor> params) {
    ++step_count_;
    for (Tensor& p : params) {
      if (!p.requires_grad() || !p.has_grad()) {
        throw Error("adam: missing gradient for parameter '" +
                    (p.name().empty() ? std::string("<unnamed>") : p.name()) + "'");
      }
      Slot& s = slots_[p.raw()];
      if (s.m.empty()) {
        s.m.assign(p.size(), 0.0);
        s.v.assign(p.size(), 0.0);
      }
      s.t += 1;
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
      double* w = p.value().data();
      const double* g = p.grad().data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
        s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
    for (Tensor& p : params) p.zero_grad();
  }

 private:
  struct Slot {
    std::vector<double> m, v;
    std::uint64_t t = 0;
  };
  AdamConfig cfg_;
  std::unordered_map<TensorData*, Slot> slots_;
  std::uint64_t step_count_ = 0;
};

inline void adam_step(std::span<Tensor> params, AdamState& state) { state.step(params); }

}  // namespace gtex::ad
