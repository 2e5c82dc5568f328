#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "moerl/autodiff/tape.hpp"

namespace moerl {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with per-parameter step counters so that individual slots can be reset
// (e.g. after a weight perturbation) without disturbing the others.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }

  void step(std::span<Parameter* const> params) {
    if (slots_.empty()) {
      slots_.resize(params.size());
    } else if (slots_.size() != params.size()) {
      throw ContractError("Adam::step: parameter list changed size");
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
      Parameter& param = *params[p];
      Slot& s = slots_[p];
      const std::size_t n = param.value.size();
      if (s.m.size() != n) {
        s.m.assign(n, 0.0);
        s.v.assign(n, 0.0);
        s.t = 0;
      }
      ++s.t;
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
      auto& w = param.value.storage();
      const auto& g = param.grad.storage();
      for (std::size_t i = 0; i < n; ++i) {
        s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
        s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  // Zero the moment estimates and step count of the slot at `index`.
  void reset_slot(std::size_t index) {
    if (index < slots_.size()) slots_[index] = Slot{};
  }

  void reset_all() { slots_.clear(); }

 private:
  struct Slot {
    std::vector<double> m, v;
    long long t = 0;
  };
  AdamConfig cfg_;
  std::vector<Slot> slots_;
};

inline void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace moerl
