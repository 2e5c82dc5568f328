#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "moerl/moe/moe.hpp"

// Brute-force MoE reference: plain loops over every expert, no tape.
namespace moerl::testing {

inline std::vector<double> affine(const nn::Linear& l, const std::vector<double>& x) {
  const std::size_t in = l.weight.value.dim(0), out = l.weight.value.dim(1);
  std::vector<double> y(out);
  for (std::size_t j = 0; j < out; ++j) {
    double s = l.bias.value[j];
    for (std::size_t i = 0; i < in; ++i) s += x[i] * l.weight.value(i, j);
    y[j] = s;
  }
  return y;
}

inline std::vector<double> expert_oracle(const moe::ExpertFFN& e, const std::vector<double>& z) {
  std::vector<double> h = affine(e.fc1, z);
  for (double& v : h) v = std::max(v, 0.0);
  return affine(e.fc2, h);
}

// Evaluates all N experts, then sums the k highest-logit ones weighted by the
// softmax of their logits.
inline std::vector<double> moe_oracle(moe::MoELayer& layer, const std::vector<double>& z) {
  const std::vector<double> logits = affine(layer.router().proj, z);
  const std::size_t n = logits.size(), k = layer.top_k();
  std::vector<std::vector<double>> outs;
  for (const auto& e : layer.experts()) outs.push_back(expert_oracle(e, z));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
  });
  double z_sum = 0.0;
  for (std::size_t j = 0; j < k; ++j) z_sum += std::exp(logits[order[j]]);
  std::vector<double> y(outs[0].size(), 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    const double w = std::exp(logits[order[j]]) / z_sum;
    for (std::size_t d = 0; d < y.size(); ++d) y[d] += w * outs[order[j]][d];
  }
  return y;
}

struct MoEInstance {
  moe::MoEConfig cfg;
  std::uint64_t seed = 0;
};

// Random instance with N ≤ 8, k ≤ N and every dimension ≤ 16.
inline MoEInstance random_instance(std::mt19937_64& rng) {
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  MoEInstance inst;
  inst.cfg.num_experts = pick(1, 8);
  inst.cfg.top_k = pick(1, inst.cfg.num_experts);
  inst.cfg.input_dim = pick(1, 16);
  inst.cfg.hidden_dim = pick(1, 16);
  inst.cfg.output_dim = pick(1, 16);
  inst.seed = rng();
  return inst;
}

// Max |layer − oracle| over `inputs` random latents of one instance, through
// both the per-sample and the batched forward.
inline double oracle_gap(const MoEInstance& inst, std::size_t inputs) {
  Rng rng(inst.seed);
  moe::MoELayer layer(inst.cfg, rng);
  // biases away from zero so the bias path is exercised
  nn::ParamList ps;
  layer.collect(ps);
  std::normal_distribution<double> normal(0.0, 0.5);
  for (auto* p : ps) {
    if (p->name.ends_with(".bias")) {
      for (auto& v : p->value.storage()) v = normal(rng);
    }
  }
  double gap = 0.0;
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Tensor batch(Shape{inputs, inst.cfg.input_dim});
  std::vector<std::vector<double>> wants;
  for (std::size_t s = 0; s < inputs; ++s) {
    std::vector<double> z(inst.cfg.input_dim);
    for (auto& v : z) v = u(rng);
    for (std::size_t i = 0; i < z.size(); ++i) batch(s, i) = z[i];
    const std::vector<double> got = layer.forward(z);
    wants.push_back(moe_oracle(layer, z));
    for (std::size_t d = 0; d < got.size(); ++d) gap = std::max(gap, std::abs(got[d] - wants.back()[d]));
  }
  // the batched tape path, all rows at once
  Tape tape(false);
  const Tensor out = tape.value(layer.forward(tape, tape.constant(batch)).output);
  for (std::size_t s = 0; s < inputs; ++s) {
    for (std::size_t d = 0; d < out.dim(1); ++d) gap = std::max(gap, std::abs(out(s, d) - wants[s][d]));
  }
  return gap;
}

}  // namespace moerl::testing
