#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "moerl/autodiff/ops.hpp"
#include "moerl/nn/layers.hpp"

namespace moerl::moe {

struct GateResult {
  std::vector<std::size_t> indices;  // selected experts, in descending logit order
  std::vector<double> weights;       // softmax over the selected logits only
  std::vector<double> full_probs;    // softmax over all logits
};

// Indices of the k largest values; equal values resolve to the lower index.
inline std::vector<std::size_t> topk_indices(std::span<const double> logits, std::size_t k) {
  if (k == 0 || k > logits.size()) {
    throw ConfigError("top-k: k=" + std::to_string(k) + " must be in [1, " + std::to_string(logits.size()) + "]");
  }
  std::vector<std::size_t> idx(logits.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  idx.resize(k);
  return idx;
}

inline GateResult route_logits(std::span<const double> logits, std::size_t k) {
  GateResult g;
  g.indices = topk_indices(logits, k);
  const double top = logits[g.indices.front()];
  double z = 0.0;
  for (std::size_t i : g.indices) {
    g.weights.push_back(std::exp(logits[i] - top));
    z += g.weights.back();
  }
  for (double& w : g.weights) w /= z;

  const double mx = *std::max_element(logits.begin(), logits.end());
  double zf = 0.0;
  for (double l : logits) {
    g.full_probs.push_back(std::exp(l - mx));
    zf += g.full_probs.back();
  }
  for (double& p : g.full_probs) p /= zf;
  return g;
}

// Sparse gate matrix [B×N]: row b holds the softmax of its top-k logits at the
// selected columns and zeros elsewhere. Selection is piecewise constant, so
// gradients flow only through the selected logits.
inline Var topk_gate(Tape& tape, Var logits, std::size_t k, std::vector<GateResult>* routes = nullptr) {
  const Tensor& L = tape.value(logits);
  if (L.rank() != 2) throw DimensionError("topk_gate: expected [B×N] logits, got " + shape_str(L.shape()));
  const std::size_t B = L.rows(), N = L.cols();
  Tensor gates(Shape{B, N});
  std::vector<std::vector<std::size_t>> selected(B);
  if (routes) routes->clear();
  for (std::size_t b = 0; b < B; ++b) {
    GateResult g = route_logits(L.row(b), k);
    for (std::size_t j = 0; j < g.indices.size(); ++j) gates(b, g.indices[j]) = g.weights[j];
    selected[b] = g.indices;
    if (routes) routes->push_back(std::move(g));
  }
  return tape.record(std::move(gates), tape.requires_grad(logits),
                     [logits, N, selected = std::move(selected)](Tape& t, const Tape::Node& node) {
                       auto gl = t.grad_buffer(logits);
                       for (std::size_t b = 0; b < selected.size(); ++b) {
                         double dot = 0.0;
                         for (std::size_t i : selected[b]) dot += node.grad[b * N + i] * node.value[b * N + i];
                         for (std::size_t i : selected[b]) {
                           const double w = node.value[b * N + i];
                           gl[b * N + i] += w * (node.grad[b * N + i] - dot);
                         }
                       }
                     });
}

struct MoEConfig {
  std::size_t input_dim = 50;
  std::size_t hidden_dim = 256;
  std::size_t output_dim = 256;
  std::size_t num_experts = 4;
  std::size_t top_k = 2;

  void validate() const {
    if (num_experts == 0) throw ConfigError("moe: num_experts must be positive");
    if (top_k == 0 || top_k > num_experts) {
      throw ConfigError("moe: top_k=" + std::to_string(top_k) + " must be in [1, num_experts=" +
                        std::to_string(num_experts) + "]");
    }
    if (input_dim == 0 || hidden_dim == 0 || output_dim == 0) throw ConfigError("moe: zero dimension");
  }
};

// FFN_i: Linear -> ReLU -> Linear.
class ExpertFFN {
 public:
  ExpertFFN() = default;
  ExpertFFN(const std::string& name, const MoEConfig& cfg, Rng& rng)
      : fc1(name + ".fc1", cfg.input_dim, cfg.hidden_dim, rng), fc2(name + ".fc2", cfg.hidden_dim, cfg.output_dim, rng) {}

  Var forward(Tape& tape, Var z, Var* hidden = nullptr) {
    Var h = ops::relu(tape, fc1.forward(tape, z));
    if (hidden) *hidden = h;
    return fc2.forward(tape, h);
  }

  std::size_t num_params() const { return fc1.num_params() + fc2.num_params(); }
  void collect(nn::ParamList& out) {
    fc1.collect(out);
    fc2.collect(out);
  }

  nn::Linear fc1, fc2;
};

// h(z): latent -> N expert logits.
class Router {
 public:
  Router() = default;
  Router(const std::string& name, const MoEConfig& cfg, Rng& rng) : proj(name + ".proj", cfg.input_dim, cfg.num_experts, rng) {}

  Var forward(Tape& tape, Var z) { return proj.forward(tape, z); }
  std::size_t num_params() const { return proj.num_params(); }
  void collect(nn::ParamList& out) { proj.collect(out); }

  nn::Linear proj;
};

class MoELayer {
 public:
  struct BatchOutput {
    Var output;                     // [B×output_dim]
    Var full_probs;                 // [B×N], softmax of all logits
    std::vector<GateResult> gates;  // per sample
  };

  MoELayer() = default;
  MoELayer(const MoEConfig& cfg, Rng& rng, const std::string& name = "moe") : cfg_(cfg) {
    cfg_.validate();
    router_ = Router(name + ".router", cfg_, rng);
    experts_.reserve(cfg_.num_experts);
    for (std::size_t i = 0; i < cfg_.num_experts; ++i) {
      experts_.emplace_back(name + ".expert" + std::to_string(i), cfg_, rng);
    }
  }

  const MoEConfig& config() const { return cfg_; }
  std::size_t num_experts() const { return experts_.size(); }
  std::size_t top_k() const { return cfg_.top_k; }
  std::vector<ExpertFFN>& experts() { return experts_; }
  Router& router() { return router_; }

  // F(z) = Σ_{i∈topk} w(i;z)·FFN_i(z). Experts that no sample in the batch
  // selects are skipped; their contribution and gradient are exactly zero.
  BatchOutput forward(Tape& tape, Var z) {
    BatchOutput out;
    const Tensor& Z = tape.value(z);
    if (Z.rank() != 2 || Z.cols() != cfg_.input_dim) {
      throw DimensionError("moe: expected [B×" + std::to_string(cfg_.input_dim) + "] input, got " + shape_str(Z.shape()));
    }
    const std::size_t batch = Z.rows();
    Var logits = router_.forward(tape, z);
    Var gates = topk_gate(tape, logits, cfg_.top_k, &out.gates);
    out.full_probs = ops::softmax(tape, logits, -1);

    std::vector<bool> used(experts_.size(), false);
    for (const auto& g : out.gates) {
      for (std::size_t i : g.indices) used[i] = true;
    }
    bool first = true;
    for (std::size_t i = 0; i < experts_.size(); ++i) {
      if (!used[i]) continue;
      Var weighted = ops::scale_rows(tape, experts_[i].forward(tape, z), gates, i);
      out.output = first ? weighted : ops::add(tape, out.output, weighted);
      first = false;
    }
    if (first) out.output = tape.constant(Tensor(Shape{batch, cfg_.output_dim}));
    return out;
  }

  GateResult route(std::span<const double> z) {
    if (z.size() != cfg_.input_dim) throw DimensionError("moe::route: latent size mismatch");
    Tape tape;
    Var zi = tape.constant(Tensor(Shape{1, z.size()}, std::vector<double>(z.begin(), z.end())));
    Var logits = router_.forward(tape, zi);
    return route_logits(tape.value(logits).data(), cfg_.top_k);
  }

  std::vector<double> forward(std::span<const double> z) {
    if (z.size() != cfg_.input_dim) throw DimensionError("moe::forward: latent size mismatch");
    Tape tape;
    Var zi = tape.constant(Tensor(Shape{1, z.size()}, std::vector<double>(z.begin(), z.end())));
    const Tensor& y = tape.value(forward(tape, zi).output);
    return y.storage();
  }

  // Post-ReLU hidden activations of every expert on the whole batch.
  std::vector<Tensor> expert_hidden(Tape& tape, Var z) {
    std::vector<Tensor> out;
    for (auto& e : experts_) {
      Var h;
      e.forward(tape, z, &h);
      out.push_back(tape.value(h));
    }
    return out;
  }

  std::size_t num_params() const {
    std::size_t n = router_.num_params();
    for (const auto& e : experts_) n += e.num_params();
    return n;
  }

  void collect(nn::ParamList& out) {
    router_.collect(out);
    for (auto& e : experts_) e.collect(out);
  }

 private:
  MoEConfig cfg_;
  Router router_;
  std::vector<ExpertFFN> experts_;
};

inline void check_prob_rows(const Tensor& probs) {
  if (probs.rank() != 2 || probs.rows() == 0 || probs.cols() == 0) {
    throw DimensionError("load_balance_loss: expected nonempty [B×N], got " + shape_str(probs.shape()));
  }
  for (std::size_t b = 0; b < probs.rows(); ++b) {
    double s = 0.0;
    for (double p : probs.row(b)) {
      if (p < 0.0) throw ContractError("load_balance_loss: negative probability in row " + std::to_string(b));
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-6) {
      throw ContractError("load_balance_loss: row " + std::to_string(b) + " sums to " + std::to_string(s));
    }
  }
}

// -H(p) with p the batch-mean of per-sample router distributions. Ranges over
// [-log N, 0]; the lower bound is reached when experts are used uniformly.
inline Var load_balance_loss(Tape& tape, Var full_probs) {
  check_prob_rows(tape.value(full_probs));
  return ops::sum_plogp(tape, ops::mean_rows(tape, full_probs));
}

inline double load_balance_loss(const Tensor& full_probs) {
  Tape tape;
  return tape.value(load_balance_loss(tape, tape.constant(full_probs))).item();
}

// Mean gate weight per expert (0 when unselected) over a batch of routes.
inline std::vector<double> expert_usage(std::span<const GateResult> gates, std::size_t num_experts) {
  if (gates.empty()) throw ContractError("expert_usage: empty batch");
  std::vector<double> usage(num_experts, 0.0);
  for (const auto& g : gates) {
    for (std::size_t j = 0; j < g.indices.size(); ++j) {
      if (g.indices[j] >= num_experts) throw DimensionError("expert_usage: expert index out of range");
      usage[g.indices[j]] += g.weights[j];
    }
  }
  for (double& u : usage) u /= static_cast<double>(gates.size());
  return usage;
}

// Per-group usage: row g is expert_usage over the samples labelled g. Groups
// with no samples are left as zero rows.
inline Tensor expert_usage(std::span<const GateResult> gates, std::span<const std::size_t> labels,
                           std::size_t num_groups, std::size_t num_experts) {
  if (gates.empty()) throw ContractError("expert_usage: empty batch");
  if (labels.size() != gates.size()) throw DimensionError("expert_usage: one label per sample required");
  Tensor out(Shape{num_groups, num_experts});
  std::vector<std::size_t> counts(num_groups, 0);
  for (std::size_t s = 0; s < gates.size(); ++s) {
    const std::size_t g = labels[s];
    if (g >= num_groups) throw DimensionError("expert_usage: group label out of range");
    ++counts[g];
    for (std::size_t j = 0; j < gates[s].indices.size(); ++j) out(g, gates[s].indices[j]) += gates[s].weights[j];
  }
  for (std::size_t g = 0; g < num_groups; ++g) {
    if (counts[g] == 0) continue;
    for (std::size_t e = 0; e < num_experts; ++e) out(g, e) /= static_cast<double>(counts[g]);
  }
  return out;
}

}  // namespace moerl::moe
