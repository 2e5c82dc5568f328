#pragma once

#include <cmath>
#include <concepts>
#include <string>
#include <vector>

#include "moerl/autodiff/tensor.hpp"

namespace moerl::dormant {

struct DormantConfig {
  double tau = 0.025;
  std::size_t probe_batch_size = 256;

  void validate() const {
    if (!(tau >= 0.0)) throw ConfigError("dormant: tau must be >= 0");
    if (probe_batch_size == 0) throw ConfigError("dormant: probe_batch_size must be positive");
  }
};

struct LayerReport {
  std::string layer;
  std::vector<double> scores;
  std::size_t dormant = 0;
  std::size_t width = 0;
};

struct DormantReport {
  std::vector<LayerReport> per_layer;
  double ratio = 0.0;
};

// A named [B×N] block of post-activation outputs.
struct LayerActivations {
  std::string layer;
  Tensor outputs;
};

// s_i = mean_b |out_{b,i}| / ((1/N) Σ_k mean_b |out_{b,k}|). A layer whose
// outputs are all zero scores 0 everywhere.
inline std::vector<double> neuron_scores(const Tensor& outputs) {
  if (outputs.rank() != 2) throw DimensionError("neuron_scores: expected [B×N], got " + shape_str(outputs.shape()));
  const std::size_t B = outputs.rows(), N = outputs.cols();
  if (B == 0) throw ContractError("neuron_scores: empty batch");
  if (N == 0) throw ContractError("neuron_scores: layer has no neurons");
  std::vector<double> mean_abs(N, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < N; ++i) mean_abs[i] += std::abs(outputs(b, i));
  }
  double layer_mean = 0.0;
  for (double& m : mean_abs) {
    m /= static_cast<double>(B);
    layer_mean += m;
  }
  layer_mean /= static_cast<double>(N);
  std::vector<double> scores(N, 0.0);
  if (layer_mean == 0.0) return scores;
  for (std::size_t i = 0; i < N; ++i) scores[i] = mean_abs[i] / layer_mean;
  return scores;
}

// β_τ = Σ_l D_τ^l / Σ_l N^l, a neuron being dormant iff s_i ≤ τ.
inline DormantReport dormant_ratio(const std::vector<LayerActivations>& layers, double tau) {
  if (tau < 0.0) throw ConfigError("dormant_ratio: tau must be >= 0");
  if (layers.empty()) throw ContractError("dormant_ratio: no counted layers");
  DormantReport report;
  std::size_t total_dormant = 0, total_width = 0;
  for (const auto& l : layers) {
    if (l.outputs.rank() != 2 || l.outputs.rows() == 0) throw ContractError("dormant_ratio: empty probe batch");
    LayerReport lr;
    lr.layer = l.layer;
    lr.scores = neuron_scores(l.outputs);
    lr.width = lr.scores.size();
    for (double s : lr.scores) lr.dormant += s <= tau ? 1 : 0;
    total_dormant += lr.dormant;
    total_width += lr.width;
    report.per_layer.push_back(std::move(lr));
  }
  report.ratio = static_cast<double>(total_dormant) / static_cast<double>(total_width);
  return report;
}

// Anything that can report its counted hidden layers on a probe batch.
template <class Net>
concept ProbedNetwork = requires(Net& net, const Tensor& probe) {
  { net.hidden_activations(probe) } -> std::convertible_to<std::vector<LayerActivations>>;
};

template <ProbedNetwork Net>
DormantReport dormant_ratio(Net& net, const Tensor& probe_batch, double tau) {
  if (probe_batch.rank() == 0 || probe_batch.dim(0) == 0) throw ContractError("dormant_ratio: empty probe batch");
  return dormant_ratio(net.hidden_activations(probe_batch), tau);
}

}  // namespace moerl::dormant
