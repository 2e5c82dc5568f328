#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "moerl/errors.hpp"

namespace moerl::analysis {

struct GradientRecord {
  std::string group;
  std::vector<double> gradient;  // flat gradient over the shared parameter subset
  long long step = 0;
};

// Entry (i, j) is nullopt when either gradient has zero norm.
using CosineMatrix = std::vector<std::vector<std::optional<double>>>;

inline CosineMatrix grad_cosine(const std::vector<GradientRecord>& groups) {
  if (groups.size() < 2) throw ContractError("grad_cosine: need at least two groups");
  const std::size_t n = groups.front().gradient.size();
  std::vector<double> norms;
  for (const auto& g : groups) {
    if (g.gradient.size() != n) throw DimensionError("grad_cosine: gradients over different parameter subsets");
    double s = 0.0;
    for (double v : g.gradient) s += v * v;
    norms.push_back(std::sqrt(s));
  }
  const std::size_t K = groups.size();
  CosineMatrix m(K, std::vector<std::optional<double>>(K));
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = i; j < K; ++j) {
      if (norms[i] == 0.0 || norms[j] == 0.0) continue;
      if (i == j) {
        m[i][j] = 1.0;
        continue;
      }
      double dot = 0.0;
      for (std::size_t t = 0; t < n; ++t) dot += groups[i].gradient[t] * groups[j].gradient[t];
      const double c = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
      m[i][j] = c;
      m[j][i] = c;
    }
  }
  return m;
}

// True when any defined off-diagonal entry is negative.
inline bool has_conflict(const CosineMatrix& m) {
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m.size(); ++j) {
      if (i != j && m[i][j] && *m[i][j] < 0.0) return true;
    }
  }
  return false;
}

// Share of measurements with at least one negative off-diagonal cosine.
inline double conflict_fraction(const std::vector<CosineMatrix>& measurements) {
  if (measurements.empty()) throw ContractError("conflict_fraction: no measurements");
  std::size_t conflicts = 0;
  for (const auto& m : measurements) conflicts += has_conflict(m) ? 1 : 0;
  return static_cast<double>(conflicts) / static_cast<double>(measurements.size());
}

// Mean of each defined off-diagonal pair across measurements.
inline CosineMatrix mean_cosine(const std::vector<CosineMatrix>& measurements) {
  if (measurements.empty()) throw ContractError("mean_cosine: no measurements");
  const std::size_t K = measurements.front().size();
  std::vector<std::vector<double>> sum(K, std::vector<double>(K, 0.0));
  std::vector<std::vector<int>> cnt(K, std::vector<int>(K, 0));
  for (const auto& m : measurements) {
    if (m.size() != K) throw DimensionError("mean_cosine: inconsistent group count");
    for (std::size_t i = 0; i < K; ++i) {
      for (std::size_t j = 0; j < K; ++j) {
        if (m[i][j]) {
          sum[i][j] += *m[i][j];
          ++cnt[i][j];
        }
      }
    }
  }
  CosineMatrix out(K, std::vector<std::optional<double>>(K));
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = 0; j < K; ++j) {
      if (cnt[i][j]) out[i][j] = sum[i][j] / cnt[i][j];
    }
  }
  return out;
}

}  // namespace moerl::analysis
