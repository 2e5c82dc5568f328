#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "moerl/autodiff/init.hpp"
#include "moerl/autodiff/tape.hpp"

namespace moerl::perturb {

struct Slice {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  Shape shape;

  bool operator==(const Slice&) const = default;
};

// Maps contiguous ranges of a flat weight vector back to named parameters.
struct Layout {
  std::vector<Slice> slices;

  std::size_t total() const { return slices.empty() ? 0 : slices.back().offset + slices.back().size; }
  bool operator==(const Layout&) const = default;
};

struct WeightVector {
  Layout layout;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
};

inline Layout layout_of(std::span<Parameter* const> params) {
  Layout layout;
  std::size_t offset = 0;
  for (const Parameter* p : params) {
    layout.slices.push_back(Slice{p->name, offset, p->value.size(), p->value.shape()});
    offset += p->value.size();
  }
  return layout;
}

inline WeightVector flatten(std::span<Parameter* const> params) {
  WeightVector w;
  w.layout = layout_of(params);
  w.values.reserve(w.layout.total());
  for (const Parameter* p : params) w.values.insert(w.values.end(), p->value.storage().begin(), p->value.storage().end());
  return w;
}

inline void check_same_layout(const Layout& a, const Layout& b, const char* what) {
  if (!(a == b)) throw ContractError(std::string(what) + ": weight layout mismatch");
}

inline void unflatten(const WeightVector& w, std::span<Parameter* const> params) {
  check_same_layout(w.layout, layout_of(params), "unflatten");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Slice& s = w.layout.slices[i];
    std::copy_n(w.values.begin() + static_cast<std::ptrdiff_t>(s.offset), s.size, params[i]->value.storage().begin());
  }
}

struct PerturbConfig {
  double alpha_min = 0.2;
  double alpha_max = 0.9;
  double rate = 2.0;  // μ
  long long interval_frames = 200000;  // T_p

  void validate() const {
    if (!(0.0 <= alpha_min && alpha_min <= alpha_max && alpha_max <= 1.0)) {
      throw ConfigError("perturb: require 0 <= alpha_min <= alpha_max <= 1");
    }
    if (!(rate > 0.0)) throw ConfigError("perturb: rate must be positive");
    if (interval_frames <= 0) throw ConfigError("perturb: interval_frames must be positive");
  }
};

// α = clip(1 − μβ, α_min, α_max)
inline double perturb_factor(double beta, const PerturbConfig& cfg) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ContractError("perturb_factor: beta must lie in [0, 1]");
  return std::clamp(1.0 - cfg.rate * beta, cfg.alpha_min, cfg.alpha_max);
}

// θ' = α·θ + (1 − α)·φ
inline WeightVector apply_perturbation(const WeightVector& theta, const WeightVector& phi, double alpha) {
  check_same_layout(theta.layout, phi.layout, "apply_perturbation");
  if (theta.values.size() != phi.values.size()) throw ContractError("apply_perturbation: length mismatch");
  WeightVector out;
  out.layout = theta.layout;
  out.values.resize(theta.values.size());
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = alpha * theta.values[i] + (1.0 - alpha) * phi.values[i];
  }
  return out;
}

// S_top: at most `capacity` snapshots with the highest episode rewards seen.
class TopAgentBuffer {
 public:
  struct Entry {
    WeightVector weights;
    double reward = 0.0;
  };

  explicit TopAgentBuffer(std::size_t capacity = 10) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("top-agent buffer capacity must be positive");
  }

  // Appends while not full; afterwards replaces the minimum-reward entry only
  // when `reward` is strictly greater. The snapshot is stored by value.
  bool maybe_insert(const WeightVector& theta, double reward) {
    if (!entries_.empty()) check_same_layout(entries_.front().weights.layout, theta.layout, "TopAgentBuffer");
    if (entries_.size() < capacity_) {
      entries_.push_back(Entry{theta, reward});
      return true;
    }
    auto worst = std::min_element(entries_.begin(), entries_.end(),
                                  [](const Entry& a, const Entry& b) { return a.reward < b.reward; });
    if (reward > worst->reward) {
      *worst = Entry{theta, reward};
      return true;
    }
    return false;
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

  std::vector<double> rewards() const {
    std::vector<double> r;
    for (const auto& e : entries_) r.push_back(e.reward);
    return r;
  }

 private:
  std::size_t capacity_;
  std::vector<Entry> entries_;
};

struct OrientedDistribution {
  Layout layout;
  std::vector<double> mean;
  std::vector<double> stddev;  // population standard deviation
};

// Per-coordinate mean and population std over the buffered weights; nullopt
// for an empty buffer (callers fall back to random candidates).
inline std::optional<OrientedDistribution> oriented_distribution(const TopAgentBuffer& buffer) {
  if (buffer.empty()) return std::nullopt;
  const auto& entries = buffer.entries();
  OrientedDistribution d;
  d.layout = entries.front().weights.layout;
  const std::size_t n = entries.front().weights.size();
  const double count = static_cast<double>(entries.size());
  d.mean.assign(n, 0.0);
  d.stddev.assign(n, 0.0);
  for (const auto& e : entries) {
    for (std::size_t i = 0; i < n; ++i) d.mean[i] += e.weights.values[i];
  }
  for (double& m : d.mean) m /= count;
  for (const auto& e : entries) {
    for (std::size_t i = 0; i < n; ++i) {
      const double dv = e.weights.values[i] - d.mean[i];
      d.stddev[i] += dv * dv;
    }
  }
  for (double& s : d.stddev) s = std::sqrt(s / count);
  return d;
}

enum class CandidateSource { Oriented, Random };

inline std::string to_string(CandidateSource s) { return s == CandidateSource::Oriented ? "oriented" : "random"; }

// Fresh weights from the architecture's initializer.
using Initializer = std::function<WeightVector(Rng&)>;

inline WeightVector sample_oriented(const OrientedDistribution& d, Rng& rng) {
  WeightVector phi;
  phi.layout = d.layout;
  phi.values.resize(d.mean.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < phi.values.size(); ++i) {
    // Draw unconditionally so the stream position does not depend on σ.
    const double eps = normal(rng);
    phi.values[i] = d.stddev[i] == 0.0 ? d.mean[i] : d.mean[i] + d.stddev[i] * eps;
  }
  return phi;
}

// φ ~ N(μ_top, σ_top) for the oriented source, φ ~ initializer otherwise. An
// empty buffer makes the oriented source fall back to the initializer.
inline WeightVector sample_candidate(CandidateSource source, const TopAgentBuffer& buffer, const Initializer& init,
                                     Rng& rng) {
  if (source == CandidateSource::Oriented) {
    if (auto d = oriented_distribution(buffer)) return sample_oriented(*d, rng);
  }
  return init(rng);
}

}  // namespace moerl::perturb
