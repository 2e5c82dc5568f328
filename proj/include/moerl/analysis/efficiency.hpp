#pragma once

#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "moerl/errors.hpp"

namespace moerl::analysis {

struct CurvePoint {
  double time = 0.0;   // frames, or any monotone training-time measure
  double value = 0.0;  // e.g. eval success rate or return
};

struct Curve {
  std::string method;
  std::vector<CurvePoint> points;  // sorted by time
};

// First time the curve reaches `threshold`; nullopt when it never does.
inline std::optional<double> time_to_threshold(const Curve& c, double threshold) {
  for (const auto& p : c.points) {
    if (p.value >= threshold) return p.time;
  }
  return std::nullopt;
}

struct MethodEfficiency {
  std::string method;
  std::optional<double> time;   // T_m; nullopt when incomparable
  std::optional<double> ratio;  // T_m / T_standard
  bool comparable() const { return time.has_value(); }
};

struct EfficiencyReport {
  double threshold = 0.0;
  std::optional<double> standard_time;  // max T_m over comparable methods
  std::vector<MethodEfficiency> methods;

  const MethodEfficiency& at(const std::string& method) const {
    for (const auto& m : methods) {
      if (m.method == method) return m;
    }
    throw ContractError("efficiency report has no method '" + method + "'");
  }
};

// The final performance of the worst method: every method reaches it by
// construction, so all curves are comparable at this threshold.
inline double worst_final_value(const std::vector<Curve>& curves) {
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& c : curves) {
    if (c.points.empty()) throw ContractError("efficiency: curve '" + c.method + "' is empty");
    worst = std::min(worst, c.points.back().value);
  }
  return worst;
}

// T_standard = max_m T_m over methods with a time; ratio_m = T_m / T_standard.
// Methods without a time are marked incomparable.
inline EfficiencyReport efficiency_from_times(const std::vector<std::pair<std::string, std::optional<double>>>& times,
                                              double threshold) {
  if (times.empty()) throw ContractError("efficiency: no methods");
  EfficiencyReport r;
  r.threshold = threshold;
  for (const auto& [method, t] : times) {
    if (t && (!r.standard_time || *t > *r.standard_time)) r.standard_time = t;
    r.methods.push_back({method, t, std::nullopt});
  }
  for (auto& m : r.methods) {
    if (!m.time) continue;
    // every comparable method crossing at time 0 counts as equally efficient
    m.ratio = *r.standard_time > 0.0 ? *m.time / *r.standard_time : 1.0;
  }
  return r;
}

inline EfficiencyReport efficiency(const std::vector<Curve>& curves, double threshold) {
  if (curves.empty()) throw ContractError("efficiency: no curves");
  std::vector<std::pair<std::string, std::optional<double>>> times;
  for (const auto& c : curves) times.emplace_back(c.method, time_to_threshold(c, threshold));
  return efficiency_from_times(times, threshold);
}

inline EfficiencyReport efficiency(const std::vector<Curve>& curves) {
  return efficiency(curves, worst_final_value(curves));
}

// Mean over tasks of 1 − a_i / b_i: the average share of training time that
// method a saves relative to method b, from per-task normalized times.
inline double mean_time_saving(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || a.size() != b.size()) throw DimensionError("mean_time_saving: need equal, non-empty task lists");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(b[i] > 0.0)) throw ContractError("mean_time_saving: reference times must be positive");
    s += 1.0 - a[i] / b[i];
  }
  return s / static_cast<double>(a.size());
}

}  // namespace moerl::analysis
