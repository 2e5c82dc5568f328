#pragma once

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

#include "moerl/errors.hpp"
#include "moerl/rl/metrics.hpp"

namespace moerl::analysis {

struct UsageMatrix {
  std::string group_by;
  std::vector<std::string> labels;        // groups with at least one sample
  std::vector<std::vector<double>> rows;  // labels × num_experts, row-stochastic
  std::vector<std::size_t> counts;

  std::size_t dominant(std::size_t row) const {
    return static_cast<std::size_t>(std::max_element(rows.at(row).begin(), rows.at(row).end()) - rows[row].begin());
  }
};

// Aggregates the "usage" events of a run log over frames in [from, to].
// Groups never observed are dropped so every row sums to 1.
inline UsageMatrix usage_matrix(const std::vector<Json>& log, const std::string& group_by, long long from = 0,
                                long long to = std::numeric_limits<long long>::max()) {
  if (group_by != "task" && group_by != "stage" && group_by != "time") {
    throw ConfigError("usage_matrix: group_by must be task, stage or time, got '" + group_by + "'");
  }
  for (const auto& e : log) {
    if (e.value("event", "") == "header" && e.value("trunk", "") != "moe") {
      throw UnsupportedAnalysis("usage_matrix: run used an MLP trunk; expert usage is undefined");
    }
  }
  std::vector<std::string> labels;
  std::vector<std::vector<double>> sums;
  std::vector<std::size_t> counts;
  bool any = false;
  for (const auto& e : log) {
    if (e.value("event", "") != "usage") continue;
    const long long f = e.at("frame").get<long long>();
    if (f < from || f > to) continue;
    const auto& t = e.at("groups").at(group_by);
    auto l = t.at("labels").get<std::vector<std::string>>();
    auto s = t.at("sums").get<std::vector<std::vector<double>>>();
    auto c = t.at("counts").get<std::vector<std::size_t>>();
    if (!any) {
      labels = l;
      sums.assign(s.size(), std::vector<double>(s.empty() ? 0 : s[0].size(), 0.0));
      counts.assign(c.size(), 0);
      any = true;
    }
    if (l != labels) throw ContractError("usage_matrix: group labels change within the log");
    for (std::size_t g = 0; g < s.size(); ++g) {
      for (std::size_t j = 0; j < s[g].size(); ++j) sums[g][j] += s[g][j];
      counts[g] += c[g];
    }
  }
  if (!any) throw UnsupportedAnalysis("usage_matrix: log has no usage events");
  UsageMatrix m;
  m.group_by = group_by;
  for (std::size_t g = 0; g < labels.size(); ++g) {
    if (counts[g] == 0) continue;
    std::vector<double> row = sums[g];
    for (double& v : row) v /= static_cast<double>(counts[g]);
    m.labels.push_back(labels[g]);
    m.rows.push_back(std::move(row));
    m.counts.push_back(counts[g]);
  }
  return m;
}

}  // namespace moerl::analysis
