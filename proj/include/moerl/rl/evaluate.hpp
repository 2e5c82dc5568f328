#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "moerl/envs/envs.hpp"
#include "moerl/rl/agent.hpp"

namespace moerl::rl {

// Running sums of gate weights per group label, for one grouping.
struct UsageTable {
  std::vector<std::string> labels;
  std::vector<std::vector<double>> sums;  // labels × num_experts
  std::vector<std::size_t> counts;

  UsageTable() = default;
  UsageTable(std::vector<std::string> l, std::size_t num_experts)
      : labels(std::move(l)), sums(labels.size(), std::vector<double>(num_experts, 0.0)), counts(labels.size(), 0) {}

  void add(std::size_t group, const moe::GateResult& g) {
    for (std::size_t j = 0; j < g.indices.size(); ++j) sums.at(group).at(g.indices[j]) += g.weights[j];
    ++counts.at(group);
  }
};

// Usage grouped by task id, stage name and episode time bin.
struct UsageRecorder {
  std::map<std::string, UsageTable> tables;

  UsageRecorder(const envs::Env& env, std::size_t num_experts, std::size_t time_bins) {
    std::vector<std::string> tasks, bins;
    for (int t = 0; t < std::max(1, env.spec().num_tasks); ++t) tasks.push_back(std::to_string(t));
    for (std::size_t b = 0; b < time_bins; ++b) bins.push_back(std::to_string(b));
    tables["task"] = UsageTable(tasks, num_experts);
    tables["stage"] = UsageTable(env.stages(), num_experts);
    tables["time"] = UsageTable(bins, num_experts);
  }

  void record(const envs::Env& env, const moe::GateResult& g) {
    tables["task"].add(static_cast<std::size_t>(std::max(0, env.task())), g);
    const auto stages = env.stages();
    const auto it = std::find(stages.begin(), stages.end(), env.stage());
    tables["stage"].add(static_cast<std::size_t>(it - stages.begin()), g);
    const std::size_t bins = tables["time"].labels.size();
    const std::size_t b = std::min(bins - 1, static_cast<std::size_t>(env.steps()) * bins /
                                                 static_cast<std::size_t>(env.spec().episode_len));
    tables["time"].add(b, g);
  }
};

struct EvalResult {
  std::vector<double> returns;
  std::vector<bool> successes;
  double mean_return = 0.0;
  double std_return = 0.0;
  double success_rate = 0.0;
};

inline void summarize(EvalResult& r) {
  const double n = static_cast<double>(r.returns.size());
  if (n == 0) return;
  double s = 0.0, succ = 0.0;
  for (std::size_t i = 0; i < r.returns.size(); ++i) {
    s += r.returns[i];
    succ += r.successes[i] ? 1.0 : 0.0;
  }
  r.mean_return = s / n;
  r.success_rate = succ / n;
  double v = 0.0;
  for (double x : r.returns) v += (x - r.mean_return) * (x - r.mean_return);
  r.std_return = std::sqrt(v / n);
}

// Noise-free rollouts on a freshly seeded environment, so repeated calls with
// the same seed see the same episode starts. Never touches agent weights.
inline EvalResult evaluate(Agent& agent, const envs::EnvSpec& spec, std::uint64_t env_seed, std::size_t episodes,
                           int action_repeat, UsageRecorder* usage = nullptr) {
  auto env = envs::make(spec, env_seed);
  if (env->obs_size() != agent.spec().obs_size() || spec.action_dim != agent.spec().action_dim) {
    throw ContractError("evaluate: environment " + spec.to_string() + " does not match the agent architecture");
  }
  Rng unused(0);
  EvalResult r;
  for (std::size_t e = 0; e < episodes; ++e) {
    std::vector<double> obs = env->reset();
    double ret = 0.0;
    bool success = false, over = false;
    while (!over) {
      moe::GateResult gate;
      const std::vector<double> a = agent.act(obs, 0, false, unused, usage ? &gate : nullptr);
      if (usage && !gate.indices.empty()) usage->record(*env, gate);
      for (int k = 0; k < action_repeat && !over; ++k) {
        envs::StepResult s = env->step(a);
        ret += s.reward;
        success = success || s.info.success;
        over = s.done || s.truncated;
        obs = std::move(s.obs);
      }
    }
    r.returns.push_back(ret);
    r.successes.push_back(success);
  }
  summarize(r);
  return r;
}

}  // namespace moerl::rl
