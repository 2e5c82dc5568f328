#pragma once

#include <vector>

#include "moerl/perturb/perturb.hpp"
#include "moerl/rl/agent.hpp"
#include "moerl/rl/evaluate.hpp"

namespace moerl::analysis {

struct CandidateResult {
  std::size_t index = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double success_rate = 0.0;
};

struct CandidateSpec {
  perturb::CandidateSource source = perturb::CandidateSource::Oriented;
  std::size_t count = 10;
  std::size_t episodes = 5;
  int action_repeat = 2;
  std::uint64_t sample_seed = 0;  // stream for drawing φ
  std::uint64_t env_seed = 0;     // every candidate sees the same episode starts
};

// Loads each sampled φ into a clone of `agent` and rolls it out without
// exploration noise. The agent passed in is only copied, never modified.
inline std::vector<CandidateResult> eval_candidates(const rl::Agent& agent, const perturb::TopAgentBuffer& buffer,
                                                    const envs::EnvSpec& env, const CandidateSpec& spec) {
  Rng rng(spec.sample_seed);
  const perturb::Initializer init = [&agent](Rng& r) { return agent.fresh_perturbed_weights(r); };
  std::vector<CandidateResult> out;
  for (std::size_t i = 0; i < spec.count; ++i) {
    const perturb::WeightVector phi = perturb::sample_candidate(spec.source, buffer, init, rng);
    rl::Agent clone = agent;
    clone.load_perturbed(phi);
    const rl::EvalResult r = rl::evaluate(clone, env, spec.env_seed, spec.episodes, spec.action_repeat);
    out.push_back({i, r.mean_return, r.std_return, r.success_rate});
  }
  return out;
}

inline double mean_return(const std::vector<CandidateResult>& results) {
  if (results.empty()) throw ContractError("mean_return: no candidates");
  double s = 0.0;
  for (const auto& r : results) s += r.mean_return;
  return s / static_cast<double>(results.size());
}

}  // namespace moerl::analysis
