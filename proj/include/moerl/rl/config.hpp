#pragma once

#include <cstdint>
#include <string>

#include "moerl/errors.hpp"

namespace moerl::rl {

enum class TrunkKind { MoE, MLP };
enum class PerturbMode { Oriented, Random, Off };

inline std::string to_string(TrunkKind t) { return t == TrunkKind::MoE ? "moe" : "mlp"; }
inline std::string to_string(PerturbMode p) {
  switch (p) {
    case PerturbMode::Oriented: return "oriented";
    case PerturbMode::Random: return "random";
    case PerturbMode::Off: return "off";
  }
  return "off";
}

// Every knob of a training run. Defaults are the desk-scale preset; the
// "paper" preset in harness/config.hpp restores the full-size values.
struct TrainConfig {
  // run
  std::string env = "sparse_goal";
  TrunkKind trunk = TrunkKind::MoE;
  PerturbMode perturb = PerturbMode::Oriented;
  std::uint64_t seed = 1;
  long long total_frames = 40000;

  // architecture
  std::size_t latent_dim = 50;
  std::size_t hidden_dim = 64;     // critic hidden width and trunk output width
  std::size_t num_experts = 4;
  std::size_t top_k = 2;
  std::size_t expert_hidden = 32;
  std::size_t mlp_hidden = 0;      // 0: match the MoE trunk's parameter count
  std::size_t conv_filters = 8;

  // optimization
  double lr = 1e-4;
  double actor_lr_scale = 1.0;
  double lb_weight = 0.002;
  double critic_tau = 0.01;
  double gamma = 0.99;
  std::size_t nstep = 3;
  std::size_t batch_size = 128;
  std::size_t update_every = 2;    // agent steps per gradient update

  // replay / interaction
  std::size_t replay_capacity = 100000;
  int action_repeat = 2;
  long long seed_frames = 2000;
  long long exploration_steps = 1000;  // agent steps with uniform random actions
  std::size_t aug_pad = 1;             // random-shift padding for image observations

  // exploration noise
  double stddev_init = 1.0;
  double stddev_final = 0.1;
  double stddev_horizon = 100000;  // frames
  double stddev_clip = 0.3;

  // perturbation
  double alpha_min = 0.2;
  double alpha_max = 0.9;
  double perturb_rate = 2.0;
  long long perturb_frames = 20000;
  std::size_t top_buffer = 10;
  bool perturb_encoder = true;
  bool perturb_actor = true;
  bool perturb_critic = true;
  std::size_t candidate_eval_episodes = 1;

  // dormant ratio
  double dormant_tau = 0.025;
  std::size_t dormant_probe = 256;
  bool dormant_include_encoder = false;

  // evaluation / logging
  long long eval_every_frames = 2000;
  std::size_t eval_episodes = 10;
  long long snapshot_every_frames = 1000;
  long long grad_probe_every_frames = 0;  // 0 disables gradient-conflict probes
  std::size_t grad_probe_batch = 128;
  std::string grad_loss = "actor";        // actor | critic
  std::string grad_params = "trunk";      // trunk | experts (trunk without router) | actor
  std::size_t usage_time_bins = 10;
  double stop_success_rate = 0.0;         // > 0: stop once an eval reaches this success rate
  bool save_checkpoint = true;

  void validate() const {
    if (total_frames < 0) throw ConfigError("total_frames must be >= 0");
    if (num_experts == 0 || top_k == 0 || top_k > num_experts) throw ConfigError("top_k must be in [1, num_experts]");
    if (latent_dim == 0 || hidden_dim == 0 || expert_hidden == 0) throw ConfigError("layer widths must be positive");
    if (!(lr > 0.0) || !(actor_lr_scale > 0.0)) throw ConfigError("learning rates must be positive");
    if (lb_weight < 0.0) throw ConfigError("lb_weight must be >= 0");
    if (!(critic_tau >= 0.0 && critic_tau <= 1.0)) throw ConfigError("critic_tau must be in [0, 1]");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in [0, 1]");
    if (nstep == 0 || batch_size == 0 || update_every == 0) throw ConfigError("nstep, batch_size, update_every must be positive");
    if (replay_capacity == 0) throw ConfigError("replay_capacity must be positive");
    if (action_repeat <= 0) throw ConfigError("action_repeat must be positive");
    if (seed_frames < 0 || exploration_steps < 0) throw ConfigError("seed_frames and exploration_steps must be >= 0");
    if (!(stddev_init >= stddev_final && stddev_final >= 0.0)) throw ConfigError("stddev schedule must be non-increasing and >= 0");
    if (stddev_clip < 0.0) throw ConfigError("stddev_clip must be >= 0");
    if (!(0.0 <= alpha_min && alpha_min <= alpha_max && alpha_max <= 1.0)) {
      throw ConfigError("require 0 <= alpha_min <= alpha_max <= 1");
    }
    if (!(perturb_rate > 0.0)) throw ConfigError("perturb_rate must be positive");
    if (perturb_frames <= 0) throw ConfigError("perturb_frames must be positive");
    if (top_buffer == 0) throw ConfigError("top_buffer must be positive");
    if (dormant_tau < 0.0) throw ConfigError("dormant_tau must be >= 0");
    if (dormant_probe == 0) throw ConfigError("dormant_probe must be positive");
    if (eval_every_frames <= 0 || eval_episodes == 0) throw ConfigError("eval cadence must be positive");
    if (snapshot_every_frames <= 0) throw ConfigError("snapshot_every_frames must be positive");
    if (grad_probe_every_frames < 0) throw ConfigError("grad_probe_every_frames must be >= 0");
    if (grad_loss != "actor" && grad_loss != "critic") throw ConfigError("grad_loss must be actor or critic");
    if (grad_params != "trunk" && grad_params != "experts" && grad_params != "actor") {
      throw ConfigError("grad_params must be trunk, experts or actor");
    }
    if (usage_time_bins == 0) throw ConfigError("usage_time_bins must be positive");
  }
};

}  // namespace moerl::rl
