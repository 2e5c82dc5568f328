#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "moerl/analysis/cosine.hpp"
#include "moerl/envs/envs.hpp"
#include "moerl/rl/agent.hpp"
#include "moerl/rl/checkpoint.hpp"
#include "moerl/rl/evaluate.hpp"
#include "moerl/rl/metrics.hpp"

namespace moerl::rl {

// Independent RNG streams per purpose, so e.g. enabling gradient probes does
// not shift the exploration noise.
enum class Stream : std::uint64_t { Env = 1, Init, Act, Update, Perturb, Probe, Eval };

inline std::uint64_t derive_seed(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

struct EvalPoint {
  long long frame = 0;
  double mean_return = 0.0;
  double success_rate = 0.0;
};

struct TrainSummary {
  long long frames = 0;
  long long episodes = 0;
  long long updates = 0;
  long long perturbations = 0;
  std::vector<EvalPoint> evals;
  std::vector<analysis::CosineMatrix> grad_cosines;
  bool stopped_early = false;
};

inline Json usage_json(const UsageRecorder& u) {
  Json out = Json::object();
  for (const auto& [key, t] : u.tables) {
    out[key] = {{"labels", t.labels}, {"sums", t.sums}, {"counts", t.counts}};
  }
  return out;
}

inline Json cosine_json(const analysis::CosineMatrix& m) {
  Json rows = Json::array();
  for (const auto& r : m) {
    Json row = Json::array();
    for (const auto& v : r) row.push_back(v ? Json(*v) : Json(nullptr));
    rows.push_back(row);
  }
  return rows;
}

// Owns one agent, one replay buffer and one environment for a single run.
class Trainer {
 public:
  Trainer(TrainConfig cfg, MetricsLog* log, std::filesystem::path out_dir = {})
      : cfg_(std::move(cfg)),
        log_(log),
        out_dir_(std::move(out_dir)),
        spec_(envs::parse_env_spec(cfg_.env)),
        env_(envs::make(spec_, derive_seed(cfg_.seed, Stream::Env))),
        agent_(AgentSpec{env_->obs_shape(), spec_.action_dim}, cfg_, derive_seed(cfg_.seed, Stream::Init)),
        replay_(cfg_.replay_capacity, cfg_.nstep, cfg_.gamma),
        top_(cfg_.top_buffer),
        act_rng_(derive_seed(cfg_.seed, Stream::Act)),
        update_rng_(derive_seed(cfg_.seed, Stream::Update)),
        perturb_rng_(derive_seed(cfg_.seed, Stream::Perturb)),
        probe_rng_(derive_seed(cfg_.seed, Stream::Probe)),
        eval_seed_(derive_seed(cfg_.seed, Stream::Eval)) {
    if (cfg_.perturb != PerturbMode::Off) {
      perturb::PerturbConfig pc{cfg_.alpha_min, cfg_.alpha_max, cfg_.perturb_rate, cfg_.perturb_frames};
      pc.validate();
    }
  }

  Agent& agent() { return agent_; }
  const envs::EnvSpec& env_spec() const { return spec_; }
  const perturb::TopAgentBuffer& top_buffer() const { return top_; }
  const ReplayBuffer& replay() const { return replay_; }
  std::uint64_t eval_seed() const { return eval_seed_; }

  TrainSummary run() {
    write_header();
    try {
      loop();
    } catch (const std::exception& e) {
      emit("abort", {{"error", e.what()}});
      throw;
    }
    if (cfg_.save_checkpoint && !out_dir_.empty() && summary_.frames > 0) {
      save_checkpoint(out_dir_ / "checkpoint.bin", agent_, top_);
    }
    return summary_;
  }

  EvalResult evaluate_now(UsageRecorder* usage = nullptr) {
    return evaluate(agent_, spec_, eval_seed_, cfg_.eval_episodes, cfg_.action_repeat, usage);
  }

 private:
  void emit(const std::string& event, Json fields = Json::object()) {
    if (log_) log_->write(event, summary_.frames, std::move(fields));
  }

  void write_header() {
    const std::size_t mlp_hidden = cfg_.trunk == TrunkKind::MLP && cfg_.mlp_hidden == 0 ? matched_mlp_hidden(cfg_)
                                                                                        : cfg_.mlp_hidden;
    emit("header",
         {{"env", spec_.to_string()},
          {"trunk", to_string(cfg_.trunk)},
          {"perturb", to_string(cfg_.perturb)},
          {"seed", cfg_.seed},
          {"total_frames", cfg_.total_frames},
          {"arch", arch_descriptor(agent_)},
          {"trunk_params", agent_.actor_trunk_params()},
          {"mlp_hidden", mlp_hidden},
          {"num_experts", cfg_.trunk == TrunkKind::MoE ? cfg_.num_experts : 0},
          {"num_groups", env_->num_groups()},
          {"protocol",
           {{"perturbed_sets", {{"encoder", cfg_.perturb_encoder}, {"actor", cfg_.perturb_actor},
                                {"critic", cfg_.perturb_critic}, {"targets", false}}},
            {"optimizer_after_perturb", "moments of perturbed parameters reset"},
            {"dormant_layers", cfg_.dormant_include_encoder ? "encoder+actor" : "actor"},
            {"grad_probe", {{"loss", cfg_.grad_loss}, {"params", cfg_.grad_params},
                            {"batch", cfg_.grad_probe_batch}, {"source", "replay transitions of each group"}}}}}});
  }

  void loop() {
    if (cfg_.total_frames == 0) return;
    next_eval_ = cfg_.eval_every_frames;
    next_snapshot_ = cfg_.snapshot_every_frames;
    next_perturb_ = cfg_.perturb_frames;
    next_probe_ = cfg_.grad_probe_every_frames;
    std::uniform_real_distribution<double> uniform(-1.0, 1.0);
    std::vector<double> obs = env_->reset();
    double ep_return = 0.0;
    bool ep_success = false;
    bool ep_policy = true;  // every action of the episode came from the policy
    long long ep_steps = 0, agent_steps = 0;

    while (summary_.frames < cfg_.total_frames) {
      std::vector<double> a;
      if (agent_steps < cfg_.exploration_steps) {
        a.resize(spec_.action_dim);
        for (double& v : a) v = uniform(act_rng_);
        ep_policy = false;
      } else {
        a = agent_.act(obs, summary_.frames, true, act_rng_);
      }
      Transition t;
      t.obs = obs;
      t.action = a;
      t.group = env_->group();
      for (int k = 0; k < cfg_.action_repeat && summary_.frames < cfg_.total_frames; ++k) {
        envs::StepResult s = env_->step(a);
        ++summary_.frames;
        t.reward += s.reward;
        ep_success = ep_success || s.info.success;
        t.done = s.done;
        t.truncated = s.truncated;
        obs = std::move(s.obs);
        if (s.done || s.truncated) break;
      }
      t.next_obs = obs;
      ep_return += t.reward;
      ++ep_steps;
      ++agent_steps;
      const bool episode_over = t.done || t.truncated;
      replay_.add(std::move(t));

      if (summary_.frames >= cfg_.seed_frames && agent_steps % static_cast<long long>(cfg_.update_every) == 0) {
        Batch batch = replay_.sample(cfg_.batch_size, update_rng_);
        if (batch.size() > 0) {
          last_update_ = agent_.update(batch, summary_.frames, update_rng_);
          ++summary_.updates;
        }
      }
      if (summary_.frames >= next_snapshot_) {
        snapshot();
        while (next_snapshot_ <= summary_.frames) next_snapshot_ += cfg_.snapshot_every_frames;
      }
      if (cfg_.grad_probe_every_frames > 0 && summary_.frames >= next_probe_) {
        if (summary_.updates > 0) grad_probe();
        while (next_probe_ <= summary_.frames) next_probe_ += cfg_.grad_probe_every_frames;
      }
      if (episode_over) {
        ++summary_.episodes;
        emit("episode", {{"episode", summary_.episodes}, {"return", ep_return}, {"success", ep_success},
                         {"length", ep_steps}});
        // warm-up episodes act uniformly at random, so their return says nothing about the weights
        if (cfg_.perturb == PerturbMode::Oriented && ep_policy) top_.maybe_insert(agent_.perturbed_weights(), ep_return);
        if (cfg_.perturb != PerturbMode::Off && summary_.frames >= next_perturb_) {
          perturb_now();
          while (next_perturb_ <= summary_.frames) next_perturb_ += cfg_.perturb_frames;
        }
        obs = env_->reset();
        ep_return = 0.0;
        ep_success = false;
        ep_policy = true;
        ep_steps = 0;
      }
      if (summary_.frames >= next_eval_ || summary_.frames >= cfg_.total_frames) {
        if (run_eval()) {
          summary_.stopped_early = true;
          emit("stop", {{"reason", "stop_success_rate reached"}});
          break;
        }
        while (next_eval_ <= summary_.frames) next_eval_ += cfg_.eval_every_frames;
      }
    }
    emit("end", {{"episodes", summary_.episodes}, {"updates", summary_.updates},
                 {"perturbations", summary_.perturbations}, {"clamped_actions", env_->clamped_actions()}});
  }

  // Returns true when the early-stop threshold is reached.
  bool run_eval() {
    std::optional<UsageRecorder> usage;
    if (cfg_.trunk == TrunkKind::MoE) usage.emplace(*env_, cfg_.num_experts, cfg_.usage_time_bins);
    EvalResult r = evaluate_now(usage ? &*usage : nullptr);
    summary_.evals.push_back({summary_.frames, r.mean_return, r.success_rate});
    emit("eval", {{"mean_return", r.mean_return}, {"std_return", r.std_return}, {"success_rate", r.success_rate},
                  {"returns", r.returns}});
    if (usage) emit("usage", {{"groups", usage_json(*usage)}});
    return cfg_.stop_success_rate > 0.0 && r.success_rate >= cfg_.stop_success_rate;
  }

  double current_beta() {
    const Tensor probe = replay_.sample_obs(cfg_.dormant_probe, probe_rng_);
    return dormant::dormant_ratio(agent_, probe, cfg_.dormant_tau).ratio;
  }

  void snapshot() {
    Json f = {{"beta", current_beta()},
              {"stddev", agent_.stddev(summary_.frames)},
              {"updates", summary_.updates},
              {"critic_loss", last_update_.critic_loss},
              {"actor_loss", last_update_.actor_loss},
              {"q_mean", last_update_.q_mean}};
    if (cfg_.trunk == TrunkKind::MoE) {
      f["lb_loss"] = last_update_.lb_loss;
      f["usage_entropy"] = -last_update_.lb_loss;
    }
    emit("snapshot", std::move(f));
  }

  void perturb_now() {
    const perturb::PerturbConfig pc{cfg_.alpha_min, cfg_.alpha_max, cfg_.perturb_rate, cfg_.perturb_frames};
    const double beta = current_beta();
    const double alpha = perturb::perturb_factor(beta, pc);
    const auto source =
        cfg_.perturb == PerturbMode::Oriented ? perturb::CandidateSource::Oriented : perturb::CandidateSource::Random;
    const bool fallback = source == perturb::CandidateSource::Oriented && top_.empty();
    perturb::Initializer init = [this](Rng& rng) { return agent_.fresh_perturbed_weights(rng); };
    const perturb::WeightVector phi = perturb::sample_candidate(source, top_, init, perturb_rng_);
    Json f = {{"beta", beta}, {"alpha", alpha}, {"source", perturb::to_string(source)}, {"fallback", fallback},
              {"buffer_size", top_.size()}};
    if (cfg_.candidate_eval_episodes > 0) {
      Agent clone = agent_;
      clone.load_perturbed(phi);
      EvalResult r = evaluate(clone, spec_, eval_seed_, cfg_.candidate_eval_episodes, cfg_.action_repeat);
      f["candidate_return"] = r.mean_return;
      f["candidate_success_rate"] = r.success_rate;
    }
    agent_.load_perturbed(perturb::apply_perturbation(agent_.perturbed_weights(), phi, alpha));
    agent_.reset_perturbed_optimizer_state();
    ++summary_.perturbations;
    emit("perturb", std::move(f));
  }

  void grad_probe() {
    std::vector<analysis::GradientRecord> records;
    const std::size_t min_count = std::max<std::size_t>(8, cfg_.grad_probe_batch / 8);
    for (int g = 0; g < env_->num_groups(); ++g) {
      if (replay_.count_group(g) < min_count) continue;
      Batch b = replay_.sample_group(cfg_.grad_probe_batch, g, probe_rng_);
      if (b.size() == 0) continue;
      records.push_back({std::to_string(g), agent_.probe_gradient(b, cfg_.grad_loss, cfg_.grad_params,
                                                                  summary_.frames, probe_rng_),
                         summary_.updates});
    }
    if (records.size() < 2) return;
    const analysis::CosineMatrix m = analysis::grad_cosine(records);
    summary_.grad_cosines.push_back(m);
    std::vector<std::string> groups;
    for (const auto& r : records) groups.push_back(r.group);
    emit("grad_cosine", {{"groups", groups}, {"matrix", cosine_json(m)}, {"conflict", analysis::has_conflict(m)}});
  }

  TrainConfig cfg_;
  MetricsLog* log_;
  std::filesystem::path out_dir_;
  envs::EnvSpec spec_;
  std::unique_ptr<envs::Env> env_;
  Agent agent_;
  ReplayBuffer replay_;
  perturb::TopAgentBuffer top_;
  Rng act_rng_, update_rng_, perturb_rng_, probe_rng_;
  std::uint64_t eval_seed_;
  TrainSummary summary_;
  UpdateInfo last_update_;
  long long next_eval_ = 0, next_snapshot_ = 0, next_perturb_ = 0, next_probe_ = 0;
};

}  // namespace moerl::rl
