#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "moerl/autodiff/augment.hpp"
#include "moerl/autodiff/optim.hpp"
#include "moerl/dormant/dormant.hpp"
#include "moerl/moe/moe.hpp"
#include "moerl/nn/layers.hpp"
#include "moerl/perturb/perturb.hpp"
#include "moerl/rl/config.hpp"
#include "moerl/rl/replay.hpp"

namespace moerl::rl {

// Observation layout: {d} for vectors, {C, H, W} for images.
struct AgentSpec {
  std::vector<std::size_t> obs_shape;
  std::size_t action_dim = 1;

  bool image() const { return obs_shape.size() == 3; }
  std::size_t obs_size() const {
    std::size_t n = 1;
    for (auto d : obs_shape) n *= d;
    return n;
  }
};

// Image: two 3×3 stride-2 ReLU convolutions, then linear + tanh to the latent.
// Vector: linear + tanh.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const AgentSpec& spec, const TrainConfig& cfg, Rng& rng) : spec_(spec) {
    std::size_t flat = spec.obs_size();
    if (spec.image()) {
      conv1_ = nn::Conv2d("encoder.conv1", spec.obs_shape[0], cfg.conv_filters, 3, 2, rng);
      conv2_ = nn::Conv2d("encoder.conv2", cfg.conv_filters, cfg.conv_filters, 3, 2, rng);
      const std::size_t h1 = (spec.obs_shape[1] - 3) / 2 + 1, w1 = (spec.obs_shape[2] - 3) / 2 + 1;
      if (h1 < 3 || w1 < 3) throw ConfigError("encoder: image too small for two 3x3 stride-2 convolutions");
      const std::size_t h2 = (h1 - 3) / 2 + 1, w2 = (w1 - 3) / 2 + 1;
      flat = cfg.conv_filters * h2 * w2;
    }
    proj_ = nn::Linear("encoder.proj", flat, cfg.latent_dim, rng);
  }

  // `activations`, when given, receives the post-activation layers for dormancy probes.
  Var forward(Tape& tape, const Tensor& obs, std::vector<dormant::LayerActivations>* activations = nullptr) {
    const std::size_t B = obs.dim(0);
    if (obs.rank() != 2 || obs.dim(1) != spec_.obs_size()) {
      throw ContractError("encoder: observation batch " + shape_str(obs.shape()) + " does not match obs size " +
                          std::to_string(spec_.obs_size()));
    }
    Var x;
    if (spec_.image()) {
      Var img = tape.constant(obs.reshaped(Shape{B, spec_.obs_shape[0], spec_.obs_shape[1], spec_.obs_shape[2]}));
      img = ops::add_scalar(tape, img, -0.5);
      Var h1 = ops::relu(tape, conv1_.forward(tape, img));
      Var h2 = ops::relu(tape, conv2_.forward(tape, h1));
      if (activations) {
        activations->push_back({"encoder.conv1", channels_as_columns(tape.value(h1))});
        activations->push_back({"encoder.conv2", channels_as_columns(tape.value(h2))});
      }
      const Tensor& v = tape.value(h2);
      x = ops::reshape(tape, h2, Shape{B, v.size() / B});
    } else {
      x = tape.constant(obs);
    }
    Var z = ops::tanh(tape, proj_.forward(tape, x));
    if (activations) activations->push_back({"encoder.proj", tape.value(z)});
    return z;
  }

  std::size_t num_params() const { return conv1_.num_params() + conv2_.num_params() + proj_.num_params(); }
  void collect(nn::ParamList& out) {
    if (spec_.image()) {
      conv1_.collect(out);
      conv2_.collect(out);
    }
    proj_.collect(out);
  }

 private:
  // [B, F, H, W] -> [B·H·W, F]: every spatial position is a sample of each channel.
  static Tensor channels_as_columns(const Tensor& t) {
    const std::size_t B = t.dim(0), F = t.dim(1), P = t.dim(2) * t.dim(3);
    Tensor out(Shape{B * P, F});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t f = 0; f < F; ++f) {
        for (std::size_t p = 0; p < P; ++p) out(b * P + p, f) = t[(b * F + f) * P + p];
      }
    }
    return out;
  }

  AgentSpec spec_;
  nn::Conv2d conv1_, conv2_;
  nn::Linear proj_;
};

// Hidden width of an MLP trunk whose parameter count matches the MoE trunk.
inline std::size_t matched_mlp_hidden(const TrainConfig& cfg) {
  const double L = static_cast<double>(cfg.latent_dim), D = static_cast<double>(cfg.hidden_dim);
  const double N = static_cast<double>(cfg.num_experts), He = static_cast<double>(cfg.expert_hidden);
  const double moe_params = (L * N + N) + N * (L * He + He + He * D + D);
  const double h = std::round((moe_params - D) / (L + 1.0 + D));
  return static_cast<std::size_t>(std::max(1.0, h));
}

inline std::size_t moe_trunk_params(const TrainConfig& cfg) {
  const std::size_t L = cfg.latent_dim, D = cfg.hidden_dim, N = cfg.num_experts, He = cfg.expert_hidden;
  return (L * N + N) + N * (L * He + He + He * D + D);
}

inline std::size_t mlp_trunk_params(const TrainConfig& cfg, std::size_t hidden) {
  return cfg.latent_dim * hidden + hidden + hidden * cfg.hidden_dim + cfg.hidden_dim;
}

struct TrunkOutput {
  Var features;                         // post-ReLU trunk output [B × hidden_dim]
  std::optional<Var> full_probs;        // MoE only
  std::vector<moe::GateResult> gates;   // MoE only
};

// Either an MoE layer or a Linear-ReLU-Linear MLP, followed by a ReLU. Only
// this block differs between the two trunk kinds.
class ActorTrunk {
 public:
  ActorTrunk() = default;
  ActorTrunk(const TrainConfig& cfg, Rng& rng) : kind_(cfg.trunk) {
    if (kind_ == TrunkKind::MoE) {
      moe::MoEConfig mc;
      mc.input_dim = cfg.latent_dim;
      mc.hidden_dim = cfg.expert_hidden;
      mc.output_dim = cfg.hidden_dim;
      mc.num_experts = cfg.num_experts;
      mc.top_k = cfg.top_k;
      moe_ = moe::MoELayer(mc, rng, "actor.moe");
    } else {
      const std::size_t h = cfg.mlp_hidden ? cfg.mlp_hidden : matched_mlp_hidden(cfg);
      fc1_ = nn::Linear("actor.mlp.fc1", cfg.latent_dim, h, rng);
      fc2_ = nn::Linear("actor.mlp.fc2", h, cfg.hidden_dim, rng);
    }
  }

  TrunkKind kind() const { return kind_; }
  moe::MoELayer* moe_layer() { return kind_ == TrunkKind::MoE ? &moe_ : nullptr; }

  TrunkOutput forward(Tape& tape, Var z, std::vector<dormant::LayerActivations>* activations = nullptr) {
    TrunkOutput out;
    Var pre;
    if (kind_ == TrunkKind::MoE) {
      auto r = moe_.forward(tape, z);
      pre = r.output;
      out.full_probs = r.full_probs;
      out.gates = std::move(r.gates);
      if (activations) {
        auto hidden = moe_.expert_hidden(tape, z);
        for (std::size_t i = 0; i < hidden.size(); ++i) {
          activations->push_back({"actor.moe.expert" + std::to_string(i) + ".hidden", std::move(hidden[i])});
        }
      }
    } else {
      Var h = ops::relu(tape, fc1_.forward(tape, z));
      if (activations) activations->push_back({"actor.mlp.hidden", tape.value(h)});
      pre = fc2_.forward(tape, h);
    }
    out.features = ops::relu(tape, pre);
    if (activations) activations->push_back({"actor.trunk.out", tape.value(out.features)});
    return out;
  }

  std::size_t num_params() const {
    return kind_ == TrunkKind::MoE ? moe_.num_params() : fc1_.num_params() + fc2_.num_params();
  }
  void collect(nn::ParamList& out) {
    if (kind_ == TrunkKind::MoE) {
      moe_.collect(out);
    } else {
      fc1_.collect(out);
      fc2_.collect(out);
    }
  }

 private:
  TrunkKind kind_ = TrunkKind::MoE;
  moe::MoELayer moe_;
  nn::Linear fc1_, fc2_;
};

// Q(z, a): three linear layers with ReLU between.
class Critic {
 public:
  Critic() = default;
  Critic(const std::string& name, std::size_t latent, std::size_t action_dim, std::size_t hidden, Rng& rng)
      : fc1_(name + ".fc1", latent + action_dim, hidden, rng),
        fc2_(name + ".fc2", hidden, hidden, rng),
        fc3_(name + ".fc3", hidden, 1, rng) {}

  Var forward(Tape& tape, Var z, Var a, bool frozen = false) {
    Var x = ops::concat_cols(tape, z, a);
    Var h = ops::relu(tape, fc1_.forward(tape, x, frozen));
    h = ops::relu(tape, fc2_.forward(tape, h, frozen));
    return fc3_.forward(tape, h, frozen);
  }

  // ReLU inputs of both hidden layers, for kink-distance checks.
  std::vector<Tensor> preactivations(const Tensor& z, const Tensor& a) {
    Tape tape(false);
    Var pre1 = fc1_.forward(tape, ops::concat_cols(tape, tape.constant(z), tape.constant(a)), true);
    Var pre2 = fc2_.forward(tape, ops::relu(tape, pre1), true);
    return {tape.value(pre1), tape.value(pre2)};
  }

  std::size_t num_params() const { return fc1_.num_params() + fc2_.num_params() + fc3_.num_params(); }
  void collect(nn::ParamList& out) {
    fc1_.collect(out);
    fc2_.collect(out);
    fc3_.collect(out);
  }

 private:
  nn::Linear fc1_, fc2_, fc3_;
};

struct UpdateInfo {
  double critic_loss = 0.0;
  double q_mean = 0.0;
  double target_mean = 0.0;
  double actor_loss = 0.0;
  double lb_loss = 0.0;
};

struct ActorLoss {
  Var total;
  Var policy;                   // −mean Q1
  std::optional<Var> balance;   // load-balancing term before weighting
};

// Encoder, actor (trunk + tanh action head), twin critics and their targets,
// with one Adam for encoder+critics and one for the actor.
class Agent {
 public:
  Agent(AgentSpec spec, const TrainConfig& cfg, std::uint64_t init_seed)
      : spec_(std::move(spec)), cfg_(cfg), init_seed_(init_seed) {
    cfg_.validate();
    // One init stream per module, so switching the trunk leaves every other
    // module's initial weights unchanged.
    Rng enc_rng = module_rng(init_seed, 1), trunk_rng = module_rng(init_seed, 2);
    Rng head_rng = module_rng(init_seed, 3), critic_rng = module_rng(init_seed, 4);
    encoder_ = Encoder(spec_, cfg_, enc_rng);
    trunk_ = ActorTrunk(cfg_, trunk_rng);
    head_ = nn::Linear("actor.head", cfg_.hidden_dim, spec_.action_dim, head_rng);
    q1_ = Critic("critic.q1", cfg_.latent_dim, spec_.action_dim, cfg_.hidden_dim, critic_rng);
    q2_ = Critic("critic.q2", cfg_.latent_dim, spec_.action_dim, cfg_.hidden_dim, critic_rng);
    q1_target_ = q1_;
    q2_target_ = q2_;
    rename_targets();
    critic_opt_ = Adam(AdamConfig{cfg_.lr});
    actor_opt_ = Adam(AdamConfig{cfg_.lr * cfg_.actor_lr_scale});
  }

  const AgentSpec& spec() const { return spec_; }
  const TrainConfig& config() const { return cfg_; }
  ActorTrunk& trunk() { return trunk_; }
  Critic& critic1() { return q1_; }

  // ---- parameter groups ----
  nn::ParamList encoder_params() { return collect(encoder_); }
  nn::ParamList trunk_params() { return collect(trunk_); }
  nn::ParamList actor_params() {
    nn::ParamList p = trunk_params();
    head_.collect(p);
    return p;
  }
  nn::ParamList critic_params() {
    nn::ParamList p = collect(q1_);
    q2_.collect(p);
    return p;
  }
  nn::ParamList target_params() {
    nn::ParamList p = collect(q1_target_);
    q2_target_.collect(p);
    return p;
  }
  nn::ParamList all_params() {
    nn::ParamList p = encoder_params();
    for (auto* x : actor_params()) p.push_back(x);
    for (auto* x : critic_params()) p.push_back(x);
    for (auto* x : target_params()) p.push_back(x);
    return p;
  }
  nn::ParamList perturbed_params() {
    nn::ParamList p;
    if (cfg_.perturb_encoder) p = encoder_params();
    if (cfg_.perturb_actor) {
      for (auto* x : actor_params()) p.push_back(x);
    }
    if (cfg_.perturb_critic) {
      for (auto* x : critic_params()) p.push_back(x);
    }
    return p;
  }

  std::size_t actor_trunk_params() const { return trunk_.num_params(); }

  // ---- forward pieces ----
  Var encode(Tape& tape, const Tensor& obs, std::vector<dormant::LayerActivations>* acts = nullptr) {
    return encoder_.forward(tape, obs, acts);
  }

  struct PolicyOutput {
    Var action;  // tanh head, in [−1, 1]
    TrunkOutput trunk;
  };

  PolicyOutput policy(Tape& tape, Var z, std::vector<dormant::LayerActivations>* acts = nullptr) {
    PolicyOutput out;
    out.trunk = trunk_.forward(tape, z, acts);
    out.action = ops::tanh(tape, head_.forward(tape, out.trunk.features));
    return out;
  }

  // Deterministic policy output, optionally perturbed by clipped Gaussian
  // noise with the scheduled stddev, then clamped to [−1, 1].
  std::vector<double> act(std::span<const double> obs, long long frame, bool explore, Rng& rng,
                          moe::GateResult* gate = nullptr) {
    if (obs.size() != spec_.obs_size()) {
      throw ContractError("act: observation has " + std::to_string(obs.size()) + " values, expected " +
                          std::to_string(spec_.obs_size()));
    }
    Tape tape(false);
    Var z = encode(tape, Tensor(Shape{1, obs.size()}, std::vector<double>(obs.begin(), obs.end())));
    PolicyOutput p = policy(tape, z);
    std::vector<double> a = tape.value(p.action).storage();
    if (gate && !p.trunk.gates.empty()) *gate = p.trunk.gates.front();
    if (explore) {
      const double sd = stddev(frame);
      std::normal_distribution<double> normal(0.0, 1.0);
      for (double& v : a) {
        const double noise = std::clamp(sd * normal(rng), -cfg_.stddev_clip, cfg_.stddev_clip);
        v = std::clamp(v + noise, -1.0, 1.0);
      }
    }
    return a;
  }

  double stddev(long long frame) const {
    return LinearSchedule{cfg_.stddev_init, cfg_.stddev_final, cfg_.stddev_horizon}(static_cast<double>(frame));
  }

  // −mean Q1(z, π(z)) + λ·(−H(p)). Critic weights enter as constants.
  ActorLoss actor_loss(Tape& tape, Var z, double lb_weight) {
    PolicyOutput p = policy(tape, z);
    Var q = q1_.forward(tape, z, p.action, /*frozen=*/true);
    ActorLoss loss;
    loss.policy = ops::scale(tape, ops::mean(tape, q), -1.0);
    loss.total = loss.policy;
    if (p.trunk.full_probs && lb_weight > 0.0) {
      loss.balance = moe::load_balance_loss(tape, *p.trunk.full_probs);
      loss.total = ops::add(tape, loss.total, ops::scale(tape, *loss.balance, lb_weight));
    }
    return loss;
  }

  // n-step clipped double-Q targets: r + γ^k·min(Q̄1, Q̄2)(z', π(z') + ε).
  std::vector<double> critic_targets(const Batch& batch, const Tensor& next_obs, long long frame, Rng& rng) {
    Tape tape(false);
    Var zn = encode(tape, next_obs);
    PolicyOutput p = policy(tape, zn);
    Tensor a = tape.value(p.action);
    const double sd = stddev(frame);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : a.storage()) {
      v = std::clamp(v + std::clamp(sd * normal(rng), -cfg_.stddev_clip, cfg_.stddev_clip), -1.0, 1.0);
    }
    Var av = tape.constant(std::move(a));
    Var t1 = q1_target_.forward(tape, zn, av);
    Var t2 = q2_target_.forward(tape, zn, av);
    const Tensor& v1 = tape.value(t1);
    const Tensor& v2 = tape.value(t2);
    std::vector<double> y(batch.size());
    for (std::size_t b = 0; b < y.size(); ++b) {
      y[b] = batch.reward[b] + batch.discount[b] * std::min(v1[b], v2[b]);
    }
    return y;
  }

  UpdateInfo update(const Batch& batch, long long frame, Rng& rng) {
    UpdateInfo info;
    if (batch.size() == 0) return info;
    Tensor obs = augment(batch.obs, rng);
    Tensor next_obs = augment(batch.next_obs, rng);
    const std::vector<double> y = critic_targets(batch, next_obs, frame, rng);

    // critic step (encoder trained here only)
    nn::ParamList cparams = encoder_params();
    for (auto* p : critic_params()) cparams.push_back(p);
    zero_grads(cparams);
    Tape tape;
    Var z = encode(tape, obs);
    Var a = tape.constant(batch.action);
    Var yv = tape.constant(Tensor(Shape{batch.size(), 1}, y));
    Var l1 = ops::mean(tape, ops::square(tape, ops::sub(tape, q1_.forward(tape, z, a), yv)));
    Var l2 = ops::mean(tape, ops::square(tape, ops::sub(tape, q2_.forward(tape, z, a), yv)));
    Var closs = ops::add(tape, l1, l2);
    tape.backward(closs);
    critic_opt_.step(cparams);
    info.critic_loss = tape.value(closs).item();
    for (double v : y) info.target_mean += v;
    info.target_mean /= static_cast<double>(y.size());
    const Tensor latent = tape.value(z);
    tape.clear();

    // actor step on the detached latent
    nn::ParamList aparams = actor_params();
    zero_grads(aparams);
    Var zd = tape.constant(latent);
    ActorLoss al = actor_loss(tape, zd, cfg_.trunk == TrunkKind::MoE ? cfg_.lb_weight : 0.0);
    tape.backward(al.total);
    actor_opt_.step(aparams);
    info.actor_loss = tape.value(al.total).item();
    info.q_mean = -tape.value(al.policy).item();
    if (al.balance) info.lb_loss = tape.value(*al.balance).item();

    soft_update(cfg_.critic_tau);
    return info;
  }

  // target ← (1 − rate)·target + rate·online
  void soft_update(double rate) {
    nn::ParamList online = critic_params();
    nn::ParamList target = target_params();
    for (std::size_t i = 0; i < online.size(); ++i) {
      auto& t = target[i]->value.storage();
      const auto& o = online[i]->value.storage();
      for (std::size_t j = 0; j < t.size(); ++j) t[j] = (1.0 - rate) * t[j] + rate * o[j];
    }
  }

  // Flat gradient of a per-group loss, used by the gradient-conflict probe.
  std::vector<double> probe_gradient(const Batch& batch, const std::string& loss_kind, const std::string& param_set,
                                     long long frame, Rng& rng) {
    nn::ParamList params;
    if (loss_kind == "critic") {
      params = critic_params();
    } else if (param_set == "actor") {
      params = actor_params();
    } else {
      for (auto* p : trunk_params()) {
        if (param_set != "experts" || p->name.find(".router.") == std::string::npos) params.push_back(p);
      }
    }
    nn::ParamList all = all_params();
    std::vector<std::vector<double>> saved;
    for (auto* p : all) saved.push_back(p->grad.storage());
    zero_grads(all);
    Tape tape;
    if (loss_kind == "critic") {
      const std::vector<double> y = critic_targets(batch, batch.next_obs, frame, rng);
      Var z = tape.constant(tape_free_latent(batch.obs));
      Var a = tape.constant(batch.action);
      Var yv = tape.constant(Tensor(Shape{batch.size(), 1}, y));
      Var l1 = ops::mean(tape, ops::square(tape, ops::sub(tape, q1_.forward(tape, z, a), yv)));
      Var l2 = ops::mean(tape, ops::square(tape, ops::sub(tape, q2_.forward(tape, z, a), yv)));
      tape.backward(ops::add(tape, l1, l2));
    } else {
      Var z = tape.constant(tape_free_latent(batch.obs));
      tape.backward(actor_loss(tape, z, 0.0).total);
    }
    std::vector<double> g;
    for (auto* p : params) g.insert(g.end(), p->grad.storage().begin(), p->grad.storage().end());
    for (std::size_t i = 0; i < all.size(); ++i) all[i]->grad.storage() = saved[i];
    return g;
  }

  // ---- perturbation support ----
  perturb::WeightVector perturbed_weights() { return perturb::flatten(perturbed_params()); }
  void load_perturbed(const perturb::WeightVector& w) { perturb::unflatten(w, perturbed_params()); }

  // Weights of a freshly initialized agent with the same architecture.
  perturb::WeightVector fresh_perturbed_weights(Rng& rng) const {
    Agent fresh(spec_, cfg_, rng());
    return fresh.perturbed_weights();
  }

  // Zero the Adam moments of every perturbed parameter.
  void reset_perturbed_optimizer_state() {
    const std::size_t enc = encoder_params().size();
    const std::size_t crit = critic_params().size();
    if (cfg_.perturb_encoder) {
      for (std::size_t i = 0; i < enc; ++i) critic_opt_.reset_slot(i);
    }
    if (cfg_.perturb_critic) {
      for (std::size_t i = 0; i < crit; ++i) critic_opt_.reset_slot(enc + i);
    }
    if (cfg_.perturb_actor) actor_opt_.reset_all();
  }

  // ---- dormancy ----
  std::vector<dormant::LayerActivations> hidden_activations(const Tensor& probe) {
    Tape tape(false);
    std::vector<dormant::LayerActivations> enc_acts, acts;
    Var z = encode(tape, probe, cfg_.dormant_include_encoder ? &enc_acts : nullptr);
    policy(tape, z, &acts);
    if (cfg_.dormant_include_encoder) acts.insert(acts.begin(), enc_acts.begin(), enc_acts.end());
    return acts;
  }

 private:
  template <class M>
  static nn::ParamList collect(M& module) {
    nn::ParamList p;
    module.collect(p);
    return p;
  }

  static Rng module_rng(std::uint64_t seed, std::uint32_t module) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), module};
    return Rng(seq);
  }

  Tensor tape_free_latent(const Tensor& obs) {
    Tape tape(false);
    return tape.value(encode(tape, obs));
  }

  Tensor augment(const Tensor& obs, Rng& rng) const {
    if (!spec_.image() || cfg_.aug_pad == 0) return obs;
    const std::size_t B = obs.dim(0);
    Tensor img = obs.reshaped(Shape{B, spec_.obs_shape[0], spec_.obs_shape[1], spec_.obs_shape[2]});
    return random_shift(img, cfg_.aug_pad, rng).reshaped(Shape{B, spec_.obs_size()});
  }

  void rename_targets() {
    for (auto* p : target_params()) p->name = "target." + p->name;
  }

  AgentSpec spec_;
  TrainConfig cfg_;
  std::uint64_t init_seed_;
  Encoder encoder_;
  ActorTrunk trunk_;
  nn::Linear head_;
  Critic q1_, q2_, q1_target_, q2_target_;
  Adam critic_opt_, actor_opt_;
};

}  // namespace moerl::rl
