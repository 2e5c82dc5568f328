#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "moerl/errors.hpp"
#include "moerl/rl/config.hpp"

// Flat `key = value` run configuration. Lines starting with '#' are comments;
// string values may be double-quoted. Precedence: preset, then file, then
// command-line overrides.
namespace moerl::harness {

struct RunConfig {
  std::string preset = "desk";
  std::string out_dir = "runs/default";
  rl::TrainConfig train;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    T out{};
    if constexpr (std::is_same_v<T, double>) {
      out = std::stod(v, &used);
    } else if constexpr (std::is_signed_v<T>) {
      out = static_cast<T>(std::stoll(v, &used));
    } else {
      if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
      out = static_cast<T>(std::stoull(v, &used));
    }
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class T>
Field number(std::string key, T rl::TrainConfig::*m) {
  return {key,
          [m](const RunConfig& c) {
            if constexpr (std::is_same_v<T, double>) return fmt_double(c.train.*m);
            else return std::to_string(c.train.*m);
          },
          [key, m](RunConfig& c, const std::string& v) { c.train.*m = parse_number<T>(key, v); }};
}

inline Field boolean(std::string key, bool rl::TrainConfig::*m) {
  return {key, [m](const RunConfig& c) { return std::string(c.train.*m ? "true" : "false"); },
          [key, m](RunConfig& c, const std::string& v) { c.train.*m = parse_bool(key, v); }};
}

inline Field text(std::string key, std::string rl::TrainConfig::*m) {
  return {key, [m](const RunConfig& c) { return c.train.*m; },
          [m](RunConfig& c, const std::string& v) { c.train.*m = v; }};
}

}  // namespace detail

// Every configurable key, in echo order.
inline const std::vector<detail::Field>& fields() {
  using namespace detail;
  using TC = rl::TrainConfig;
  static const std::vector<Field> f = {
      {"preset", [](const RunConfig& c) { return c.preset; }, [](RunConfig& c, const std::string& v) { c.preset = v; }},
      {"out_dir", [](const RunConfig& c) { return c.out_dir; },
       [](RunConfig& c, const std::string& v) { c.out_dir = v; }},
      text("env", &TC::env),
      {"trunk", [](const RunConfig& c) { return rl::to_string(c.train.trunk); },
       [](RunConfig& c, const std::string& v) {
         if (v == "moe") c.train.trunk = rl::TrunkKind::MoE;
         else if (v == "mlp") c.train.trunk = rl::TrunkKind::MLP;
         else throw ConfigError("config key 'trunk': expected moe or mlp, got '" + v + "'");
       }},
      {"perturb", [](const RunConfig& c) { return rl::to_string(c.train.perturb); },
       [](RunConfig& c, const std::string& v) {
         if (v == "oriented") c.train.perturb = rl::PerturbMode::Oriented;
         else if (v == "random") c.train.perturb = rl::PerturbMode::Random;
         else if (v == "off") c.train.perturb = rl::PerturbMode::Off;
         else throw ConfigError("config key 'perturb': expected oriented, random or off, got '" + v + "'");
       }},
      number("seed", &TC::seed),
      number("total_frames", &TC::total_frames),
      number("latent_dim", &TC::latent_dim),
      number("hidden_dim", &TC::hidden_dim),
      number("num_experts", &TC::num_experts),
      number("top_k", &TC::top_k),
      number("expert_hidden", &TC::expert_hidden),
      number("mlp_hidden", &TC::mlp_hidden),
      number("conv_filters", &TC::conv_filters),
      number("lr", &TC::lr),
      number("actor_lr_scale", &TC::actor_lr_scale),
      number("lb_weight", &TC::lb_weight),
      number("critic_tau", &TC::critic_tau),
      number("gamma", &TC::gamma),
      number("nstep", &TC::nstep),
      number("batch_size", &TC::batch_size),
      number("update_every", &TC::update_every),
      number("replay_capacity", &TC::replay_capacity),
      number("action_repeat", &TC::action_repeat),
      number("seed_frames", &TC::seed_frames),
      number("exploration_steps", &TC::exploration_steps),
      number("aug_pad", &TC::aug_pad),
      number("stddev_init", &TC::stddev_init),
      number("stddev_final", &TC::stddev_final),
      number("stddev_horizon", &TC::stddev_horizon),
      number("stddev_clip", &TC::stddev_clip),
      number("alpha_min", &TC::alpha_min),
      number("alpha_max", &TC::alpha_max),
      number("perturb_rate", &TC::perturb_rate),
      number("perturb_frames", &TC::perturb_frames),
      number("top_buffer", &TC::top_buffer),
      boolean("perturb_encoder", &TC::perturb_encoder),
      boolean("perturb_actor", &TC::perturb_actor),
      boolean("perturb_critic", &TC::perturb_critic),
      number("candidate_eval_episodes", &TC::candidate_eval_episodes),
      number("dormant_tau", &TC::dormant_tau),
      number("dormant_probe", &TC::dormant_probe),
      boolean("dormant_include_encoder", &TC::dormant_include_encoder),
      number("eval_every_frames", &TC::eval_every_frames),
      number("eval_episodes", &TC::eval_episodes),
      number("snapshot_every_frames", &TC::snapshot_every_frames),
      number("grad_probe_every_frames", &TC::grad_probe_every_frames),
      number("grad_probe_batch", &TC::grad_probe_batch),
      text("grad_loss", &TC::grad_loss),
      text("grad_params", &TC::grad_params),
      number("usage_time_bins", &TC::usage_time_bins),
      number("stop_success_rate", &TC::stop_success_rate),
      boolean("save_checkpoint", &TC::save_checkpoint),
  };
  return f;
}

inline const detail::Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

// Full-size hyperparameters from the reference setup (Meta-World column).
inline rl::TrainConfig paper_preset() {
  rl::TrainConfig c;
  c.latent_dim = 50;
  c.hidden_dim = 1024;
  c.num_experts = 4;
  c.top_k = 2;
  c.expert_hidden = 256;
  c.conv_filters = 32;
  c.lr = 1e-4;
  c.actor_lr_scale = 1.0;
  c.lb_weight = 0.002;
  c.critic_tau = 0.01;
  c.update_every = 2;
  c.alpha_min = 0.2;
  c.alpha_max = 0.9;
  c.perturb_rate = 2.0;
  c.perturb_frames = 200000;
  c.top_buffer = 10;
  c.replay_capacity = 1000000;
  c.action_repeat = 2;
  c.seed_frames = 4000;
  c.nstep = 3;
  c.batch_size = 256;
  c.gamma = 0.99;
  c.exploration_steps = 2000;
  c.stddev_clip = 0.3;
  c.stddev_horizon = 3000000;
  c.total_frames = 3000000;
  c.eval_every_frames = 20000;
  c.snapshot_every_frames = 1000;
  return c;
}

inline rl::TrainConfig preset(const std::string& name) {
  if (name == "desk") return rl::TrainConfig{};
  if (name == "paper") return paper_preset();
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// Parses `key = value` lines; rejects malformed lines and unknown keys.
inline KeyValues parse_key_values(const std::string& text, const std::string& source = "config") {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(n) + ": expected 'key = value', got '" + t + "'");
    }
    std::string key = detail::trim(t.substr(0, eq));
    std::string val = detail::trim(t.substr(eq + 1));
    if (val.size() >= 2 && val.front() == '"' && val.back() == '"') val = val.substr(1, val.size() - 2);
    field(key);
    kv.emplace_back(std::move(key), std::move(val));
  }
  return kv;
}

// "key=value" command-line overrides.
inline KeyValues parse_overrides(const std::vector<std::string>& items) {
  KeyValues kv;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + item + "' is not key=value");
    std::string key = detail::trim(item.substr(0, eq));
    field(key);
    kv.emplace_back(key, detail::trim(item.substr(eq + 1)));
  }
  return kv;
}

// Preset first (from the last `preset` entry in either source), then file
// values, then overrides.
inline RunConfig resolve(const KeyValues& file, const KeyValues& overrides) {
  RunConfig c;
  for (const auto* src : {&file, &overrides}) {
    for (const auto& [k, v] : *src) {
      if (k == "preset") c.preset = v;
    }
  }
  c.train = preset(c.preset);
  for (const auto* src : {&file, &overrides}) {
    for (const auto& [k, v] : *src) {
      if (k != "preset") field(k).set(c, v);
    }
  }
  c.train.validate();
  return c;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

inline RunConfig load(const std::filesystem::path& path, const KeyValues& overrides = {}) {
  return resolve(parse_key_values(read_file(path), path.string()), overrides);
}

// Every key, one per line, in fields() order. Doubles use 17 significant
// digits, so parsing the echo reproduces the config exactly.
inline std::string echo(const RunConfig& c) {
  std::string out;
  for (const auto& f : fields()) {
    const std::string v = f.get(c);
    const bool quote = v.empty() || v.find_first_of(" #=") != std::string::npos;
    out += f.key + " = " + (quote ? "\"" + v + "\"" : v) + "\n";
  }
  return out;
}

}  // namespace moerl::harness
