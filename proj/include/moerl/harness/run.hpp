#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "moerl/analysis/efficiency.hpp"
#include "moerl/analysis/plot.hpp"
#include "moerl/harness/config.hpp"
#include "moerl/rl/trainer.hpp"

namespace moerl::harness {

namespace fs = std::filesystem;

inline constexpr const char* kConfigFile = "config.toml";
inline constexpr const char* kMetricsFile = "metrics.jsonl";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";

// MOERL_OUT_ROOT prefixes relative output directories.
inline fs::path output_root() {
  const char* root = std::getenv("MOERL_OUT_ROOT");
  return root && *root ? fs::path(root) : fs::path();
}

inline fs::path resolve_out_dir(const std::string& out_dir) {
  fs::path p(out_dir);
  return p.is_relative() && !output_root().empty() ? output_root() / p : p;
}

// MOERL_THREADS bounds concurrent runs in the ablation driver.
inline std::size_t thread_count() {
  const char* t = std::getenv("MOERL_THREADS");
  if (!t || !*t) return 1;
  const long v = std::strtol(t, nullptr, 10);
  return v > 0 ? static_cast<std::size_t>(v) : 1;
}

struct RunOutcome {
  fs::path dir;
  rl::TrainSummary summary;
};

// Writes the config echo, then trains with metrics streamed to the run dir.
inline RunOutcome run_training(const RunConfig& cfg) {
  const fs::path dir = resolve_out_dir(cfg.out_dir);
  fs::create_directories(dir);
  analysis::write_text(dir / kConfigFile, echo(cfg));
  MetricsLog log(dir / kMetricsFile);
  rl::Trainer trainer(cfg.train, &log, dir);
  return {dir, trainer.run()};
}

// A trained agent reconstructed from a run directory.
struct LoadedRun {
  RunConfig config;
  envs::EnvSpec env;
  std::unique_ptr<rl::Agent> agent;
  perturb::TopAgentBuffer buffer;
  std::uint64_t eval_seed = 0;
};

inline LoadedRun load_run(const fs::path& dir) {
  LoadedRun r{load(dir / kConfigFile), {}, nullptr, perturb::TopAgentBuffer(1), 0};
  r.env = envs::parse_env_spec(r.config.train.env);
  auto probe_env = envs::make(r.env, 0);
  r.agent = std::make_unique<rl::Agent>(rl::AgentSpec{probe_env->obs_shape(), r.env.action_dim}, r.config.train,
                                        rl::derive_seed(r.config.train.seed, rl::Stream::Init));
  const rl::Checkpoint ck = rl::load_checkpoint(dir / kCheckpointFile);
  rl::restore(*r.agent, ck);
  r.buffer = rl::restore_buffer(ck, r.config.train.top_buffer);
  r.eval_seed = rl::derive_seed(r.config.train.seed, rl::Stream::Eval);
  return r;
}

// ---- ablation ----

struct Variant {
  std::string name;
  rl::TrunkKind trunk;
  rl::PerturbMode perturb;
};

inline const std::vector<Variant>& ablation_variants() {
  static const std::vector<Variant> v = {
      {"MENTOR", rl::TrunkKind::MoE, rl::PerturbMode::Oriented},
      {"MENTOR_w/o_TP", rl::TrunkKind::MoE, rl::PerturbMode::Random},
      {"MENTOR_w/o_MoE", rl::TrunkKind::MLP, rl::PerturbMode::Oriented},
      // dropping TP falls back to random candidates, with or without MoE
      {"MENTOR_w/o_TP_MoE", rl::TrunkKind::MLP, rl::PerturbMode::Random},
  };
  return v;
}

// Directory-safe form of a variant name.
inline std::string slug(const std::string& name) {
  std::string s = name;
  std::replace(s.begin(), s.end(), '/', '-');
  return s;
}

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  fs::path dir;
  std::optional<rl::TrainSummary> summary;
  std::string error;  // non-empty when the run failed
};

struct AblationReport {
  std::string metric;
  double threshold = 0.0;
  std::vector<AblationRun> runs;
  // median time-to-threshold per variant; nullopt when the median run never crossed
  std::vector<std::pair<std::string, std::optional<double>>> median_time;
  analysis::EfficiencyReport efficiency;  // over the three non-baseline variants
};

inline analysis::Curve eval_curve(const std::string& method, const rl::TrainSummary& s, const std::string& metric) {
  analysis::Curve c{method, {}};
  for (const auto& e : s.evals) {
    c.points.push_back({static_cast<double>(e.frame), metric == "mean_return" ? e.mean_return : e.success_rate});
  }
  return c;
}

// Median over seeds with non-crossing runs counted as +∞.
inline std::optional<double> median_time(std::vector<std::optional<double>> times) {
  if (times.empty()) return std::nullopt;
  std::vector<double> v;
  for (const auto& t : times) v.push_back(t ? *t : std::numeric_limits<double>::infinity());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  const double m = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  if (!std::isfinite(m)) return std::nullopt;
  return m;
}

inline AblationReport run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                                   const std::string& metric, double threshold, const fs::path& root) {
  if (metric != "success_rate" && metric != "mean_return") {
    throw ConfigError("ablation metric must be success_rate or mean_return");
  }
  AblationReport rep;
  rep.metric = metric;
  rep.threshold = threshold;
  for (const auto& v : ablation_variants()) {
    for (auto seed : seeds) {
      rep.runs.push_back({v.name, seed, root / slug(v.name) / ("seed" + std::to_string(seed)), std::nullopt, ""});
    }
  }
  std::mutex mu;
  std::size_t next = 0;
  auto worker = [&]() {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= rep.runs.size()) return;
        i = next++;
      }
      AblationRun& r = rep.runs[i];
      RunConfig cfg = base;
      const auto& v = *std::find_if(ablation_variants().begin(), ablation_variants().end(),
                                    [&](const Variant& x) { return x.name == r.variant; });
      cfg.train.trunk = v.trunk;
      cfg.train.perturb = v.perturb;
      cfg.train.seed = r.seed;
      cfg.out_dir = r.dir.string();
      try {
        r.summary = run_training(cfg).summary;
      } catch (const std::exception& e) {
        r.error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(thread_count(), rep.runs.size()); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  // The efficiency report covers the three methods compared in the reference
  // table; the no-MoE, no-perturbation baseline is reported by median only.
  std::vector<std::pair<std::string, std::optional<double>>> compared;
  for (const auto& v : ablation_variants()) {
    std::vector<std::optional<double>> times;
    for (const auto& r : rep.runs) {
      if (r.variant != v.name || !r.summary) continue;
      times.push_back(analysis::time_to_threshold(eval_curve(v.name, *r.summary, metric), threshold));
    }
    const auto m = median_time(times);
    rep.median_time.emplace_back(v.name, m);
    if (v.name != "MENTOR_w/o_TP_MoE") compared.emplace_back(v.name, m);
  }
  rep.efficiency = analysis::efficiency_from_times(compared, threshold);
  return rep;
}

inline Json ablation_json(const AblationReport& rep) {
  Json j;
  j["metric"] = rep.metric;
  j["threshold"] = rep.threshold;
  Json runs = Json::array();
  for (const auto& r : rep.runs) {
    Json x = {{"variant", r.variant}, {"seed", r.seed}, {"dir", r.dir.string()}};
    if (r.summary) {
      const auto t = analysis::time_to_threshold(eval_curve(r.variant, *r.summary, rep.metric), rep.threshold);
      x["time_to_threshold"] = t ? Json(*t) : Json(nullptr);
      x["frames"] = r.summary->frames;
    } else {
      x["error"] = r.error;
    }
    runs.push_back(x);
  }
  j["runs"] = runs;
  Json med = Json::object();
  for (const auto& [name, t] : rep.median_time) med[name] = t ? Json(*t) : Json(nullptr);
  j["median_time"] = med;
  Json eff = Json::object();
  eff["standard_time"] = rep.efficiency.standard_time ? Json(*rep.efficiency.standard_time) : Json(nullptr);
  for (const auto& m : rep.efficiency.methods) eff[m.method] = m.ratio ? Json(*m.ratio) : Json(nullptr);
  j["normalized_efficiency"] = eff;
  return j;
}

}  // namespace moerl::harness
