// moerl: train, evaluate, ablate, plot and analyze runs.
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "moerl/analysis/candidates.hpp"
#include "moerl/harness/figures.hpp"

namespace {

using namespace moerl;
namespace fs = std::filesystem;

harness::KeyValues shorthand(const std::string& env, const std::string& trunk, const std::string& perturb,
                             const std::string& seed, const std::string& out, const std::string& frames) {
  harness::KeyValues kv;
  if (!env.empty()) kv.emplace_back("env", env);
  if (!trunk.empty()) kv.emplace_back("trunk", trunk);
  if (!perturb.empty()) kv.emplace_back("perturb", perturb);
  if (!seed.empty()) kv.emplace_back("seed", seed);
  if (!out.empty()) kv.emplace_back("out_dir", out);
  if (!frames.empty()) kv.emplace_back("total_frames", frames);
  return kv;
}

harness::RunConfig build_config(const std::string& path, const harness::KeyValues& flags,
                                const std::vector<std::string>& sets) {
  harness::KeyValues file;
  if (!path.empty()) file = harness::parse_key_values(harness::read_file(path), path);
  harness::KeyValues over = flags;
  for (auto& kv : harness::parse_overrides(sets)) over.push_back(kv);
  return harness::resolve(file, over);
}

Json candidates_json(const std::vector<analysis::CandidateResult>& rs) {
  Json a = Json::array();
  for (const auto& r : rs) {
    a.push_back({{"index", r.index}, {"mean_return", r.mean_return}, {"std_return", r.std_return},
                 {"success_rate", r.success_rate}});
  }
  return a;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixture-of-experts actor-critic with task-oriented perturbation"};
  app.require_subcommand(1);

  // shared shorthand flags
  std::string config, env, trunk, perturb, seed, out, frames;
  std::vector<std::string> sets;
  auto add_run_flags = [&](CLI::App* c) {
    c->add_option("--config", config, "key = value config file");
    c->add_option("--env", env, "environment spec, e.g. sparse_goal or opposing:k=4");
    c->add_option("--trunk", trunk, "moe | mlp");
    c->add_option("--perturb", perturb, "oriented | random | off");
    c->add_option("--seed", seed, "run seed");
    c->add_option("--out", out, "output directory");
    c->add_option("--frames", frames, "total environment frames");
    c->add_option("--set", sets, "key=value override (repeatable)");
  };

  auto* train = app.add_subcommand("train", "train one agent");
  add_run_flags(train);
  bool print_config = false;
  train->add_flag("--print-config", print_config, "print the resolved config and exit");

  auto* eval = app.add_subcommand("eval", "evaluate a trained run without exploration noise");
  std::string run_dir;
  std::size_t episodes = 10;
  eval->add_option("run", run_dir, "run directory")->required();
  eval->add_option("--episodes", episodes, "evaluation episodes");

  auto* ablate = app.add_subcommand("ablate", "run the four ablation variants per seed");
  add_run_flags(ablate);
  std::vector<std::uint64_t> seeds{1, 2, 3, 4};
  std::string metric = "success_rate";
  double threshold = 0.8;
  ablate->add_option("--seeds", seeds, "seeds")->delimiter(',');
  ablate->add_option("--metric", metric, "success_rate | mean_return");
  ablate->add_option("--threshold", threshold, "time-to-threshold level");

  auto* plot = app.add_subcommand("plot", "render a figure from run directories");
  std::vector<std::string> plot_runs;
  std::string figure, plot_out = "plots";
  plot->add_option("runs", plot_runs, "run directories")->required();
  plot->add_option("--figure", figure, "figure name")->required();
  plot->add_option("--out", plot_out, "output directory");

  auto* analyze = app.add_subcommand("analyze", "summarize a run: conflicts, usage, candidates");
  std::string analyze_dir;
  std::size_t n_candidates = 10, cand_episodes = 5;
  analyze->add_option("run", analyze_dir, "run directory")->required();
  analyze->add_option("--candidates", n_candidates, "candidates per source (0 skips)");
  analyze->add_option("--episodes", cand_episodes, "episodes per candidate");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      auto cfg = build_config(config, shorthand(env, trunk, perturb, seed, out, frames), sets);
      if (print_config) {
        std::cout << harness::echo(cfg);
        return 0;
      }
      const auto r = harness::run_training(cfg);
      std::cout << "run dir: " << r.dir.string() << "\nframes: " << r.summary.frames
                << "  episodes: " << r.summary.episodes << "  updates: " << r.summary.updates
                << "  perturbations: " << r.summary.perturbations << '\n';
      if (!r.summary.evals.empty()) {
        const auto& e = r.summary.evals.back();
        std::cout << "final eval: return " << e.mean_return << "  success " << e.success_rate << '\n';
      }
      return 0;
    }
    if (*eval) {
      auto run = harness::load_run(run_dir);
      const auto r = rl::evaluate(*run.agent, run.env, run.eval_seed, episodes, run.config.train.action_repeat);
      Json j = {{"run", run_dir}, {"episodes", episodes}, {"mean_return", r.mean_return},
                {"std_return", r.std_return}, {"success_rate", r.success_rate}, {"returns", r.returns}};
      std::cout << j.dump(2) << '\n';
      return 0;
    }
    if (*ablate) {
      auto cfg = build_config(config, shorthand(env, trunk, perturb, "", "", frames), sets);
      const fs::path root = harness::resolve_out_dir(out.empty() ? "ablation" : out);
      const auto rep = harness::run_ablation(cfg, seeds, metric, threshold, root);
      const Json j = harness::ablation_json(rep);
      analysis::write_text(root / "ablation.json", j.dump(2) + "\n");
      std::vector<std::vector<std::string>> rows;
      for (const auto& [name, t] : rep.median_time) {
        std::string ratio = "";
        for (const auto& m : rep.efficiency.methods) {
          if (m.method == name && m.ratio) ratio = analysis::fmt(*m.ratio, 6);
        }
        rows.push_back({name, t ? analysis::fmt(*t, 10) : "", ratio});
      }
      analysis::write_text(root / "ablation_efficiency.csv",
                           analysis::csv({"method", "median_time_to_threshold", "normalized_efficiency"}, rows));
      std::cout << j.dump(2) << '\n';
      int failed = 0;
      for (const auto& r : rep.runs) {
        if (!r.error.empty()) {
          std::cerr << "failed: " << r.variant << " seed " << r.seed << ": " << r.error << '\n';
          ++failed;
        }
      }
      return failed ? 1 : 0;
    }
    if (*plot) {
      std::vector<fs::path> dirs(plot_runs.begin(), plot_runs.end());
      const auto f = harness::plot_figure(dirs, figure, plot_out);
      std::cout << f.svg.string() << '\n' << f.csv.string() << '\n';
      return 0;
    }
    if (*analyze) {
      const fs::path dir(analyze_dir);
      const auto log = read_jsonl(dir / harness::kMetricsFile);
      Json j = {{"run", analyze_dir}};
      std::vector<analysis::CosineMatrix> ms;
      for (const auto& e : log) {
        if (e.value("event", "") != "grad_cosine") continue;
        analysis::CosineMatrix m;
        for (const auto& row : e.at("matrix")) {
          std::vector<std::optional<double>> r;
          for (const auto& v : row) r.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
          m.push_back(r);
        }
        ms.push_back(m);
      }
      if (!ms.empty()) j["conflict_fraction"] = analysis::conflict_fraction(ms);
      for (const std::string g : {"task", "stage", "time"}) {
        try {
          const auto m = analysis::usage_matrix(log, g);
          Json u = Json::object();
          for (std::size_t i = 0; i < m.labels.size(); ++i) u[m.labels[i]] = m.rows[i];
          j["usage"][g] = u;
        } catch (const UnsupportedAnalysis& e) {
          j["usage"] = e.what();
          break;
        }
      }
      Json betas = Json::array();
      for (const auto& e : log) {
        if (e.value("event", "") == "snapshot") betas.push_back(e.at("beta"));
      }
      if (!betas.empty()) j["final_beta"] = betas.back();
      if (n_candidates > 0 && fs::exists(dir / harness::kCheckpointFile)) {
        auto run = harness::load_run(dir);
        analysis::CandidateSpec spec;
        spec.count = n_candidates;
        spec.episodes = cand_episodes;
        spec.action_repeat = run.config.train.action_repeat;
        spec.env_seed = run.eval_seed;
        spec.sample_seed = run.config.train.seed;
        spec.source = perturb::CandidateSource::Oriented;
        j["candidates"]["oriented"] = candidates_json(analysis::eval_candidates(*run.agent, run.buffer, run.env, spec));
        spec.source = perturb::CandidateSource::Random;
        j["candidates"]["random"] = candidates_json(analysis::eval_candidates(*run.agent, run.buffer, run.env, spec));
      }
      std::cout << j.dump(2) << '\n';
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
