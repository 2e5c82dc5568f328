// Acceptance suite: one PASS/FAIL line per criterion. Every tolerance and time
// limit is pinned below. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "moerl/analysis/candidates.hpp"
#include "moerl/analysis/cosine.hpp"
#include "moerl/analysis/efficiency.hpp"
#include "moerl/harness/run.hpp"
#include "support/crafted.hpp"
#include "support/fd.hpp"
#include "support/moe_oracle.hpp"

using namespace moerl;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path runs_root() { return fs::absolute("acceptance_runs"); }

harness::RunConfig run_config(const harness::KeyValues& kv) { return harness::resolve(kv, {}); }

// ---- 1. MoE oracle equivalence ----

Outcome moe_oracle_equivalence() {
  constexpr int kInstances = 100;
  constexpr std::size_t kInputs = 16;
  constexpr double kTol = 1e-9, kSeconds = 10.0;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int i = 0; i < kInstances; ++i) worst = std::max(worst, testing::oracle_gap(testing::random_instance(rng), kInputs));
  const double secs = seconds_since(t0);
  return {worst <= kTol && secs < kSeconds,
          "max |layer - oracle| = " + fmt(worst) + " (tol " + fmt(kTol) + "), " + fmt(secs) + " s (limit " +
              fmt(kSeconds) + " s)"};
}

// ---- 2. gradient correctness ----

Var weighted_sum(Tape& t, Var v, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Var w = t.constant(testing::uniform(t.value(v).shape(), rng));
  return ops::sum(t, ops::mul(t, v, w));
}

// Distance of the actor loss from its nondifferentiable points at latent `z`:
// every relu input and every gap between the k-th and (k+1)-th router logit.
double kink_margin(rl::Agent& agent, const Tensor& z) {
  moe::MoELayer& layer = *agent.trunk().moe_layer();
  const std::size_t k = layer.top_k(), n = layer.experts().size();
  double margin = 1e300;
  for (std::size_t b = 0; b < z.rows(); ++b) {
    const std::vector<double> row(z.row(b).begin(), z.row(b).end());
    std::vector<double> logits = testing::affine(layer.router().proj, row);
    std::sort(logits.rbegin(), logits.rend());
    if (k < n) margin = std::min(margin, logits[k - 1] - logits[k]);
    for (const auto& e : layer.experts()) {
      for (double v : testing::affine(e.fc1, row)) margin = std::min(margin, std::abs(v));
    }
    for (double v : testing::moe_oracle(layer, row)) margin = std::min(margin, std::abs(v));
  }
  Tape t(false);
  const Tensor action = t.value(agent.policy(t, t.constant(z)).action);
  for (const Tensor& pre : agent.critic1().preactivations(z, action)) {
    for (double v : pre.storage()) margin = std::min(margin, std::abs(v));
  }
  return margin;
}

Outcome gradient_correctness() {
  constexpr double kTol = 1e-4, kSeconds = 60.0, kMinMargin = 1e-3;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  using testing::away_from_zero;
  using testing::uniform;
  struct Case {
    std::string op;
    testing::LossFn f;
    std::vector<Tensor> inputs;
  };
  const std::vector<Case> cases = {
      {"matmul", [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::matmul(t, v[0], v[1])); },
       {uniform({3, 4}, rng), uniform({4, 5}, rng)}},
      {"add", [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::add(t, v[0], v[1])); },
       {uniform({3, 4}, rng), uniform({3, 4}, rng)}},
      {"add(scalar)", [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::add(t, v[0], v[1])); },
       {uniform({3, 4}, rng), uniform({1}, rng)}},
      {"sub", [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::sub(t, v[0], v[1])); },
       {uniform({3, 4}, rng), uniform({3, 4}, rng)}},
      {"mul", [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::mul(t, v[0], v[1])); },
       {uniform({3, 4}, rng), uniform({3, 4}, rng)}},
      {"mul(scalar)", [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::mul(t, v[0], v[1])); },
       {uniform({3, 4}, rng), uniform({1}, rng)}},
      {"scale", [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::scale(t, v[0], -1.7)); },
       {uniform({3, 4}, rng)}},
      {"add_scalar", [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::add_scalar(t, v[0], 0.3)); },
       {uniform({3, 4}, rng)}},
      {"relu", [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::relu(t, v[0])); },
       {away_from_zero({4, 5}, rng, kMinMargin)}},
      {"tanh", [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::tanh(t, v[0])); },
       {uniform({4, 5}, rng, -2, 2)}},
      {"square", [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::square(t, v[0])); },
       {uniform({4, 5}, rng)}},
      {"sum", [](Tape& t, const std::vector<Var>& v) { return ops::sum(t, ops::square(t, v[0])); },
       {uniform({4, 5}, rng)}},
      {"mean", [](Tape& t, const std::vector<Var>& v) { return ops::mean(t, ops::square(t, v[0])); },
       {uniform({4, 5}, rng)}},
      {"add_bias", [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::add_bias(t, v[0], v[1])); },
       {uniform({4, 5}, rng), uniform({5}, rng)}},
      {"scale_rows",
       [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::scale_rows(t, v[0], v[1], 2)); },
       {uniform({4, 5}, rng), uniform({4, 3}, rng)}},
      {"concat_cols",
       [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::concat_cols(t, v[0], v[1])); },
       {uniform({4, 2}, rng), uniform({4, 3}, rng)}},
      {"reshape", [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::reshape(t, v[0], {2, 10})); },
       {uniform({4, 5}, rng)}},
      {"mean_rows", [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::mean_rows(t, v[0])); },
       {uniform({4, 5}, rng)}},
      {"softmax(axis 0)", [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::softmax(t, v[0], 0)); },
       {uniform({4, 5}, rng, -2, 2)}},
      {"softmax(axis 1)", [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::softmax(t, v[0], 1)); },
       {uniform({4, 5}, rng, -2, 2)}},
      {"sum_plogp",
       [](Tape& t, const std::vector<Var>& v) { return ops::sum_plogp(t, ops::mean_rows(t, ops::softmax(t, v[0]))); },
       {uniform({5, 4}, rng, -2, 2)}},
      {"conv2d(stride 1)",
       [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::conv2d(t, v[0], v[1], 1)); },
       {uniform({2, 2, 6, 5}, rng), uniform({3, 2, 3, 3}, rng)}},
      {"conv2d(stride 2)",
       [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::conv2d(t, v[0], v[1], 2)); },
       {uniform({2, 2, 7, 7}, rng), uniform({3, 2, 3, 3}, rng)}},
      {"add_channel_bias",
       [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ops::add_channel_bias(t, v[0], v[1])); },
       {uniform({2, 3, 4, 4}, rng), uniform({3}, rng)}},
      // logit gaps of at least 0.1, far beyond the finite-difference step
      {"topk_gate", [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, moe::topk_gate(t, v[0], 2)); },
       {Tensor(Shape{3, 5}, {0.3, -0.4, 1.2, 0.9, -1.0, 2.0, 1.1, -0.2, 0.5, 0.0, -0.5, -1.5, 0.7, 1.6, 0.2})}},
      {"load_balance_loss",
       [](Tape& t, const std::vector<Var>& v) { return moe::load_balance_loss(t, ops::softmax(t, v[0])); },
       {uniform({6, 4}, rng, -2, 2)}},
  };
  double worst = 0.0;
  std::string worst_op;
  for (const auto& c : cases) {
    const double e = testing::fd_max_rel_err(c.f, c.inputs);
    if (e > worst) {
      worst = e;
      worst_op = c.op;
    }
  }

  // detach passes no gradient by construction, so it is checked for exact zeros
  bool detach_ok = true;
  {
    Tape t;
    Var x = t.input(uniform({3, 3}, rng));
    t.backward(ops::sum(t, ops::square(t, ops::detach(t, x))));
    for (double g : t.grad(x)) detach_ok = detach_ok && g == 0.0;
  }

  // full actor loss of an MoE agent, load-balancing term included
  rl::TrainConfig cfg;
  cfg.latent_dim = 6;
  cfg.hidden_dim = 8;
  cfg.num_experts = 4;
  cfg.top_k = 2;
  cfg.expert_hidden = 5;
  rl::Agent agent(rl::AgentSpec{{5}, 1}, cfg, 303);
  constexpr double kLbWeight = 0.3;
  Tensor z;
  double margin = 0.0;
  for (int attempt = 0; attempt < 100 && margin < kMinMargin; ++attempt) {
    const Tensor obs = uniform(Shape{6, 5}, rng);
    Tape enc(false);
    z = enc.value(agent.encode(enc, obs));
    margin = kink_margin(agent, z);
  }
  double actor_err = 1e300;
  if (margin >= kMinMargin) {
    auto loss = [&] {
      Tape t(false);
      return t.value(agent.actor_loss(t, t.constant(z), kLbWeight).total).item();
    };
    auto backward = [&] {
      Tape t;
      t.backward(agent.actor_loss(t, t.constant(z), kLbWeight).total);
    };
    actor_err = testing::fd_params_max_rel_err(agent.actor_params(), loss, backward, 1e-6);
  }
  const double secs = seconds_since(t0);
  return {worst < kTol && detach_ok && actor_err < kTol && secs < kSeconds,
          fmt(cases.size()) + " ops max rel err " + fmt(worst) + " (" + worst_op + "), detach " +
              (detach_ok ? "zero" : "LEAKS") + ", actor loss " + fmt(actor_err) + " at kink margin " + fmt(margin) +
              " (tol " + fmt(kTol) + ", margin >= " + fmt(kMinMargin) + "), " + fmt(secs) + " s (limit " +
              fmt(kSeconds) + " s)"};
}

// ---- 3. load-balancing bounds ----

Outcome load_balance_bounds() {
  constexpr double kUniformTol = 1e-9, kBoundSlack = 1e-12;
  std::mt19937_64 rng(404);
  double worst_uniform = 0.0;
  bool in_bounds = true;
  for (std::size_t n = 1; n <= 16; ++n) {
    worst_uniform = std::max(worst_uniform, std::abs(moe::load_balance_loss(Tensor(Shape{5, n}, 1.0 / n)) +
                                                     std::log(static_cast<double>(n))));
    // rows are one-hot, but their mean is uniform
    Tensor cyc(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) cyc(i, (i + 3) % n) = 1.0;
    worst_uniform = std::max(worst_uniform, std::abs(moe::load_balance_loss(cyc) + std::log(static_cast<double>(n))));
  }
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + trial % 8, b = 1 + trial % 7;
    const double spread = 0.1 + 10.0 * (trial % 5);
    Tape t(false);
    const Tensor p = t.value(ops::softmax(t, t.constant(testing::uniform({b, n}, rng, -spread, spread))));
    const double l = moe::load_balance_loss(p);
    in_bounds = in_bounds && l >= -std::log(static_cast<double>(n)) - kBoundSlack && l <= kBoundSlack;
  }
  const double one_hot = moe::load_balance_loss(Tensor::matrix({{0, 1, 0}, {0, 1, 0}}));
  return {in_bounds && worst_uniform <= kUniformTol && one_hot == 0.0,
          std::string("1000 random routings ") + (in_bounds ? "within" : "OUTSIDE") + " [-log N, 0], max |L + log N| at " +
              "uniform mean " + fmt(worst_uniform) + " (tol " + fmt(kUniformTol) + "), collapsed routing " + fmt(one_hot)};
}

// ---- 4. dormant-ratio exactness ----

Outcome dormant_exactness() {
  std::mt19937_64 rng(505);
  int exact = 0, crafted = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t layers = 1 + rng() % 3;
    std::vector<std::size_t> widths;
    std::vector<std::vector<std::size_t>> dead(layers);
    std::size_t k = 0, m = 0;
    for (std::size_t l = 0; l < layers; ++l) {
      widths.push_back(2 + rng() % 9);
      for (std::size_t i = 0; i + 1 < widths[l]; ++i) {
        if (rng() % 3 == 0) dead[l].push_back(i);
      }
      k += dead[l].size();
      m += widths[l];
    }
    testing::CraftedNet net(1 + rng() % 10, widths, dead, rng());
    const Tensor probe = testing::probe_batch(32, net.layers()[0].in_features(), rng);
    double min_live = 1e300;
    for (const auto& l : dormant::dormant_ratio(net, probe, 0.0).per_layer) {
      for (double s : l.scores) {
        if (s > 0.0) min_live = std::min(min_live, s);
      }
    }
    bool ok = true;
    for (double frac : {1e-9, 0.1, 0.5, 0.9, 0.999999}) {
      ok = ok && dormant::dormant_ratio(net, probe, frac * min_live).ratio ==
                     static_cast<double>(k) / static_cast<double>(m);
    }
    exact += ok;
    ++crafted;
  }
  int monotone = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Rng init(rng());
    nn::Linear l1("l1", 4, 8, init), l2("l2", 8, 6, init);
    const Tensor probe = testing::probe_batch(24, 4, rng);
    Tape t(false);
    Var h1 = ops::relu(t, l1.forward(t, t.constant(probe)));
    Var h2 = ops::relu(t, l2.forward(t, h1));
    const std::vector<dormant::LayerActivations> acts{{"l1", t.value(h1)}, {"l2", t.value(h2)}};
    double max_score = 0.0;
    for (const auto& l : dormant::dormant_ratio(acts, 0.0).per_layer) {
      max_score = std::max(max_score, *std::max_element(l.scores.begin(), l.scores.end()));
    }
    // sweep past the largest score, where every neuron counts as dormant
    bool ok = true;
    double prev = -1.0;
    for (double tau = 0.0; tau <= max_score * 1.01; tau += max_score / 400.0) {
      const double r = dormant::dormant_ratio(acts, tau).ratio;
      ok = ok && r >= prev && r >= 0.0 && r <= 1.0;
      prev = r;
    }
    monotone += ok && prev == 1.0;
  }
  return {exact == crafted && monotone == 50, "beta = k/m exact on " + std::to_string(exact) + "/" +
                                                  std::to_string(crafted) + " crafted nets, monotone in tau on " +
                                                  std::to_string(monotone) + "/50 random nets"};
}

// ---- 5. top-agent buffer ----

Outcome top_buffer_oracle() {
  constexpr int kStreams = 1000;
  constexpr double kSeconds = 5.0;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(606);
  int agree = 0;
  for (int trial = 0; trial < kStreams; ++trial) {
    const std::size_t cap = 1 + rng() % 12, len = rng() % 200;
    const bool ties = trial % 2 == 1;  // odd streams draw from a handful of reward levels
    std::vector<double> stream(len);
    std::normal_distribution<double> normal(0.0, 10.0);
    for (auto& r : stream) r = ties ? static_cast<double>(rng() % 6) : normal(rng);
    perturb::TopAgentBuffer buf(cap);
    for (std::size_t i = 0; i < len; ++i) {
      perturb::WeightVector w;
      w.layout.slices.push_back({"id", 0, 1, Shape{1}});
      w.values = {static_cast<double>(i)};
      buf.maybe_insert(w, stream[i]);
    }
    // oracle: stable descending sort, first N; among equal rewards the earlier arrival ranks first
    std::vector<std::size_t> idx(len);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return stream[a] > stream[b]; });
    idx.resize(std::min(cap, len));
    std::vector<double> want_r, got_r;
    std::vector<std::size_t> want_id, got_id;
    for (auto i : idx) {
      want_r.push_back(stream[i]);
      want_id.push_back(i);
    }
    for (const auto& e : buf.entries()) {
      got_r.push_back(e.reward);
      got_id.push_back(static_cast<std::size_t>(e.weights.values[0]));
    }
    std::sort(want_r.begin(), want_r.end());
    std::sort(got_r.begin(), got_r.end());
    std::sort(want_id.begin(), want_id.end());
    std::sort(got_id.begin(), got_id.end());
    // with ties, which of several equal-reward entries survives is unspecified
    agree += got_r == want_r && (ties || got_id == want_id);
  }
  const double secs = seconds_since(t0);
  return {agree == kStreams && secs < kSeconds, std::to_string(agree) + "/" + std::to_string(kStreams) +
                                                    " streams match the sort oracle, " + fmt(secs) + " s (limit " +
                                                    fmt(kSeconds) + " s)"};
}

// ---- 6. gradient conflict, MLP vs MoE ----

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt(x);
  return s;
}

Outcome gradient_conflict() {
  constexpr double kSecondsPerRun = 600.0;
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4};
  std::vector<double> cf_mlp, cf_moe;
  double slowest = 0.0;
  for (const std::string trunk : {"mlp", "moe"}) {
    for (auto seed : seeds) {
      const auto dir = runs_root() / "conflict" / (trunk + "_seed" + std::to_string(seed));
      const auto t0 = Clock::now();
      const auto out = harness::run_training(run_config({{"env", "opposing:k=4"},
                                                         {"trunk", trunk},
                                                         {"seed", std::to_string(seed)},
                                                         {"total_frames", "20000"},
                                                         {"grad_probe_every_frames", "500"},
                                                         {"grad_probe_batch", "512"},
                                                         {"grad_params", "trunk"},
                                                         {"save_checkpoint", "false"},
                                                         {"out_dir", dir.string()}}));
      slowest = std::max(slowest, seconds_since(t0));
      (trunk == "mlp" ? cf_mlp : cf_moe).push_back(analysis::conflict_fraction(out.summary.grad_cosines));
    }
  }
  const double m_mlp = median(cf_mlp), m_moe = median(cf_moe);
  return {m_mlp > m_moe && slowest <= kSecondsPerRun,
          "median conflict fraction MLP " + fmt(m_mlp) + " [" + join(cf_mlp) + "] vs MoE " + fmt(m_moe) + " [" +
              join(cf_moe) + "], slowest run " + fmt(slowest) + " s (limit " + fmt(kSecondsPerRun) + " s)"};
}

// ---- 7. oriented vs random candidates ----

Outcome candidate_quality() {
  constexpr double kSeconds = 900.0, kStopSuccess = 0.5, kRandomFloor = 1.0;
  constexpr std::size_t kCandidates = 10, kEpisodes = 5;
  const auto t0 = Clock::now();
  const auto dir = runs_root() / "candidates";
  const auto cfg = run_config({{"env", "sparse_goal"},
                               {"trunk", "moe"},
                               {"perturb", "oriented"},
                               {"seed", "1"},
                               {"total_frames", "40000"},
                               {"eval_every_frames", "1000"},
                               {"stop_success_rate", fmt(kStopSuccess)},
                               {"out_dir", dir.string()}});
  const auto out = harness::run_training(cfg);
  const double reached = out.summary.evals.empty() ? 0.0 : out.summary.evals.back().success_rate;
  auto run = harness::load_run(out.dir);
  analysis::CandidateSpec spec;
  spec.count = kCandidates;
  spec.episodes = kEpisodes;
  spec.action_repeat = cfg.train.action_repeat;
  spec.env_seed = run.eval_seed;
  spec.sample_seed = cfg.train.seed;
  spec.source = perturb::CandidateSource::Oriented;
  const double oriented = analysis::mean_return(analysis::eval_candidates(*run.agent, run.buffer, run.env, spec));
  spec.source = perturb::CandidateSource::Random;
  const double random = analysis::mean_return(analysis::eval_candidates(*run.agent, run.buffer, run.env, spec));
  const double secs = seconds_since(t0);
  return {reached >= kStopSuccess && oriented > random && random <= kRandomFloor && secs < kSeconds,
          "run stopped at frame " + fmt(static_cast<double>(out.summary.frames)) + " with eval success " + fmt(reached) +
              " (need " + fmt(kStopSuccess) + "), oriented mean return " + fmt(oriented) + " vs random " + fmt(random) +
              " (floor " + fmt(kRandomFloor) + "), " + fmt(secs) + " s (limit " + fmt(kSeconds) + " s)"};
}

// ---- 8. ablation ordering and efficiency arithmetic ----

// a <= b in time-to-threshold, where a missing time means never; a must be finite
// so that two runs that both never cross do not count as an ordering.
bool faster_or_equal(const std::optional<double>& a, const std::optional<double>& b) { return a && (!b || *a <= *b); }

std::string show(const std::optional<double>& t) { return t ? fmt(*t) : "never"; }

Outcome ablation_ordering() {
  constexpr double kThreshold = 0.8, kFixtureTol = 1e-12, kSavingTol = 5e-4;
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4};
  enum { kFull, kNoTp, kNoMoe, kNone };
  const std::vector<std::pair<std::string, std::pair<int, int>>> relations{{"MENTOR <= MENTOR_w/o_TP", {kFull, kNoTp}},
                                                                         {"MENTOR <= MENTOR_w/o_MoE", {kFull, kNoMoe}},
                                                                         {"MENTOR_w/o_TP <= MENTOR_w/o_TP_MoE", {kNoTp, kNone}},
                                                                         {"MENTOR_w/o_MoE <= MENTOR_w/o_TP_MoE", {kNoMoe, kNone}}};
  std::vector<bool> holds(relations.size(), false);
  std::string detail;
  for (const std::string env : {"sparse_goal", "opposing:k=4"}) {
    const auto base = run_config({{"env", env},
                                  {"total_frames", "20000"},
                                  {"perturb_frames", "2000"},
                                  {"eval_every_frames", "1000"},
                                  {"save_checkpoint", "false"}});
    const auto rep = harness::run_ablation(base, seeds, "success_rate", kThreshold,
                                           runs_root() / "ablation" / env.substr(0, env.find(':')));
    std::vector<std::optional<double>> t;
    for (const auto& [name, m] : rep.median_time) t.push_back(m);
    detail += env + " medians [";
    for (std::size_t i = 0; i < t.size(); ++i) detail += (i ? " " : "") + show(t[i]);
    detail += "]; ";
    for (std::size_t r = 0; r < relations.size(); ++r) {
      if (faster_or_equal(t[relations[r].second.first], t[relations[r].second.second])) holds[r] = true;
    }
  }
  bool all = true;
  for (std::size_t r = 0; r < relations.size(); ++r) {
    all = all && holds[r];
    if (!holds[r]) detail += "fails: " + relations[r].first + "; ";
  }

  // hand-arithmetic fixtures for the efficiency report
  const std::vector<analysis::Curve> curves{{"full", {{0, 0.0}, {370.02, 0.9}, {1000, 0.9}}},
                                            {"no_tp", {{0, 0.0}, {510, 0.7}, {600, 0.8}, {1000, 0.8}}},
                                            {"no_moe", {{0, 0.0}, {510, 0.85}, {1000, 0.85}}}};
  const auto eff = analysis::efficiency(curves);
  const double row = *eff.at("full").ratio;
  const bool row_ok = std::abs(row - 370.02 / 600.0) <= kFixtureTol && std::abs(row - 0.6167) <= kFixtureTol;
  const double saving = analysis::mean_time_saving({0.6167, 0.7056, 0.8066, 0.7167}, {0.85, 1.0, 1.0, 1.0});
  const bool saving_ok = std::abs(saving - 0.261) <= kSavingTol;
  detail += "fixture ratio " + fmt(row) + " (want 0.6167), mean saving vs w/o MoE " + fmt(saving) + " (want 0.261)";
  return {all && row_ok && saving_ok, detail};
}

// ---- 9. determinism ----

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

Outcome determinism() {
  const std::vector<harness::KeyValues> configs{
      {{"env", "opposing:k=4"}, {"trunk", "moe"}, {"perturb", "oriented"}, {"seed", "3"}, {"total_frames", "4000"},
       {"perturb_frames", "1000"}, {"grad_probe_every_frames", "1000"}},
      {{"env", "sparse_goal:disturb"}, {"trunk", "mlp"}, {"perturb", "random"}, {"seed", "5"},
       {"total_frames", "4000"}, {"perturb_frames", "1000"}},
      {{"env", "multistage:image"}, {"trunk", "moe"}, {"perturb", "oriented"}, {"seed", "7"},
       {"total_frames", "2000"}, {"perturb_frames", "600"}, {"eval_every_frames", "1000"}, {"eval_episodes", "2"},
       {"batch_size", "32"}, {"seed_frames", "400"}, {"exploration_steps", "100"}},
  };
  int identical = 0;
  std::size_t bytes = 0;
  for (std::size_t c = 0; c < configs.size(); ++c) {
    std::vector<std::string> metrics, checkpoints;
    for (int rep = 0; rep < 2; ++rep) {
      auto kv = configs[c];
      const auto dir = runs_root() / "determinism" / ("config" + std::to_string(c) + "_run" + std::to_string(rep));
      kv.push_back({"out_dir", dir.string()});
      const auto out = harness::run_training(run_config(kv));
      metrics.push_back(slurp(out.dir / harness::kMetricsFile));
      checkpoints.push_back(slurp(out.dir / harness::kCheckpointFile));
    }
    identical += !metrics[0].empty() && metrics[0] == metrics[1] && checkpoints[0] == checkpoints[1];
    bytes += metrics[0].size();
  }
  return {identical == static_cast<int>(configs.size()),
          std::to_string(identical) + "/" + std::to_string(configs.size()) +
              " (config, seed) pairs give byte-identical metrics and checkpoints (" + std::to_string(bytes) +
              " metric bytes compared per run)"};
}

// ---- 10. perturbation algebra ----

Outcome perturbation_algebra() {
  constexpr double kGridTol = 1e-12;
  std::mt19937_64 rng(1010);
  std::normal_distribution<double> normal(0.0, 1.0);
  perturb::WeightVector theta, phi;
  theta.layout.slices.push_back({"w", 0, 257, Shape{257}});
  phi.layout = theta.layout;
  for (int i = 0; i < 257; ++i) {
    theta.values.push_back(normal(rng));
    phi.values.push_back(normal(rng));
  }
  const bool noop = perturb::apply_perturbation(theta, phi, 1.0).values == theta.values;
  const bool replace = perturb::apply_perturbation(theta, phi, 0.0).values == phi.values;
  double worst = 0.0;
  for (const perturb::PerturbConfig cfg : {perturb::PerturbConfig{}, perturb::PerturbConfig{0.2, 0.6, 2.0, 1},
                                           perturb::PerturbConfig{0.0, 1.0, 0.7, 1}}) {
    for (int i = 0; i < 100; ++i) {
      const double beta = i / 99.0;
      const double raw = 1.0 - cfg.rate * beta;
      const double want = raw < cfg.alpha_min ? cfg.alpha_min : (raw > cfg.alpha_max ? cfg.alpha_max : raw);
      worst = std::max(worst, std::abs(perturb::perturb_factor(beta, cfg) - want));
    }
  }
  return {noop && replace && worst <= kGridTol, std::string("alpha=1 ") + (noop ? "no-op" : "CHANGES weights") +
                                                    ", alpha=0 " + (replace ? "replaces" : "DOES NOT replace") +
                                                    ", max |alpha - clip(1 - mu beta)| on 3x100 grid " + fmt(worst) +
                                                    " (tol " + fmt(kGridTol) + ")"};
}

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "moe-oracle-equivalence", moe_oracle_equivalence},
      {2, "gradient-correctness", gradient_correctness},
      {3, "load-balancing-bounds", load_balance_bounds},
      {4, "dormant-ratio-exactness", dormant_exactness},
      {5, "top-agent-buffer-oracle", top_buffer_oracle},
      {6, "gradient-conflict-mlp-vs-moe", gradient_conflict},
      {7, "candidate-quality", candidate_quality},
      {8, "ablation-ordering", ablation_ordering},
      {9, "determinism", determinism},
      {10, "perturbation-algebra", perturbation_algebra},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
