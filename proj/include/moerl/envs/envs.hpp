#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "moerl/autodiff/init.hpp"
#include "moerl/errors.hpp"

// Seedable toy control tasks. All dynamics are closed-form; positions live in
// [-1, 1] and actions are clamped to [-1, 1] per coordinate.
namespace moerl::envs {

enum class ObsMode { Vector, Image };

struct EnvSpec {
  std::string name;                // opposing | sparse_goal | multistage
  ObsMode obs_mode = ObsMode::Vector;
  std::size_t image_size = 24;     // H = W in image mode
  std::size_t action_dim = 1;
  int episode_len = 60;            // simulator steps
  int num_tasks = 1;
  int task_id = -1;                // -1: cycle through tasks episode by episode
  bool disturbance = false;
  bool random_goal = false;        // sparse_goal: resample the goal every episode

  std::string to_string() const;
};

struct StepInfo {
  std::string stage;
  bool success = false;
  int task_id = 0;
};

struct StepResult {
  std::vector<double> obs;
  double reward = 0.0;
  bool done = false;       // terminal (success)
  bool truncated = false;  // time limit
  StepInfo info;
};

inline constexpr double kOpposingSuccessRadius = 0.05;
inline constexpr double kOpposingBonus = 1.0;

inline constexpr double kPointSpeed = 0.1;        // max displacement per coordinate per step
inline constexpr double kGoalRadius = 0.2;        // sparse_goal
inline constexpr int kGoalHoldSteps = 3;          // consecutive steps inside the goal for success
inline constexpr double kGoalBonus = 10.0;        // terminal bonus on success
inline constexpr double kGraspRadius = 0.15;      // multistage
inline constexpr double kAssembleRadius = 0.3;
inline constexpr double kPlaceRadius = 0.1;
inline constexpr double kMultiStageBonus = 5.0;
// Teleport window for the disturbance option, as fractions of episode_len.
inline constexpr double kDisturbStart = 0.25;
inline constexpr double kDisturbEnd = 0.75;

class Env {
 public:
  explicit Env(EnvSpec spec, std::uint64_t seed) : spec_(std::move(spec)), rng_(seed) {}
  virtual ~Env() = default;

  const EnvSpec& spec() const { return spec_; }

  std::vector<double> reset() {
    steps_ = 0;
    if (spec_.disturbance) {
      std::uniform_int_distribution<int> when(static_cast<int>(kDisturbStart * spec_.episode_len),
                                              static_cast<int>(kDisturbEnd * spec_.episode_len));
      disturb_step_ = when(rng_);
    }
    reset_state();
    ++episodes_;
    return observe();
  }

  StepResult step(std::span<const double> action) {
    if (action.size() != spec_.action_dim) {
      throw ContractError("env step: action has " + std::to_string(action.size()) + " dims, expected " +
                          std::to_string(spec_.action_dim));
    }
    std::vector<double> a(action.begin(), action.end());
    for (double& v : a) {
      if (!std::isfinite(v)) throw ContractError("env step: non-finite action");
      if (v < -1.0 || v > 1.0) {
        ++clamped_;
        v = std::clamp(v, -1.0, 1.0);
      }
    }
    if (spec_.disturbance && steps_ == disturb_step_) disturb();
    StepResult r;
    r.info.stage = stage();
    r.info.task_id = task();
    advance(a, r);
    ++steps_;
    if (!r.done && steps_ >= spec_.episode_len) r.truncated = true;
    r.obs = observe();
    return r;
  }

  std::vector<std::size_t> obs_shape() const {
    if (spec_.obs_mode == ObsMode::Image) return {3, spec_.image_size, spec_.image_size};
    return {vector_dim()};
  }
  std::size_t obs_size() const {
    std::size_t n = 1;
    for (auto d : obs_shape()) n *= d;
    return n;
  }

  std::vector<double> observe() const {
    return spec_.obs_mode == ObsMode::Image ? render() : vector_state();
  }

  virtual std::vector<double> vector_state() const = 0;
  virtual std::size_t vector_dim() const = 0;
  virtual std::vector<std::string> stages() const = 0;
  virtual std::string stage() const = 0;
  virtual int task() const { return 0; }
  // Grouping label for analysis: task id for multi-task suites, stage index otherwise.
  virtual int group() const { return 0; }
  virtual int num_groups() const { return 1; }
  virtual std::vector<double> render() const = 0;

  int steps() const { return steps_; }
  long long clamped_actions() const { return clamped_; }
  int disturb_step() const { return disturb_step_; }

 protected:
  virtual void reset_state() = 0;
  virtual void advance(std::span<const double> action, StepResult& out) = 0;
  virtual void disturb() {}

  // Replicated 3×3 blob (centre 1, edges 0.5, corners 0.25) at the pixel nearest (x, y).
  void splat(std::vector<double>& img, std::size_t channel, double x, double y, double peak = 1.0) const {
    const std::size_t S = spec_.image_size;
    const auto [px, py] = to_pixel(x, y);
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int cx = px + dx, cy = py + dy;
        if (cx < 0 || cy < 0 || cx >= static_cast<int>(S) || cy >= static_cast<int>(S)) continue;
        const double w = (dx == 0 ? 1.0 : 0.5) * (dy == 0 ? 1.0 : 0.5);
        double& v = img[(channel * S + static_cast<std::size_t>(cy)) * S + static_cast<std::size_t>(cx)];
        v = std::max(v, peak * w);
      }
    }
  }

 public:
  // World coordinate in [-1, 1] to pixel index in [0, S-1].
  std::pair<int, int> to_pixel(double x, double y) const {
    const double s = static_cast<double>(spec_.image_size - 1);
    return {static_cast<int>(std::lround((x + 1.0) * 0.5 * s)), static_cast<int>(std::lround((y + 1.0) * 0.5 * s))};
  }
  double from_pixel(double p) const { return p / static_cast<double>(spec_.image_size - 1) * 2.0 - 1.0; }

 protected:
  EnvSpec spec_;
  Rng rng_;
  int steps_ = 0;
  long long episodes_ = 0;
  long long clamped_ = 0;
  int disturb_step_ = -1;
};

// 1-D slider. Even task ids target p = +1 ("open"), odd ids p = −1 ("close");
// task i moves at gain 0.1·(1 − 0.05·i), so the slowest task still crosses the
// track in 31 steps. Reward −|p − target|, plus a bonus and termination once
// |p − target| ≤ 0.05.
class OpposingTasks final : public Env {
 public:
  OpposingTasks(EnvSpec spec, std::uint64_t seed) : Env(std::move(spec), seed) {
    if (spec_.num_tasks < 1 || spec_.num_tasks > 8) throw ConfigError("opposing: k must be in [1, 8]");
    if (spec_.disturbance) throw ConfigError("opposing: disturbance option not supported");
    if (spec_.task_id >= spec_.num_tasks) throw ConfigError("opposing: task id out of range");
  }

  static double gain(int task) { return 0.1 * (1.0 - 0.05 * task); }
  static double target(int task) { return task % 2 == 0 ? 1.0 : -1.0; }

  double position() const { return p_; }
  int task() const override { return task_; }
  int group() const override { return task_; }
  int num_groups() const override { return spec_.num_tasks; }
  std::size_t vector_dim() const override { return 1 + static_cast<std::size_t>(spec_.num_tasks); }
  std::vector<std::string> stages() const override { return {"open", "close"}; }
  std::string stage() const override { return task_ % 2 == 0 ? "open" : "close"; }

  std::vector<double> vector_state() const override {
    std::vector<double> s(vector_dim(), 0.0);
    s[0] = p_;
    s[1 + static_cast<std::size_t>(task_)] = 1.0;
    return s;
  }

  // Channel 0: slider position on the middle row. Channel 1: a marker at the
  // task's slot on the bottom row.
  std::vector<double> render() const override {
    const std::size_t S = spec_.image_size;
    std::vector<double> img(3 * S * S, 0.0);
    splat(img, 0, p_, 0.0);
    splat(img, 1, task_marker(task_), 0.8);
    return img;
  }

  double task_marker(int task) const { return -0.9 + 1.8 * task / std::max(1, spec_.num_tasks - 1); }

  void set_state(double p) { p_ = p; }

 protected:
  void reset_state() override {
    task_ = spec_.task_id >= 0 ? spec_.task_id : static_cast<int>(episodes_ % spec_.num_tasks);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    p_ = u(rng_);
  }

  void advance(std::span<const double> a, StepResult& out) override {
    p_ = std::clamp(p_ + gain(task_) * a[0], -1.0, 1.0);
    const double dist = std::abs(p_ - target(task_));
    out.reward = -dist;
    if (dist <= kOpposingSuccessRadius) {
      out.reward += kOpposingBonus;
      out.done = true;
      out.info.success = true;
    }
  }

 private:
  double p_ = 0.0;
  int task_ = 0;
};

// 2-D point mass. Reward is 0 outside the goal disc and +1 per step inside it.
// Staying inside for kGoalHoldSteps consecutive steps succeeds: the episode
// terminates and that step also pays kGoalBonus.
class SparseGoal final : public Env {
 public:
  SparseGoal(EnvSpec spec, std::uint64_t seed) : Env(std::move(spec), seed) {}

  std::size_t vector_dim() const override { return 4; }
  std::vector<std::string> stages() const override { return {"search", "hold"}; }
  std::string stage() const override { return inside_ > 0 ? "hold" : "search"; }
  int group() const override { return inside_ > 0 ? 1 : 0; }
  int num_groups() const override { return 2; }

  std::vector<double> vector_state() const override { return {pos_[0], pos_[1], goal_[0], goal_[1]}; }

  std::vector<double> render() const override {
    const std::size_t S = spec_.image_size;
    std::vector<double> img(3 * S * S, 0.0);
    splat(img, 0, pos_[0], pos_[1]);
    splat(img, 1, goal_[0], goal_[1]);
    return img;
  }

  std::array<double, 2> position() const { return pos_; }
  std::array<double, 2> goal() const { return goal_; }
  void set_state(std::array<double, 2> pos, std::array<double, 2> goal) {
    pos_ = pos;
    goal_ = goal;
  }

  static constexpr std::array<double, 2> kDefaultGoal{0.5, 0.5};

 protected:
  void reset_state() override {
    std::uniform_real_distribution<double> u(-1.0, 1.0), ug(-0.8, 0.8);
    goal_ = spec_.random_goal ? std::array<double, 2>{ug(rng_), ug(rng_)} : kDefaultGoal;
    do {
      pos_ = {u(rng_), u(rng_)};
    } while (distance(pos_, goal_) <= 2.0 * kGoalRadius);
    inside_ = 0;
  }

  void advance(std::span<const double> a, StepResult& out) override {
    for (int i = 0; i < 2; ++i) pos_[i] = std::clamp(pos_[i] + kPointSpeed * a[i], -1.0, 1.0);
    inside_ = distance(pos_, goal_) <= kGoalRadius ? inside_ + 1 : 0;
    if (inside_ > 0) out.reward = 1.0;
    if (inside_ >= kGoalHoldSteps) {
      out.reward += kGoalBonus;
      out.done = true;
      out.info.success = true;
    }
  }

  void disturb() override {
    std::uniform_real_distribution<double> ug(-0.8, 0.8);
    goal_ = {ug(rng_), ug(rng_)};
    inside_ = 0;
  }

 public:
  static double distance(const std::array<double, 2>& a, const std::array<double, 2>& b) {
    return std::hypot(a[0] - b[0], a[1] - b[1]);
  }

 private:
  std::array<double, 2> pos_{}, goal_{};
  int inside_ = 0;
};

// Pick-and-place with labelled stages. Action (vx, vy, grip): grip > 0 closes
// the gripper. The object is grasped when the gripper closes within
// kGraspRadius, follows the agent while held, and the episode succeeds when it
// is released within kPlaceRadius of the goal.
class MultiStage final : public Env {
 public:
  MultiStage(EnvSpec spec, std::uint64_t seed) : Env(std::move(spec), seed) {}

  static constexpr std::array<const char*, 4> kStages{"grasp", "move", "assemble", "release"};

  std::size_t vector_dim() const override { return 7; }
  std::vector<std::string> stages() const override { return {kStages.begin(), kStages.end()}; }
  std::string stage() const override { return kStages[static_cast<std::size_t>(stage_index())]; }
  int group() const override { return stage_index(); }
  int num_groups() const override { return 4; }

  int stage_index() const {
    if (!holding_) return 0;
    const double d = SparseGoal::distance(object_, goal_);
    if (d > kAssembleRadius) return 1;
    if (d > kPlaceRadius) return 2;
    return 3;
  }

  std::vector<double> vector_state() const override {
    return {agent_[0], agent_[1], object_[0], object_[1], goal_[0], goal_[1], holding_ ? 1.0 : 0.0};
  }

  // Channels: agent, object (peak 0.5 while held), goal.
  std::vector<double> render() const override {
    const std::size_t S = spec_.image_size;
    std::vector<double> img(3 * S * S, 0.0);
    splat(img, 0, agent_[0], agent_[1]);
    splat(img, 1, object_[0], object_[1], holding_ ? 0.5 : 1.0);
    splat(img, 2, goal_[0], goal_[1]);
    return img;
  }

  std::array<double, 2> agent() const { return agent_; }
  std::array<double, 2> object() const { return object_; }
  std::array<double, 2> goal() const { return goal_; }
  bool holding() const { return holding_; }

 protected:
  void reset_state() override {
    std::uniform_real_distribution<double> u(-0.9, 0.9);
    agent_ = {u(rng_), u(rng_)};
    do {
      object_ = {u(rng_), u(rng_)};
    } while (SparseGoal::distance(agent_, object_) <= 2.0 * kGraspRadius);
    do {
      goal_ = {u(rng_), u(rng_)};
    } while (SparseGoal::distance(object_, goal_) <= 2.0 * kAssembleRadius);
    holding_ = false;
  }

  void advance(std::span<const double> a, StepResult& out) override {
    const bool grip = a[2] > 0.0;
    for (int i = 0; i < 2; ++i) agent_[i] = std::clamp(agent_[i] + kPointSpeed * a[i], -1.0, 1.0);
    const bool was_holding = holding_;
    if (holding_) {
      object_ = agent_;
      if (!grip) holding_ = false;
    } else if (grip && SparseGoal::distance(agent_, object_) <= kGraspRadius) {
      holding_ = true;
      object_ = agent_;
    }
    const double d_og = SparseGoal::distance(object_, goal_);
    out.reward = holding_ ? 0.5 - 0.5 * d_og : -0.5 * SparseGoal::distance(agent_, object_);
    if (was_holding && !holding_ && d_og <= kPlaceRadius) {
      out.reward += kMultiStageBonus;
      out.done = true;
      out.info.success = true;
    }
  }

  void disturb() override {
    std::uniform_real_distribution<double> u(-0.9, 0.9);
    goal_ = {u(rng_), u(rng_)};
  }

 private:
  std::array<double, 2> agent_{}, object_{}, goal_{};
  bool holding_ = false;
};

inline std::string EnvSpec::to_string() const {
  std::ostringstream os;
  os << name;
  std::vector<std::string> opts;
  if (name == "opposing") opts.push_back("k=" + std::to_string(num_tasks));
  if (task_id >= 0) opts.push_back("task=" + std::to_string(task_id));
  if (obs_mode == ObsMode::Image) opts.push_back("image");
  if (obs_mode == ObsMode::Image && image_size != 24) opts.push_back("size=" + std::to_string(image_size));
  if (disturbance) opts.push_back("disturb");
  if (random_goal) opts.push_back("random_goal");
  opts.push_back("len=" + std::to_string(episode_len));
  for (std::size_t i = 0; i < opts.size(); ++i) os << (i ? ',' : ':') << opts[i];
  return os.str();
}

// "name[:opt,opt=value,...]", e.g. "opposing:k=5", "multistage:image,disturb".
inline EnvSpec parse_env_spec(const std::string& text) {
  EnvSpec spec;
  const auto colon = text.find(':');
  spec.name = text.substr(0, colon);
  if (spec.name == "opposing") {
    spec.action_dim = 1;
    spec.episode_len = 60;
    spec.num_tasks = 5;
  } else if (spec.name == "sparse_goal") {
    spec.action_dim = 2;
    spec.episode_len = 100;
  } else if (spec.name == "multistage") {
    spec.action_dim = 3;
    spec.episode_len = 200;
  } else {
    throw ConfigError("unknown environment '" + spec.name + "'");
  }
  if (colon == std::string::npos) return spec;
  std::stringstream ss(text.substr(colon + 1));
  std::string opt;
  while (std::getline(ss, opt, ',')) {
    if (opt.empty()) continue;
    const auto eq = opt.find('=');
    const std::string key = opt.substr(0, eq);
    const std::string val = eq == std::string::npos ? "" : opt.substr(eq + 1);
    auto as_int = [&]() {
      try {
        std::size_t used = 0;
        const int v = std::stoi(val, &used);
        if (used != val.size()) throw std::invalid_argument(val);
        return v;
      } catch (const std::exception&) {
        throw ConfigError("env option '" + key + "' expects an integer, got '" + val + "'");
      }
    };
    if (key == "k" && spec.name == "opposing") {
      spec.num_tasks = as_int();
    } else if (key == "task") {
      spec.task_id = as_int();
    } else if (key == "image") {
      spec.obs_mode = ObsMode::Image;
    } else if (key == "vector") {
      spec.obs_mode = ObsMode::Vector;
    } else if (key == "size") {
      spec.image_size = static_cast<std::size_t>(as_int());
    } else if (key == "disturb") {
      spec.disturbance = true;
    } else if (key == "random_goal" && spec.name == "sparse_goal") {
      spec.random_goal = true;
    } else if (key == "len") {
      spec.episode_len = as_int();
    } else {
      throw ConfigError("unknown option '" + key + "' for environment '" + spec.name + "'");
    }
  }
  if (spec.episode_len <= 0) throw ConfigError("env: episode length must be positive");
  if (spec.image_size < 8) throw ConfigError("env: image size must be >= 8");
  return spec;
}

inline std::unique_ptr<Env> make(const EnvSpec& spec, std::uint64_t seed) {
  if (spec.name == "opposing") return std::make_unique<OpposingTasks>(spec, seed);
  if (spec.name == "sparse_goal") return std::make_unique<SparseGoal>(spec, seed);
  if (spec.name == "multistage") return std::make_unique<MultiStage>(spec, seed);
  throw ConfigError("unknown environment '" + spec.name + "'");
}

inline std::unique_ptr<Env> make(const std::string& spec, std::uint64_t seed) { return make(parse_env_spec(spec), seed); }

}  // namespace moerl::envs
