#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "moerl/autodiff/init.hpp"
#include "moerl/autodiff/tensor.hpp"

namespace moerl::rl {

struct Transition {
  std::vector<double> obs;
  std::vector<double> action;
  double reward = 0.0;
  std::vector<double> next_obs;
  bool done = false;       // terminal: no bootstrap beyond this transition
  bool truncated = false;  // time limit: episode ends but the value bootstraps
  int group = 0;           // task id or stage label at the start of the step
};

// n-step view of one stored transition.
struct NStepSample {
  std::size_t index = 0;
  double reward = 0.0;    // Σ_{j<k} γ^j r_{t+j}, k ≤ n
  double discount = 0.0;  // γ^k, or 0 when the window ended in a terminal state
  std::size_t bootstrap = 0;  // transition whose next_obs is bootstrapped from
};

struct Batch {
  Tensor obs;       // [B × obs_size]
  Tensor action;    // [B × action_dim]
  Tensor reward;    // [B]
  Tensor discount;  // [B]
  Tensor next_obs;  // [B × obs_size]
  std::vector<int> groups;
  std::size_t size() const { return groups.size(); }
};

// Chronological ring of transitions. n-step windows never cross an episode
// boundary; windows that would need transitions not yet written are invalid.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t nstep, double gamma)
      : capacity_(capacity), nstep_(nstep), gamma_(gamma) {
    if (capacity_ == 0) throw ConfigError("replay capacity must be positive");
    if (nstep_ == 0) throw ConfigError("nstep must be positive");
    if (!(gamma_ >= 0.0 && gamma_ <= 1.0)) throw ConfigError("gamma must be in [0, 1]");
  }

  void add(Transition t) {
    for (double v : t.action) {
      if (v < -1.0 || v > 1.0) throw ContractError("replay: action out of bounds");
    }
    if (!std::isfinite(t.reward)) throw ContractError("replay: non-finite reward");
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t nstep() const { return nstep_; }
  double gamma() const { return gamma_; }

  // Logical index 0 is the oldest stored transition.
  const Transition& at(std::size_t i) const { return data_[(head_ + i) % data_.size()]; }

  std::optional<NStepSample> nstep(std::size_t i) const {
    if (i >= data_.size()) return std::nullopt;
    NStepSample s;
    s.index = i;
    double g = 1.0;
    for (std::size_t j = 0; j < nstep_; ++j) {
      const std::size_t k = i + j;
      const Transition& t = at(k);
      s.reward += g * t.reward;
      g *= gamma_;
      s.bootstrap = k;
      if (t.done) {
        s.discount = 0.0;
        return s;
      }
      if (t.truncated) {
        s.discount = g;
        return s;
      }
      if (j + 1 < nstep_ && k + 1 >= data_.size()) return std::nullopt;
    }
    s.discount = g;
    return s;
  }

  Batch sample(std::size_t batch_size, Rng& rng) const { return gather(draw(batch_size, rng, nullptr)); }

  // Uniform over valid windows whose first transition has the given group.
  Batch sample_group(std::size_t batch_size, int group, Rng& rng) const {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (at(i).group == group && nstep(i)) pool.push_back(i);
    }
    return gather(draw(batch_size, rng, &pool));
  }

  std::size_t count_group(int group) const {
    std::size_t n = 0;
    for (const auto& t : data_) n += t.group == group ? 1 : 0;
    return n;
  }

  // Observations of up to `n` uniformly drawn transitions, as [n × obs_size].
  Tensor sample_obs(std::size_t n, Rng& rng) const {
    if (data_.empty()) throw ContractError("replay: empty buffer");
    std::uniform_int_distribution<std::size_t> u(0, data_.size() - 1);
    const std::size_t d = data_.front().obs.size();
    Tensor out(Shape{n, d});
    for (std::size_t b = 0; b < n; ++b) {
      const auto& o = at(u(rng)).obs;
      std::copy(o.begin(), o.end(), out.row(b).begin());
    }
    return out;
  }

 private:
  std::vector<NStepSample> draw(std::size_t batch_size, Rng& rng, const std::vector<std::size_t>* pool) const {
    std::vector<NStepSample> out;
    if (data_.empty() || (pool && pool->empty())) return out;
    const std::size_t n = pool ? pool->size() : data_.size();
    std::uniform_int_distribution<std::size_t> u(0, n - 1);
    std::size_t attempts = 0;
    while (out.size() < batch_size) {
      const std::size_t i = pool ? (*pool)[u(rng)] : u(rng);
      if (auto s = nstep(i)) out.push_back(*s);
      if (++attempts > 100 * batch_size + 1000) break;
    }
    return out;
  }

  Batch gather(const std::vector<NStepSample>& samples) const {
    Batch b;
    const std::size_t B = samples.size();
    if (B == 0) return b;
    const std::size_t od = at(samples[0].index).obs.size();
    const std::size_t ad = at(samples[0].index).action.size();
    b.obs = Tensor(Shape{B, od});
    b.next_obs = Tensor(Shape{B, od});
    b.action = Tensor(Shape{B, ad});
    b.reward = Tensor(Shape{B});
    b.discount = Tensor(Shape{B});
    for (std::size_t r = 0; r < B; ++r) {
      const Transition& t = at(samples[r].index);
      const Transition& last = at(samples[r].bootstrap);
      std::copy(t.obs.begin(), t.obs.end(), b.obs.row(r).begin());
      std::copy(t.action.begin(), t.action.end(), b.action.row(r).begin());
      std::copy(last.next_obs.begin(), last.next_obs.end(), b.next_obs.row(r).begin());
      b.reward[r] = samples[r].reward;
      b.discount[r] = samples[r].discount;
      b.groups.push_back(t.group);
    }
    return b;
  }

  std::size_t capacity_;
  std::size_t nstep_;
  double gamma_;
  std::vector<Transition> data_;
  std::size_t head_ = 0;  // oldest element once the ring is full
};

// stddev(frame) = init + (final − init)·min(frame / horizon, 1)
struct LinearSchedule {
  double init = 1.0;
  double final = 0.1;
  double horizon = 100000.0;

  double operator()(double frame) const {
    const double mix = horizon <= 0.0 ? 1.0 : std::clamp(frame / horizon, 0.0, 1.0);
    return init + (final - init) * mix;
  }
};

}  // namespace moerl::rl
