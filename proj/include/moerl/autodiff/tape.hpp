#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "moerl/autodiff/tensor.hpp"

namespace moerl {

// A trainable leaf: value plus an accumulated gradient of the same shape.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value)
      : name(std::move(name)), value(std::move(value)), grad(this->value.shape()) {}

  void zero_grad() { std::fill(grad.storage().begin(), grad.storage().end(), 0.0); }

  std::string name;
  Tensor value;
  Tensor grad;
};

// Handle to a node recorded on a Tape.
struct Var {
  std::uint32_t id = 0;
};

// Define-by-run reverse-mode tape. Nodes are appended in evaluation order, so
// walking them backwards is a valid topological order.
class Tape {
 public:
  Tape() = default;
  // With grad disabled, parameters enter as constants and no backward
  // closures are recorded.
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  struct Node;
  // Called during backward with the node's accumulated output gradient.
  using Backward = std::function<void(Tape&, const Node&)>;

  struct Node {
    Tensor value;
    std::vector<double> grad;  // empty until something flows into it
    bool requires_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

  // Leaf whose gradient is read back through grad(); used for inputs under test.
  Var input(Tensor value) { return push(std::move(value), true, nullptr); }

  // Leaf bound to a Parameter; backward() accumulates into param.grad.
  Var param(Parameter& p) {
    if (!grad_enabled_) return push(p.value, false, nullptr);
    Var v = push(p.value, true, nullptr);
    nodes_[v.id].param = &p;
    return v;
  }

  // Parameter value as a constant, e.g. a critic evaluated inside the actor loss.
  Var frozen(const Parameter& p) { return push(p.value, false, nullptr); }

  Var record(Tensor value, bool requires_grad, Backward backward) {
    if (!value.all_finite()) throw NumericError("non-finite value produced on tape");
    return push(std::move(value), requires_grad, requires_grad ? std::move(backward) : Backward{});
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient of the last backward() w.r.t. a node; zeros if nothing reached it.
  std::vector<double> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
    return n.grad;
  }

  // Mutable gradient buffer for an input node, allocated on first touch.
  // Returns an empty span when the node does not require grad.
  std::span<double> grad_buffer(Var v) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return {};
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  void backward(Var loss) {
    if (nodes_.empty()) throw ContractError("backward on an empty tape");
    Node& root = nodes_.at(loss.id);
    if (root.value.size() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " + shape_str(root.value.shape()));
    }
    if (!root.requires_grad) return;
    // Interior and parameter-leaf buffers restart from zero; input leaves keep
    // accumulating across calls, as Parameter::grad does.
    for (auto& n : nodes_) {
      if (n.backward || n.param != nullptr) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    }
    if (root.backward || root.param != nullptr || root.grad.empty()) root.grad.assign(1, 0.0);
    root.grad[0] += 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.requires_grad) continue;
      if (n.backward) n.backward(*this, n);
      if (n.param != nullptr) {
        auto& g = n.param->grad.storage();
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += n.grad[j];
      }
    }
  }

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  Var push(Tensor value, bool requires_grad, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

}  // namespace moerl
