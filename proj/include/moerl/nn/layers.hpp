#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "moerl/autodiff/init.hpp"
#include "moerl/autodiff/ops.hpp"

namespace moerl::nn {

// Appends every trainable parameter of a module to `out`, in a fixed order.
using ParamList = std::vector<Parameter*>;

// y = x·W + b, W stored as [in × out]. Orthogonal weights, zero bias.
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out, Rng& rng, double gain = 1.0)
      : weight(name + ".weight", orthogonal(Shape{in, out}, in, out, gain, rng)),
        bias(name + ".bias", Tensor(Shape{out})) {}

  // `frozen` feeds the weights in as constants: gradients still reach `x`.
  Var forward(Tape& tape, Var x, bool frozen = false) {
    Var w = frozen ? tape.frozen(weight) : tape.param(weight);
    Var b = frozen ? tape.frozen(bias) : tape.param(bias);
    return ops::add_bias(tape, ops::matmul(tape, x, w), b);
  }

  std::size_t in_features() const { return weight.value.dim(0); }
  std::size_t out_features() const { return weight.value.dim(1); }
  std::size_t num_params() const { return weight.value.size() + bias.value.size(); }

  void collect(ParamList& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Parameter weight;
  Parameter bias;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride, Rng& rng)
      : weight(name + ".weight",
               orthogonal(Shape{out_ch, in_ch, kernel, kernel}, out_ch, in_ch * kernel * kernel, std::sqrt(2.0), rng)),
        bias(name + ".bias", Tensor(Shape{out_ch})),
        stride_(stride) {}

  Var forward(Tape& tape, Var x) {
    return ops::add_channel_bias(tape, ops::conv2d(tape, x, tape.param(weight), stride_), tape.param(bias));
  }

  std::size_t num_params() const { return weight.value.size() + bias.value.size(); }

  void collect(ParamList& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Parameter weight;
  Parameter bias;

 private:
  std::size_t stride_ = 1;
};

}  // namespace moerl::nn
