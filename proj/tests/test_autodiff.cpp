#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "moerl/autodiff/augment.hpp"
#include "moerl/autodiff/optim.hpp"
#include "moerl/moe/moe.hpp"
#include "moerl/nn/layers.hpp"
#include "support/fd.hpp"

using namespace moerl;
using moerl::testing::away_from_zero;
using moerl::testing::fd_max_rel_err;
using moerl::testing::uniform;

namespace {

constexpr double kFdTol = 1e-4;

// Contracts an op output against a fixed random weighting so every output
// coordinate carries a distinct gradient.
Var probe(Tape& t, Var v, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Var w = t.constant(uniform(t.value(v).shape(), rng));
  return ops::sum(t, ops::mul(t, v, w));
}

std::vector<double> values(Tape& t, Var v) { return t.value(v).storage(); }

}  // namespace

TEST(Tensor, DataLengthMustMatchShape) {
  EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_EQ(Tensor(Shape{2, 3}).size(), 6u);
}

TEST(Matmul, IdentityAndHandProduct) {
  Tape t;
  Var x = t.constant(Tensor::matrix({{1, 2, 3}, {4, 5, 6}}));
  Var i2 = t.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  const Tensor ix = t.value(ops::matmul(t, i2, x));  // copy: tape growth invalidates value refs
  EXPECT_EQ(ix, t.value(x));
  Var a = t.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Var b = t.constant(Tensor::matrix({{1}, {1}}));
  EXPECT_EQ(t.value(ops::matmul(t, a, b)), Tensor::matrix({{3}, {7}}));
}

TEST(Matmul, ShapeMismatchIsDimensionError) {
  Tape t;
  Var a = t.constant(Tensor(Shape{2, 3}));
  Var b = t.constant(Tensor(Shape{2, 3}));
  EXPECT_THROW(ops::matmul(t, a, b), DimensionError);
}

TEST(Matmul, GradMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  const double err = fd_max_rel_err([](Tape& t, const std::vector<Var>& v) { return ops::sum(t, ops::matmul(t, v[0], v[1])); },
                                    {uniform({3, 4}, rng), uniform({4, 5}, rng)});
  EXPECT_LT(err, kFdTol);
  const double err2 = fd_max_rel_err([](Tape& t, const std::vector<Var>& v) { return probe(t, ops::matmul(t, v[0], v[1])); },
                                     {uniform({5, 2}, rng), uniform({2, 3}, rng)});
  EXPECT_LT(err2, kFdTol);
}

TEST(Elementwise, ReluAndTanhValues) {
  Tape t;
  Var x = t.input(Tensor::vector({-1, 0, 2}));
  EXPECT_EQ(values(t, ops::relu(t, x)), (std::vector<double>{0, 0, 2}));
  Var r = ops::sum(t, ops::relu(t, x));
  t.backward(r);
  EXPECT_EQ(t.grad(x), (std::vector<double>{0, 0, 1}));  // relu'(0) = 0

  Tape t2;
  Var z = t2.input(Tensor::scalar(0.0));
  Var y = ops::tanh(t2, z);
  EXPECT_EQ(t2.value(y).item(), 0.0);
  t2.backward(y);
  EXPECT_EQ(t2.grad(z)[0], 1.0);
}

TEST(Elementwise, UnsupportedBroadcastIsDimensionError) {
  Tape t;
  Var a = t.constant(Tensor(Shape{2, 3}));
  Var b = t.constant(Tensor(Shape{3, 2}));
  EXPECT_THROW(ops::add(t, a, b), DimensionError);
  EXPECT_THROW(ops::mul(t, a, b), DimensionError);
  Var s = t.constant(Tensor::scalar(2.0));
  EXPECT_EQ(t.value(ops::mul(t, a, s)).shape(), (Shape{2, 3}));
}

TEST(Elementwise, GradsMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  using V = const std::vector<Var>&;
  const std::vector<std::pair<const char*, moerl::testing::LossFn>> cases = {
      {"add", [](Tape& t, V v) { return probe(t, ops::add(t, v[0], v[1])); }},
      {"sub", [](Tape& t, V v) { return probe(t, ops::sub(t, v[0], v[1])); }},
      {"mul", [](Tape& t, V v) { return probe(t, ops::mul(t, v[0], v[1])); }},
      {"scale", [](Tape& t, V v) { return probe(t, ops::scale(t, v[0], -1.7)); }},
      {"add_scalar", [](Tape& t, V v) { return probe(t, ops::add_scalar(t, v[0], 0.3)); }},
      {"relu", [](Tape& t, V v) { return probe(t, ops::relu(t, v[0])); }},
      {"tanh", [](Tape& t, V v) { return probe(t, ops::tanh(t, v[0])); }},
      {"square", [](Tape& t, V v) { return probe(t, ops::square(t, v[0])); }},
      {"mean", [](Tape& t, V v) { return ops::scale(t, ops::mean(t, ops::mul(t, v[0], v[1])), 3.0); }},
      {"mean_rows", [](Tape& t, V v) { return probe(t, ops::mean_rows(t, ops::mul(t, v[0], v[1]))); }},
      {"concat_cols", [](Tape& t, V v) { return probe(t, ops::concat_cols(t, v[0], v[1])); }},
      {"reshape", [](Tape& t, V v) { return probe(t, ops::reshape(t, ops::mul(t, v[0], v[1]), Shape{4, 3})); }},
  };
  for (const auto& [name, f] : cases) {
    const double err = fd_max_rel_err(f, {away_from_zero({3, 4}, rng), away_from_zero({3, 4}, rng)});
    EXPECT_LT(err, kFdTol) << name;
  }
}

TEST(Elementwise, ScalarBroadcastGradMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  const double err = fd_max_rel_err(
      [](Tape& t, const std::vector<Var>& v) { return probe(t, ops::mul(t, v[0], v[1])); },
      {uniform({2, 3}, rng), uniform({}, rng)});
  EXPECT_LT(err, kFdTol);
}

TEST(RowOps, AddBiasAndScaleRowsGrads) {
  std::mt19937_64 rng(4);
  EXPECT_LT(fd_max_rel_err([](Tape& t, const std::vector<Var>& v) { return probe(t, ops::add_bias(t, v[0], v[1])); },
                           {uniform({4, 3}, rng), uniform({3}, rng)}),
            kFdTol);
  EXPECT_LT(fd_max_rel_err(
                [](Tape& t, const std::vector<Var>& v) { return probe(t, ops::scale_rows(t, v[0], v[1], 2)); },
                {uniform({4, 3}, rng), uniform({4, 5}, rng)}),
            kFdTol);
}

TEST(Softmax, ValuesAndSimplex) {
  Tape t;
  auto sm = [&](std::vector<double> x) { return values(t, ops::softmax(t, t.constant(Tensor::vector(x)))); };
  const auto half = sm({0, 0});
  EXPECT_DOUBLE_EQ(half[0], 0.5);
  EXPECT_DOUBLE_EQ(half[1], 0.5);
  const auto p = sm({2, 1});
  EXPECT_NEAR(p[0], 0.7311, 1e-4);
  EXPECT_NEAR(p[1], 0.2689, 1e-4);
  // direct exp/(sum exp) evaluation
  EXPECT_NEAR(p[0], std::exp(2.0) / (std::exp(2.0) + std::exp(1.0)), 1e-15);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = uniform({3, 7}, rng, -30, 30);
    const Tensor y = t.value(ops::softmax(t, t.constant(x)));
    Tensor shifted = x;
    for (auto& v : shifted.storage()) v += 123.0;
    const Tensor ys = t.value(ops::softmax(t, t.constant(shifted)));
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GE(y(r, c), 0.0);
        EXPECT_NEAR(y(r, c), ys(r, c), 1e-12);
        s += y(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  Tape t;
  const auto p = values(t, ops::softmax(t, t.constant(Tensor::vector({1000.0, 999.0}))));
  EXPECT_NEAR(p[0], 0.7311, 1e-4);
}

TEST(Softmax, EmptyAxisIsDimensionError) {
  Tape t;
  EXPECT_THROW(ops::softmax(t, t.constant(Tensor(Shape{2, 0}))), DimensionError);
}

TEST(Softmax, GradMatchesFiniteDifferencesOnEveryAxis) {
  std::mt19937_64 rng(6);
  for (int axis : {0, 1, -1}) {
    const double err = fd_max_rel_err(
        [axis](Tape& t, const std::vector<Var>& v) { return probe(t, ops::softmax(t, v[0], axis)); },
        {uniform({2, 3, 4}, rng, -2, 2)});
    EXPECT_LT(err, kFdTol) << "axis " << axis;
  }
}

TEST(SumPlogp, GradMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  const double err = fd_max_rel_err(
      [](Tape& t, const std::vector<Var>& v) { return ops::sum_plogp(t, ops::mean_rows(t, ops::softmax(t, v[0]))); },
      {uniform({5, 4}, rng, -2, 2)});
  EXPECT_LT(err, kFdTol);
}

TEST(Conv2d, HandValuesAndShapes) {
  Tape t;
  Var x = t.constant(Tensor(Shape{1, 1, 2, 2}, {1, 2, 3, 4}));
  Var ones = t.constant(Tensor(Shape{1, 1, 2, 2}, 1.0));
  EXPECT_EQ(values(t, ops::conv2d(t, x, ones, 1)), std::vector<double>{10});
  Var id = t.constant(Tensor(Shape{1, 1, 1, 1}, 1.0));
  const Tensor same = t.value(ops::conv2d(t, x, id, 1));
  EXPECT_EQ(same, t.value(x));

  Var big = t.constant(Tensor(Shape{2, 3, 9, 7}));
  Var w = t.constant(Tensor(Shape{4, 3, 3, 3}));
  EXPECT_EQ(t.value(ops::conv2d(t, big, w, 2)).shape(), (Shape{2, 4, 4, 3}));
  Var w5 = t.constant(Tensor(Shape{1, 1, 3, 3}));
  EXPECT_THROW(ops::conv2d(t, x, w5, 1), DimensionError);
  EXPECT_THROW(ops::conv2d(t, big, w5, 1), DimensionError);  // channel mismatch
}

TEST(Conv2d, GradMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  for (std::size_t stride : {1u, 2u}) {
    const double err = fd_max_rel_err(
        [stride](Tape& t, const std::vector<Var>& v) {
          return probe(t, ops::add_channel_bias(t, ops::conv2d(t, v[0], v[1], stride), v[2]));
        },
        {uniform({2, 2, 6, 5}, rng), uniform({3, 2, 3, 3}, rng), uniform({3}, rng)});
    EXPECT_LT(err, kFdTol) << "stride " << stride;
  }
}

TEST(TopkGate, GradMatchesFiniteDifferencesAwayFromTies) {
  // logits spaced by ≥ 0.1, far beyond the finite-difference step
  Tensor logits(Shape{3, 5}, {0.3, -0.4, 1.2, 0.9, -1.0, 2.0, 1.1, -0.2, 0.5, 0.0, -0.5, -1.5, 0.7, 1.6, 0.2});
  const double err = fd_max_rel_err(
      [](Tape& t, const std::vector<Var>& v) { return probe(t, moe::topk_gate(t, v[0], 2)); }, {logits});
  EXPECT_LT(err, kFdTol);
}

TEST(RandomShift, IdentityShapeAndDeterminism) {
  std::mt19937_64 data_rng(9);
  Tensor x = uniform({2, 3, 84, 84}, data_rng);
  Rng rng(1);
  EXPECT_EQ(random_shift(x, 0, rng), x);
  Rng r1(42), r2(42);
  const Tensor a = random_shift(x, 4, r1);
  const Tensor b = random_shift(x, 4, r2);
  EXPECT_EQ(a.shape(), x.shape());
  EXPECT_EQ(a, b);
}

TEST(RandomShift, EverySampleIsAReplicatePaddedCrop) {
  const std::size_t B = 16, C = 2, H = 9, W = 11, pad = 4;
  Tensor x(Shape{B, C, H, W});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  Rng rng(3);
  const Tensor y = random_shift(x, pad, rng);
  // oracle: build the padded image explicitly and search all offsets in [0, 2·pad]²
  for (std::size_t b = 0; b < B; ++b) {
    bool found = false;
    for (std::size_t dy = 0; dy <= 2 * pad && !found; ++dy) {
      for (std::size_t dx = 0; dx <= 2 * pad && !found; ++dx) {
        bool match = true;
        for (std::size_t c = 0; c < C && match; ++c) {
          for (std::size_t i = 0; i < H && match; ++i) {
            for (std::size_t j = 0; j < W && match; ++j) {
              const long pi = static_cast<long>(i + dy) - static_cast<long>(pad);
              const long pj = static_cast<long>(j + dx) - static_cast<long>(pad);
              const std::size_t si = static_cast<std::size_t>(std::min<long>(std::max<long>(pi, 0), H - 1));
              const std::size_t sj = static_cast<std::size_t>(std::min<long>(std::max<long>(pj, 0), W - 1));
              match = y[((b * C + c) * H + i) * W + j] == x[((b * C + c) * H + si) * W + sj];
            }
          }
        }
        found = match;
      }
    }
    EXPECT_TRUE(found) << "sample " << b;
  }
}

TEST(Backward, SumOfParamsGivesOnesAndAccumulates) {
  Parameter p("theta", Tensor(Shape{2, 2}, {1, 2, 3, 4}));
  Tape t;
  Var loss = ops::sum(t, t.param(p));
  t.backward(loss);
  EXPECT_EQ(p.grad.storage(), (std::vector<double>{1, 1, 1, 1}));
  t.backward(loss);
  EXPECT_EQ(p.grad.storage(), (std::vector<double>{2, 2, 2, 2}));
  p.zero_grad();
  EXPECT_EQ(p.grad.storage(), (std::vector<double>{0, 0, 0, 0}));
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
  // y = x·x + x has dy/dx = 2x + 1
  Tape t;
  Var x = t.input(Tensor::vector({1.5, -2.0}));
  Var y = ops::sum(t, ops::add(t, ops::mul(t, x, x), x));
  t.backward(y);
  EXPECT_EQ(t.grad(x), (std::vector<double>{4.0, -3.0}));
}

TEST(Backward, ContractErrors) {
  Tape empty;
  EXPECT_THROW(empty.backward(Var{0}), ContractError);
  Tape t;
  Var x = t.input(Tensor::vector({1, 2}));
  EXPECT_THROW(t.backward(ops::relu(t, x)), ContractError);
}

TEST(Backward, NonFiniteValuesAreErrors) {
  Tape t;
  Var x = t.input(Tensor::vector({1e308, 1.0}));
  EXPECT_THROW(ops::scale(t, x, 10.0), NumericError);
}

TEST(Backward, ClearFreesNodes) {
  Tape t;
  Var x = t.input(Tensor::vector({1, 2}));
  ops::sum(t, ops::square(t, x));
  EXPECT_EQ(t.size(), 3u);
  t.clear();
  EXPECT_EQ(t.size(), 0u);
}

TEST(Backward, DetachBlocksGradient) {
  Tape t;
  Var x = t.input(Tensor::vector({1, 2}));
  Var y = ops::sum(t, ops::add(t, ops::detach(t, ops::square(t, x)), x));
  t.backward(y);
  EXPECT_EQ(t.grad(x), (std::vector<double>{1, 1}));
}

TEST(Backward, TwoLayerMlpMatchesFiniteDifferences) {
  Rng rng(10);
  nn::Linear l1("l1", 5, 7, rng), l2("l2", 7, 3, rng);
  std::mt19937_64 drng(11);
  const Tensor x = uniform({4, 5}, drng);
  auto forward = [&](Tape& t) { return probe(t, ops::tanh(t, l2.forward(t, ops::relu(t, l1.forward(t, t.constant(x)))))); };
  nn::ParamList params;
  l1.collect(params);
  l2.collect(params);
  const double err = moerl::testing::fd_params_max_rel_err(
      params,
      [&] {
        Tape t(false);
        return t.value(forward(t)).item();
      },
      [&] {
        Tape t;
        t.backward(forward(t));
      });
  EXPECT_LT(err, kFdTol);
}

TEST(Backward, DeterministicAcrossIdenticalSeeds) {
  auto run = [] {
    Rng rng(12);
    nn::Linear l1("l1", 6, 8, rng), l2("l2", 8, 2, rng);
    std::mt19937_64 drng(13);
    Tape t;
    Var y = probe(t, l2.forward(t, ops::relu(t, l1.forward(t, t.constant(uniform({3, 6}, drng))))));
    t.backward(y);
    std::vector<double> out = {t.value(y).item()};
    for (auto* p : std::vector<Parameter*>{&l1.weight, &l1.bias, &l2.weight, &l2.bias}) {
      out.insert(out.end(), p->grad.storage().begin(), p->grad.storage().end());
    }
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Init, OrthogonalRowsOrColumns) {
  Rng rng(14);
  for (auto [r, c] : {std::pair<std::size_t, std::size_t>{8, 5}, {5, 8}, {6, 6}}) {
    const Tensor w = orthogonal(Shape{r, c}, r, c, 1.0, rng);
    const bool by_rows = r <= c;
    const std::size_t n = by_rows ? r : c;
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = 0; b < n; ++b) {
        double dot = 0.0;
        for (std::size_t k = 0; k < (by_rows ? c : r); ++k) {
          dot += by_rows ? w(a, k) * w(b, k) : w(k, a) * w(k, b);
        }
        EXPECT_NEAR(dot, a == b ? 1.0 : 0.0, 1e-12);
      }
    }
  }
}

TEST(Adam, FirstStepMovesBySignTimesLr) {
  Parameter p("w", Tensor::vector({1.0, -2.0, 0.5}));
  p.grad = Tensor::vector({0.3, -4.0, 0.0});
  Adam opt(AdamConfig{0.01});
  std::vector<Parameter*> ps{&p};
  opt.step(ps);
  // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps)
  EXPECT_NEAR(p.value[0], 1.0 - 0.01 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(p.value[1], -2.0 + 0.01 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_EQ(p.value[2], 0.5);
}

TEST(Adam, ResetSlotRestartsBiasCorrection) {
  Parameter a("a", Tensor::vector({0.0})), b("b", Tensor::vector({0.0}));
  std::vector<Parameter*> ps{&a, &b};
  Adam opt(AdamConfig{0.1});
  a.grad = Tensor::vector({1.0});
  b.grad = Tensor::vector({1.0});
  opt.step(ps);
  a.grad = Tensor::vector({-1.0});
  b.grad = Tensor::vector({-1.0});
  opt.reset_slot(0);
  opt.step(ps);
  // a restarted: full-size step of +0.1; b carries momentum and moves less
  EXPECT_NEAR(a.value[0], -0.1 + 0.1, 1e-6);
  EXPECT_GT(b.value[0], -0.1);
  EXPECT_LT(b.value[0], 0.0 - 1e-3);
}
