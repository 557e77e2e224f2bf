// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "gtex/adam.hpp"
#include "gtex/gradcheck.hpp"
#include "gtex/tensor.hpp"

using namespace gtex;
using namespace gtex::ad;

namespace {

// Independent oracle: naive triple-loop product.
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t l = 0; l < k; ++l) c[i * n + j] += a[i * k + l] * b[l * n + j];
  return c;
}

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, bool rg = false) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor(std::move(shape), std::move(v), rg);
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor m({3, 3}, {2, -1, 5, 0, 3, 7, 4, 4, -2});
  Tensor out = matmul(nullptr, eye, m);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(out.value()[i], m.value()[i]);
}

TEST(Matmul, HandComputedProduct) {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 1}, {1, 1});
  Tensor out = matmul(nullptr, a, b);
  EXPECT_DOUBLE_EQ(out.at(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(out.at(1, 0), 7.0);
}

TEST(Matmul, MatchesTripleLoopOracle) {
  Rng rng(101);
  Tensor a = random_tensor({7, 5}, rng);
  Tensor b = random_tensor({5, 4}, rng);
  Tensor out = matmul(nullptr, a, b);
  auto expect = matmul_oracle({a.value().begin(), a.value().end()},
                              {b.value().begin(), b.value().end()}, 7, 5, 4);
  for (std::size_t i = 0; i < expect.size(); ++i)
    EXPECT_NEAR(out.value()[i], expect[i], 1e-12);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(nullptr, a, b);
    FAIL() << "expected dimension error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[4x2]"), std::string::npos);
  }
}

TEST(Elementwise, ReluClampsNegatives) {
  Tensor x({3}, {-1, 0, 2});
  Tensor y = relu(nullptr, x);
  EXPECT_DOUBLE_EQ(y.value()[0], 0.0);
  EXPECT_DOUBLE_EQ(y.value()[1], 0.0);
  EXPECT_DOUBLE_EQ(y.value()[2], 2.0);
}

TEST(Elementwise, SoftplusAtZeroIsLn2) {
  Tensor x({1}, {0.0});
  EXPECT_NEAR(softplus(nullptr, x).item(), std::log(2.0), 1e-15);
}

TEST(Elementwise, TanhGradientMatchesFiniteDifferences) {
  Rng rng(7);
  Tensor x = random_tensor({6}, rng);
  auto fn = [](Tape* t, const Tensor& p) { return sum(t, tanh_act(t, p)); };
  EXPECT_LE(grad_check(fn, x, 1e-6), 1e-7);
}

TEST(Elementwise, IncompatibleShapesThrow) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 2});
  EXPECT_THROW(add(nullptr, a, b), Error);
}

TEST(Elementwise, RowBroadcastAddsBiasPerRow) {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({3}, {10, 20, 30});
  Tensor y = add(nullptr, a, b);
  EXPECT_DOUBLE_EQ(y.at(0, 0), 11.0);
  EXPECT_DOUBLE_EQ(y.at(1, 2), 36.0);
}

TEST(L1Mean, ExactMatchIsZero) {
  Tensor p({2, 2}, {1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(l1_mean(nullptr, p, p).item(), 0.0);
}

TEST(L1Mean, SingleRowHandValue) {
  Tensor p({1, 2}, {1, 1});
  Tensor t({1, 2}, {0, 3});
  EXPECT_DOUBLE_EQ(l1_mean(nullptr, p, t).item(), 3.0);
}

TEST(L1Mean, MatchesLoopOracle) {
  Rng rng(33);
  Tensor p = random_tensor({16, 3}, rng);
  Tensor t = random_tensor({16, 3}, rng);
  double expect = 0.0;
  for (std::size_t i = 0; i < 16; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 3; ++j) row += std::abs(p.at(i, j) - t.at(i, j));
    expect += row;
  }
  expect /= 16.0;
  EXPECT_NEAR(l1_mean(nullptr, p, t).item(), expect, 1e-12);
}

TEST(L1Mean, EmptyBatchThrows) {
  Tensor p = Tensor::zeros({0, 3});
  Tensor t = Tensor::zeros({0, 3});
  EXPECT_THROW(l1_mean(nullptr, p, t), Error);
}

TEST(Backward, SumSeedsOnesEverywhere) {
  Tensor x = Tensor::zeros({4}, true);
  Tape tape;
  Tensor root = sum(&tape, x);
  backward(root, tape);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, WeightGradientMatchesFiniteDifferences) {
  Rng rng(55);
  Tensor w = random_tensor({4, 3}, rng, true);
  Tensor x = random_tensor({3, 2}, rng);
  Tensor zero = Tensor::zeros({4, 2});

  Tape tape;
  Tensor loss = l1_mean(&tape, matmul(&tape, w, x), zero);
  backward(loss, tape);

  auto eval = [&](const std::vector<double>& wv) {
    Tensor wt({4, 3}, std::vector<double>(wv));
    return l1_mean(nullptr, matmul(nullptr, wt, x), zero).item();
  };
  std::vector<double> base(w.value().begin(), w.value().end());
  const double eps = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto probe = base;
    probe[i] = base[i] + eps;
    double fp = eval(probe);
    probe[i] = base[i] - eps;
    double fm = eval(probe);
    double fd = (fp - fm) / (2 * eps);
    double denom = std::max({1.0, std::abs(fd), std::abs(w.grad()[i])});
    worst = std::max(worst, std::abs(fd - w.grad()[i]) / denom);
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(Backward, UnusedParameterKeepsZeroGradient) {
  Tensor used = Tensor::zeros({2}, true);
  Tensor unused = Tensor::zeros({2}, true);
  Tape tape;
  Tensor root = sum(&tape, used);
  backward(root, tape);
  for (double g : unused.grad()) EXPECT_DOUBLE_EQ(g, 0.0);
}

TEST(Backward, NonScalarRootThrows) {
  Tensor x = Tensor::zeros({3}, true);
  Tape tape;
  Tensor y = relu(&tape, x);
  EXPECT_THROW(backward(y, tape), Error);
}

TEST(Backward, DeterministicBitIdenticalGradients) {
  Rng rng(91);
  Tensor w = random_tensor({8, 8}, rng, true);
  Tensor x = random_tensor({8, 4}, rng);
  auto run = [&]() {
    w.zero_grad();
    Tape tape;
    Tensor h = softplus(&tape, matmul(&tape, w, x));
    Tensor root = sum(&tape, tanh_act(&tape, h));
    backward(root, tape);
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  auto g1 = run();
  auto g2 = run();
  for (std::size_t i = 0; i < g1.size(); ++i) {
    EXPECT_EQ(g1[i], g2[i]);  // bit-identical
  }
}

TEST(Tape, ReplayReproducesForwardBitExactly) {
  Rng rng(17);
  Tensor w = random_tensor({5, 5}, rng, true);
  Tensor x = random_tensor({5, 3}, rng);
  Tape tape;
  Tensor h = sigmoid(&tape, matmul(&tape, w, x));
  Tensor y = sum(&tape, mul(&tape, h, h));

  std::vector<std::vector<double>> snapshots;
  for (std::size_t i = 0; i < tape.size(); ++i) {
    auto v = tape.node(i).output.value();
    snapshots.emplace_back(v.begin(), v.end());
  }
  tape.replay();
  for (std::size_t i = 0; i < tape.size(); ++i) {
    auto v = tape.node(i).output.value();
    for (std::size_t j = 0; j < snapshots[i].size(); ++j) EXPECT_EQ(v[j], snapshots[i][j]);
  }
  (void)y;
}

// Gradient vs central differences for every registered op kind, on random
// inputs away from non-differentiable points.
TEST(Gradients, AllOpKindsPassFiniteDifferenceCheck) {
  Rng rng(2024);
  struct Case {
    const char* name;
    ScalarFn fn;
  };
  Tensor other = random_tensor({4, 3}, rng);
  Tensor row = random_tensor({3}, rng);
  std::vector<Case> cases = {
      {"add", [&](Tape* t, const Tensor& p) { return sum(t, add(t, p, other)); }},
      {"add_rowbc", [&](Tape* t, const Tensor& p) { return sum(t, add(t, p, row)); }},
      {"sub", [&](Tape* t, const Tensor& p) { return sum(t, sub(t, p, other)); }},
      {"mul", [&](Tape* t, const Tensor& p) { return sum(t, mul(t, p, other)); }},
      {"relu", [](Tape* t, const Tensor& p) { return sum(t, relu(t, p)); }},
      {"softplus", [](Tape* t, const Tensor& p) { return sum(t, softplus(t, p)); }},
      {"tanh", [](Tape* t, const Tensor& p) { return sum(t, tanh_act(t, p)); }},
      {"sigmoid", [](Tape* t, const Tensor& p) { return sum(t, sigmoid(t, p)); }},
      {"sin", [](Tape* t, const Tensor& p) { return sum(t, sin_act(t, p)); }},
      {"cos", [](Tape* t, const Tensor& p) { return sum(t, cos_act(t, p)); }},
      {"scale", [](Tape* t, const Tensor& p) { return sum(t, scale(t, p, -2.5)); }},
      {"clamp", [](Tape* t, const Tensor& p) { return sum(t, clamp(t, p, -0.6, 0.6)); }},
      {"matmul",
       [&](Tape* t, const Tensor& p) {
         Tensor m({3, 2}, {0.3, -0.4, 0.7, 0.2, -0.9, 0.5});
         return sum(t, matmul(t, p, m));
       }},
      {"linear",
       [&](Tape* t, const Tensor& p) {
         Tensor m({3, 2}, {0.3, -0.4, 0.7, 0.2, -0.9, 0.5});
         Tensor bias({2}, {0.1, -0.6});
         return sum(t, tanh_act(t, linear(t, p, m, bias)));
       }},
      {"l1_mean", [&](Tape* t, const Tensor& p) { return l1_mean(t, p, other); }},
      {"concat", [&](Tape* t, const Tensor& p) { return sum(t, concat_cols(t, p, other)); }},
  };
  for (auto& c : cases) {
    Tensor p = random_tensor({4, 3}, rng);
    EXPECT_LE(grad_check(c.fn, p, 1e-6), 1e-5) << c.name;
  }

  // repeat_row takes a row vector; square the tiles so the rule is exercised
  Tensor row_point = random_tensor({1, 6}, rng);
  auto rep_fn = [](Tape* t, const Tensor& p) {
    Tensor tiled = repeat_row(t, p, 5);
    return sum(t, mul(t, tiled, tiled));
  };
  EXPECT_LE(grad_check(rep_fn, row_point, 1e-6), 1e-5) << "repeat_row";
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor w({3}, {1.0, -2.0, 0.5}, true);
  std::vector<double> before(w.value().begin(), w.value().end());
  AdamState st(AdamConfig{.lr = 0.1});
  std::vector<Tensor> params = {w};
  adam_step(params, st);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(w.value()[i], before[i]);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor w({1}, {5.0}, true);
  w.grad()[0] = 1.0;
  AdamState st(AdamConfig{.lr = 0.1});
  std::vector<Tensor> params = {w};
  adam_step(params, st);
  // bias-corrected first step is lr / (1 + eps·scale) = ~0.1
  EXPECT_NEAR(w.item(), 4.9, 1e-6);
  EXPECT_DOUBLE_EQ(w.grad()[0], 0.0);  // zeroed afterward
}

TEST(Adam, ConvergesOnScalarQuadratic) {
  Tensor w({1}, {0.0}, true);
  AdamState st(AdamConfig{.lr = 0.1});
  std::vector<Tensor> params = {w};
  for (int i = 0; i < 100; ++i) {
    Tape tape;
    Tensor target({1}, {3.0});
    Tensor diff = sub(&tape, w, target);
    Tensor loss = sum(&tape, mul(&tape, diff, diff));
    backward(loss, tape);
    adam_step(params, st);
  }
  EXPECT_NEAR(w.item(), 3.0, 0.5);
}

TEST(Adam, MissingGradientNamesParameter) {
  Tensor w = Tensor::zeros({2});
  w.set_name("warp.w0");
  AdamState st;
  std::vector<Tensor> params = {w};
  try {
    adam_step(params, st);
    FAIL() << "expected error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("warp.w0"), std::string::npos);
  }
}

TEST(GradCheck, ExactForLinearFunctions) {
  Rng rng(5);
  Tensor x = random_tensor({5}, rng);
  auto fn = [](Tape* t, const Tensor& p) { return sum(t, scale(t, p, 3.0)); };
  EXPECT_LE(grad_check(fn, x, 1e-5), 1e-9);
}

TEST(GradCheck, NudgesKinkAtZeroCoordinate) {
  Tensor x({3}, {0.0, 0.5, -0.5});  // relu kink exactly at coordinate 0
  auto fn = [](Tape* t, const Tensor& p) { return sum(t, relu(t, p)); };
  EXPECT_LE(grad_check(fn, x, 1e-5), 1e-9);
}

TEST(GradCheck, RejectsNonPositiveEps) {
  Tensor x({1}, {1.0});
  auto fn = [](Tape* t, const Tensor& p) { return sum(t, p); };
  EXPECT_THROW(grad_check(fn, x, 0.0), Error);
}
