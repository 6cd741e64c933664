// Copyright 2026 The volfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "volfuse/gradcheck.hpp"
#include "volfuse/random.hpp"
#include "volfuse/tensor.hpp"

using namespace volfuse;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// sum(y * w) for a fixed random w, so every output coordinate matters.
Tensor project(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, random_tensor(y.shape(), rng, -1.0, 1.0, false)));
}

constexpr double kTol = 1e-5;

}  // namespace

TEST(Softmax, UniformLogits) {
  auto y = softmax(Tensor::from({3}, {0, 0, 0}), 0);
  for (double v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  auto y = softmax(Tensor::from({2}, {1000, 1000}), 0);
  EXPECT_EQ(y[0], 0.5);
  EXPECT_EQ(y[1], 0.5);
}

TEST(Softmax, RejectsNonFiniteInputNamingOperation) {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = {2};
  node->data = {1.0, std::nan("")};
  try {
    softmax(Tensor(node), 0);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("softmax"), std::string::npos);
  }
}

TEST(Softmax, SumsToOneAlongAnyAxis) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({3, 4, 5}, rng, -50.0, 50.0, false);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      auto y = softmax(x, axis);
      auto s = sum_axis(y, axis);
      for (double v : s.data()) EXPECT_NEAR(v, 1.0, 1e-12);
      for (double v : y.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  auto x = random_tensor({6}, rng);
  auto v = random_tensor({6}, rng, -1, 1, false);
  auto f = [&](const Tensor& t) { return sum(mul(softmax(t, 0), v)).item(); };
  auto fd = finite_difference_grad(f, x, 1e-5);
  x.zero_grad();
  backward(sum(mul(softmax(x, 0), v)));
  auto g = x.grad();
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_LE(relative_error(g[i], fd[i]), 1e-6) << i;
}

TEST(Sampling, BilinearNodeQueryMidpointAndPadding) {
  Rng rng(3);
  auto grid = random_tensor({2, 5, 6}, rng, -1, 1, false);
  auto at = [&](std::size_t c, std::size_t row, std::size_t col) { return grid[(c * 5 + row) * 6 + col]; };
  // location (u=2, v=3) is column 2, row 3.
  auto node = sample_bilinear_2d(grid, 2.0, 3.0);
  EXPECT_EQ(node[0], at(0, 3, 2));
  EXPECT_EQ(node[1], at(1, 3, 2));
  auto mid = sample_bilinear_2d(grid, 2.5, 3.0);
  EXPECT_DOUBLE_EQ(mid[0], 0.5 * (at(0, 3, 2) + at(0, 3, 3)));
  auto out = sample_bilinear_2d(grid, -10.0, -10.0);
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(out[1], 0.0);
}

TEST(Sampling, TrilinearNodeQueryMidpointAndPadding) {
  Rng rng(4);
  auto vol = random_tensor({3, 4, 3, 2}, rng, -1, 1, false);
  auto at = [&](std::size_t c, std::size_t x, std::size_t y, std::size_t z) {
    return vol[((c * 4 + x) * 3 + y) * 2 + z];
  };
  auto node = sample_trilinear_3d(vol, 2.0, 1.0, 1.0);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(node[c], at(c, 2, 1, 1));
  auto mid = sample_trilinear_3d(vol, 1.0, 2.0, 0.5);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(mid[c], 0.5 * (at(c, 1, 2, 0) + at(c, 1, 2, 1)));
  auto out = sample_trilinear_3d(vol, 40.0, -7.0, 9.0);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Sampling, LinearBetweenNodes) {
  Rng rng(5);
  auto grid = random_tensor({1, 4, 4}, rng, -1, 1, false);
  const double a = sample_bilinear_2d(grid, 1.0, 2.0)[0];
  const double b = sample_bilinear_2d(grid, 2.0, 2.0)[0];
  for (double t : {0.1, 0.25, 0.7}) {
    EXPECT_NEAR(sample_bilinear_2d(grid, 1.0 + t, 2.0)[0], (1 - t) * a + t * b, 1e-15);
  }
}

TEST(Backward, SumOfLinearIsOnes) {
  auto x = Tensor::from({3}, {1, 2, 3}, true);
  backward(sum(x));
  EXPECT_EQ(x.grad(), (std::vector<double>{1, 1, 1}));
}

TEST(Backward, IndependentLeafHasZeroGrad) {
  auto x = Tensor::from({2}, {1, 2}, true);
  auto y = Tensor::from({2}, {3, 4}, true);
  backward(sum(y));
  EXPECT_EQ(x.grad(), (std::vector<double>{0, 0}));
}

TEST(Backward, QuadraticRule) {
  auto x = Tensor::from({1}, {3}, true);
  backward(sum(mul(x, x)));
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  auto x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(backward(scale(x, 2.0)), NumericError);
}

TEST(Backward, DetectsCycle) {
  auto x = Tensor::from({1}, {1}, true);
  auto y = scale(x, 2.0);
  auto z = scale(y, 2.0);
  // Graphs built through the public API are acyclic; splice one by hand.
  y.node()->inputs.push_back(z.node());
  EXPECT_THROW(backward(sum(z)), NumericError);
  y.node()->inputs.pop_back();
}

TEST(Backward, AccumulatesAcrossCalls) {
  auto x = Tensor::from({1}, {2}, true);
  backward(sum(x));
  backward(sum(x));
  EXPECT_EQ(x.grad()[0], 2.0);
}

TEST(FiniteDifference, AnalyticCases) {
  auto x = Tensor::from({1}, {3.0});
  auto g = finite_difference_grad([](const Tensor& t) { return t[0] * t[0]; }, x, 1e-5);
  EXPECT_NEAR(g[0], 6.0, 1e-6);
  auto c = finite_difference_grad([](const Tensor&) { return 4.2; }, Tensor::from({3}, {1, 2, 3}), 1e-5);
  for (double v : c.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(finite_difference_grad([](const Tensor&) { return 1.0; }, x, 0.0), NumericError);
  EXPECT_THROW(finite_difference_grad([](const Tensor&) { return std::nan(""); }, x, 1e-5), NumericError);
}

TEST(FiniteDifference, SoftmaxCompositeMatchesBackward) {
  Rng rng(21);
  auto x = random_tensor({2, 5}, rng, -2, 2);
  auto report = check_gradients([&] { return project(softmax(mul(x, x), 1), 9); }, {{"x", x}});
  EXPECT_LE(report.max_rel_error, kTol);
}

TEST(Tensor, InvariantsOnConstruction) {
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), NumericError);
  EXPECT_THROW(Tensor::from({2}, {1, std::numeric_limits<double>::infinity()}), NumericError);
  auto r = reshape(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true), {3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_THROW(r.mutable_data(), NumericError);
}

TEST(Tensor, NonFiniteOutputIsAnError) {
  auto big = Tensor::from({1}, {1e200});
  EXPECT_THROW(mul(big, big), NumericError);
}

// ---------------------------------------------------------------------------
// Every operation in the vocabulary against central differences, h = 1e-5.

class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, Add) {
  Rng rng(100 + GetParam());
  auto a = random_tensor({3, 4}, rng), b = random_tensor({1, 4}, rng);
  EXPECT_LE(check_gradients([&] { return project(add(a, b), 1); }, {{"a", a}, {"b", b}}).max_rel_error, kTol);
}

TEST_P(OpGradient, SubAndMulBroadcast) {
  Rng rng(200 + GetParam());
  auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 1, 4}, rng), c = random_tensor({1, 3, 1}, rng);
  auto loss = [&] { return project(mul(sub(a, b), c), 2); };
  EXPECT_LE(check_gradients(loss, {{"a", a}, {"b", b}, {"c", c}}).max_rel_error, kTol);
}

TEST_P(OpGradient, ScaleMatmulLinear) {
  Rng rng(300 + GetParam());
  auto x = random_tensor({2, 3, 4}, rng), w = random_tensor({4, 5}, rng), b = random_tensor({5}, rng);
  auto loss = [&] { return project(scale(linear(x, w, b), 0.7), 3); };
  EXPECT_LE(check_gradients(loss, {{"x", x}, {"w", w}, {"b", b}}).max_rel_error, kTol);
}

TEST_P(OpGradient, BatchedMatmul) {
  Rng rng(400 + GetParam());
  auto a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 4, 2}, rng);
  EXPECT_LE(check_gradients([&] { return project(bmm(a, b), 4); }, {{"a", a}, {"b", b}}).max_rel_error, kTol);
}

TEST_P(OpGradient, SoftmaxEveryAxis) {
  Rng rng(500 + GetParam());
  auto x = random_tensor({3, 4, 2}, rng, -3, 3);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    EXPECT_LE(check_gradients([&] { return project(softmax(x, axis), 5 + axis); }, {{"x", x}}).max_rel_error, kTol);
  }
}

TEST_P(OpGradient, LayerNorm) {
  Rng rng(600 + GetParam());
  auto x = random_tensor({4, 6}, rng, -2, 2), g = random_tensor({6}, rng, 0.5, 1.5), b = random_tensor({6}, rng);
  auto loss = [&] { return project(layer_norm(x, g, b), 6); };
  EXPECT_LE(check_gradients(loss, {{"x", x}, {"gamma", g}, {"beta", b}}).max_rel_error, kTol);
}

TEST_P(OpGradient, Activations) {
  Rng rng(700 + GetParam());
  auto x = random_tensor({10}, rng, -4, 4);
  EXPECT_LE(check_gradients([&] { return project(gelu(x), 7); }, {{"x", x}}).max_rel_error, kTol);
  EXPECT_LE(check_gradients([&] { return project(tanh(x), 8); }, {{"x", x}}).max_rel_error, kTol);
  EXPECT_LE(check_gradients([&] { return project(softplus(x), 9); }, {{"x", x}}).max_rel_error, kTol);
}

TEST_P(OpGradient, Reductions) {
  Rng rng(800 + GetParam());
  auto x = random_tensor({3, 4, 2}, rng);
  EXPECT_LE(check_gradients([&] { return scale(sum(mul(x, x)), 0.5); }, {{"x", x}}).max_rel_error, kTol);
  EXPECT_LE(check_gradients([&] { return mean(mul(x, x)); }, {{"x", x}}).max_rel_error, kTol);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    EXPECT_LE(check_gradients([&] { return project(sum_axis(x, axis), 10 + axis); }, {{"x", x}}).max_rel_error,
              kTol);
    EXPECT_LE(check_gradients([&] { return project(min_axis(x, axis), 20 + axis); }, {{"x", x}}).max_rel_error,
              kTol);
  }
}

TEST_P(OpGradient, ConcatSliceReshapePermute) {
  Rng rng(900 + GetParam());
  auto a = random_tensor({2, 3, 2}, rng), b = random_tensor({2, 1, 2}, rng);
  auto loss = [&] {
    auto c = concat({a, b, a}, 1);                  // (2, 7, 2)
    auto s = slice(c, 1, 2, 4);                     // (2, 4, 2)
    auto p = permute(reshape(s, {2, 2, 2, 2}), {3, 1, 0, 2});
    return project(mul(p, p), 30);
  };
  EXPECT_LE(check_gradients(loss, {{"a", a}, {"b", b}}).max_rel_error, kTol);
}

TEST_P(OpGradient, GatherScatter) {
  Rng rng(1000 + GetParam());
  auto x = random_tensor({5, 3}, rng);
  const std::vector<std::size_t> gi{4, 0, 4, 2};
  const std::vector<std::size_t> si{1, 1, 0, 3};
  auto loss = [&] { return project(scatter_rows(gather_rows(mul(x, x), gi), si, 6), 31); };
  EXPECT_LE(check_gradients(loss, {{"x", x}}).max_rel_error, kTol);
}

TEST_P(OpGradient, BilinearSampling) {
  Rng rng(1100 + GetParam());
  auto grid = random_tensor({4, 5, 6}, rng);
  // Locations span interior, border and fully outside positions.
  auto loc = random_tensor({7, 2, 2}, rng, -1.5, 6.5);
  auto loss = [&] { return project(sample_bilinear_2d(grid, loc), 32); };
  EXPECT_LE(check_gradients(loss, {{"grid", grid}, {"loc", loc}}).max_rel_error, kTol);
}

TEST_P(OpGradient, TrilinearSampling) {
  Rng rng(1200 + GetParam());
  auto vol = random_tensor({4, 3, 4, 2}, rng);
  auto loc = random_tensor({6, 2, 3}, rng, -1.2, 3.8);
  auto loss = [&] { return project(sample_trilinear_3d(vol, loc), 33); };
  EXPECT_LE(check_gradients(loss, {{"volume", vol}, {"loc", loc}}).max_rel_error, kTol);
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradient, ::testing::Range(0, 5));
