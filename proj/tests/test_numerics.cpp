// Copyright 2026 The Preformer Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "preformer/grad_check.hpp"
#include "preformer/log_math.hpp"
#include "preformer/tensor.hpp"

namespace preformer {
namespace {

Matrix seeded(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Var project(DoubleTape& tape, const Var& x, std::uint64_t seed) {
  return sum(mul(x, tape.constant(seeded(x.rows(), x.cols(), seed))));
}

TEST(LogMath, LogSumExpExamples) {
  EXPECT_DOUBLE_EQ(log_sum_exp({std::log(0.7)}), std::log(0.7));
  EXPECT_NEAR(log_sum_exp({0.0, 0.0}), std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(log_sum_exp({kLogZero<double>, std::log(3.0)}), std::log(3.0));
  EXPECT_TRUE(is_log_zero(log_sum_exp({kLogZero<double>, kLogZero<double>})));
}

TEST(LogMath, LogSumExpBounds) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(-50.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> xs(1 + trial % 9);
    for (double& x : xs) x = dist(rng);
    const double lse = log_sum_exp<double>(xs);
    const double max = *std::max_element(xs.begin(), xs.end());
    EXPECT_GE(lse, max);
    EXPECT_LE(lse, max + std::log(static_cast<double>(xs.size())) + 1e-12);
  }
}

TEST(LogMath, SentinelIsAbsorbing) {
  const double z = kLogZero<double>;
  EXPECT_DOUBLE_EQ(log_add(z, -2.0), -2.0);
  EXPECT_DOUBLE_EQ(log_add(-2.0, z), -2.0);
  EXPECT_TRUE(is_log_zero(log_add(z, z)));
  EXPECT_TRUE(is_log_zero(log_mul(z, 5.0)));
  EXPECT_TRUE(is_log_zero(log_mul(-1.0, z)));
  EXPECT_NEAR(log_add(std::log(0.25), std::log(0.5)), std::log(0.75), 1e-15);
}

TEST(Matmul, IdentityAndHandArithmetic) {
  DoubleTape tape;
  const Matrix x = seeded(3, 4, 1);
  const Var out = matmul(tape.constant(Matrix::Identity(3, 3)), tape.constant(x));
  EXPECT_EQ(out.value(), x);

  Matrix a(1, 2);
  a << 1, 2;
  Matrix b(2, 1);
  b << 3, 4;
  EXPECT_DOUBLE_EQ(matmul(tape.constant(a), tape.constant(b)).item(), 11.0);
}

TEST(Matmul, ShapeMismatchThrows) {
  DoubleTape tape;
  EXPECT_THROW(matmul(tape.constant(Matrix::Zero(2, 3)), tape.constant(Matrix::Zero(2, 3))),
               DimensionError);
  EXPECT_THROW(add(tape.constant(Matrix::Zero(2, 3)), tape.constant(Matrix::Zero(3, 2))),
               DimensionError);
  EXPECT_THROW(add_row(tape.constant(Matrix::Zero(2, 3)), tape.constant(Matrix::Zero(1, 2))),
               DimensionError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  const ScalarFunction<double> f = [](DoubleTape& tape, const std::vector<Var>& p) {
    return project(tape, matmul(p[0], p[1]), 3);
  };
  const auto report = grad_check(f, {seeded(3, 3, 1), seeded(3, 3, 2)}, {1e-5, 1e-6, 1e-3});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(Softmax, Examples) {
  DoubleTape tape;
  const Var uniform = softmax(tape.constant(Matrix::Zero(1, 4)));
  for (Index j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(uniform.value()(0, j), 0.25);

  Matrix x(1, 2);
  x << 0.0, std::log(3.0);
  const Var p = softmax(tape.constant(x));
  EXPECT_NEAR(p.value()(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(p.value()(0, 1), 0.75, 1e-15);
}

TEST(Softmax, ShiftInvarianceAndNormalisation) {
  DoubleTape tape;
  const Matrix x = seeded(5, 6, 4);
  const Matrix a = softmax(tape.constant(x)).value();
  const Matrix b = softmax(tape.constant((x.array() + 17.5).matrix())).value();
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
  for (Index i = 0; i < a.rows(); ++i) EXPECT_NEAR(a.row(i).sum(), 1.0, 1e-12);
  EXPECT_GT(a.minCoeff(), 0.0);
  EXPECT_LT(a.maxCoeff(), 1.0);

  const Matrix cols = softmax(tape.constant(x), 0).value();
  for (Index j = 0; j < cols.cols(); ++j) EXPECT_NEAR(cols.col(j).sum(), 1.0, 1e-12);
}

TEST(Softmax, CausalMaskZeroesFuture) {
  DoubleTape tape;
  const Matrix p = softmax(tape.constant(seeded(4, 4, 5)), 1, Mask::kCausal).value();
  for (Index i = 0; i < 4; ++i) {
    for (Index j = i + 1; j < 4; ++j) EXPECT_EQ(p(i, j), 0.0);
    EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
  }
  EXPECT_THROW(softmax(tape.constant(Matrix::Zero(2, 3)), 1, Mask::kCausal), DimensionError);
}

TEST(LayerNorm, Examples) {
  DoubleTape tape;
  const Var gain = tape.constant(Matrix::Ones(1, 2));
  const Var bias = tape.constant(Matrix::Zero(1, 2));
  Matrix x(1, 2);
  x << 1.0, 3.0;
  const Matrix y = layer_norm(tape.constant(x), gain, bias).value();
  EXPECT_NEAR(y(0, 0), -1.0, 1e-5);
  EXPECT_NEAR(y(0, 1), 1.0, 1e-5);

  const Matrix constant_row = Matrix::Constant(1, 5, 2.5);
  const Matrix z = layer_norm(tape.constant(constant_row), tape.constant(Matrix::Ones(1, 5)),
                              tape.constant(Matrix::Zero(1, 5)))
                       .value();
  EXPECT_TRUE(z.isZero(0.0));
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  const ScalarFunction<double> f = [](DoubleTape& tape, const std::vector<Var>& p) {
    return project(tape, layer_norm(p[0], p[1], p[2]), 9);
  };
  const auto report = grad_check(f, {seeded(3, 5, 6), seeded(1, 5, 7), seeded(1, 5, 8)},
                                 {1e-5, 1e-6, 1e-3});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(GradCheck, SumOfSquaresIsExact) {
  const ScalarFunction<double> f = [](DoubleTape&, const std::vector<Var>& p) {
    return sum(mul(p[0], p[0]));
  };
  const auto report = grad_check(f, {seeded(2, 3, 10)}, {1e-5, 1e-8, 1e-3});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
  EXPECT_EQ(report.scalars_checked, 6u);
}

TEST(GradCheck, LinearSoftmaxCrossEntropy) {
  // -sum(onehot * log softmax(x W + b)) on a seeded 4x5 input.
  Matrix onehot = Matrix::Zero(4, 3);
  for (Index i = 0; i < 4; ++i) onehot(i, i % 3) = 1.0;
  const ScalarFunction<double> f = [&](DoubleTape& tape, const std::vector<Var>& p) {
    const Var logits = add_row(matmul(p[0], p[1]), p[2]);
    return scale(sum(mul(log_softmax(logits), tape.constant(onehot))), -1.0);
  };
  const auto report =
      grad_check(f, {seeded(4, 5, 11), seeded(5, 3, 12), seeded(1, 3, 13)}, {1e-5, 1e-6, 1e-3});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(GradCheck, EveryPrimitiveOp) {
  const GradCheckOptions opts{1e-5, 1e-4, 1e-3};
  struct Case {
    const char* name;
    std::vector<Matrix> inputs;
    ScalarFunction<double> f;
  };
  const std::vector<int> ids{2, 0, 2, 1};
  const std::vector<Case> cases = {
      {"transpose", {seeded(3, 2, 1)},
       [](DoubleTape& t, const std::vector<Var>& p) { return project(t, transpose(p[0]), 2); }},
      {"add", {seeded(3, 2, 3), seeded(3, 2, 4)},
       [](DoubleTape& t, const std::vector<Var>& p) { return project(t, p[0] + p[1], 5); }},
      {"add_row", {seeded(3, 2, 6), seeded(1, 2, 7)},
       [](DoubleTape& t, const std::vector<Var>& p) { return project(t, add_row(p[0], p[1]), 8); }},
      {"mul", {seeded(3, 2, 9), seeded(3, 2, 10)},
       [](DoubleTape& t, const std::vector<Var>& p) { return project(t, mul(p[0], p[1]), 11); }},
      {"scale", {seeded(2, 2, 12)},
       [](DoubleTape& t, const std::vector<Var>& p) { return project(t, scale(p[0], -1.7), 13); }},
      {"relu", {seeded(3, 3, 14)},
       [](DoubleTape& t, const std::vector<Var>& p) { return project(t, relu(p[0]), 15); }},
      {"gelu", {seeded(3, 3, 16)},
       [](DoubleTape& t, const std::vector<Var>& p) { return project(t, gelu(p[0]), 17); }},
      {"softmax_rows", {seeded(3, 4, 18)},
       [](DoubleTape& t, const std::vector<Var>& p) { return project(t, softmax(p[0]), 19); }},
      {"softmax_cols", {seeded(3, 4, 20)},
       [](DoubleTape& t, const std::vector<Var>& p) { return project(t, softmax(p[0], 0), 21); }},
      {"softmax_causal", {seeded(4, 4, 22)},
       [](DoubleTape& t, const std::vector<Var>& p) {
         return project(t, softmax(p[0], 1, Mask::kCausal), 23);
       }},
      {"log_softmax", {seeded(3, 4, 24)},
       [](DoubleTape& t, const std::vector<Var>& p) { return project(t, log_softmax(p[0]), 25); }},
      {"slice_cols", {seeded(3, 5, 26)},
       [](DoubleTape& t, const std::vector<Var>& p) { return project(t, slice_cols(p[0], 1, 3), 27); }},
      {"slice_rows", {seeded(5, 3, 28)},
       [](DoubleTape& t, const std::vector<Var>& p) { return project(t, slice_rows(p[0], 2, 2), 29); }},
      {"concat_cols", {seeded(3, 2, 30), seeded(3, 1, 31)},
       [](DoubleTape& t, const std::vector<Var>& p) {
         return project(t, concat_cols(std::vector<Var>{p[0], p[1], p[0]}), 32);
       }},
      {"gather_rows", {seeded(3, 4, 33)},
       [&ids](DoubleTape& t, const std::vector<Var>& p) {
         return project(t, gather_rows(p[0], ids), 34);
       }},
      {"mean", {seeded(3, 4, 35)},
       [](DoubleTape&, const std::vector<Var>& p) { return mean(mul(p[0], p[0])); }},
      {"unfold_time", {seeded(7, 2, 36)},
       [](DoubleTape& t, const std::vector<Var>& p) { return project(t, unfold_time(p[0], 3, 2, 1), 37); }},
  };
  for (const Case& c : cases) {
    const auto report = grad_check(c.f, c.inputs, opts);
    EXPECT_TRUE(report.passed) << c.name << " rel err " << report.max_rel_error;
  }
}

TEST(Tape, ReusedInputAccumulatesBothContributions) {
  // x feeds two branches; the analytic gradient must equal the sum.
  const ScalarFunction<double> f = [](DoubleTape& t, const std::vector<Var>& p) {
    const Var a = gelu(p[0]);
    const Var b = softmax(p[0]);
    return add(project(t, a, 40), project(t, b, 41));
  };
  const auto report = grad_check(f, {seeded(3, 3, 42)}, {1e-5, 1e-6, 1e-3});
  EXPECT_TRUE(report.passed) << report.max_rel_error;

  DoubleTape tape;
  const Var x = tape.leaf(Matrix::Constant(1, 1, 3.0), true);
  tape.backward(add(mul(x, x), scale(x, 2.0)));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 2.0 * 3.0 + 2.0);
}

TEST(Tape, BackwardVisitsNodesInReverseOrder) {
  DoubleTape tape;
  std::vector<int> order;
  const Var x = tape.leaf(Matrix::Constant(1, 1, 1.0), true);
  Var y = x;
  for (int i = 0; i < 4; ++i) {
    const Var in = y;
    y = tape.record("probe", in.value(), {in}, [&order, i, in](const Matrix& g) {
      order.push_back(i);
      in.tape().accumulate(in, g);
    });
  }
  tape.backward(y);
  EXPECT_EQ(order, (std::vector<int>{3, 2, 1, 0}));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 1.0);
}

TEST(Tape, NonFiniteForwardIsAnError) {
  DoubleTape tape;
  const Var x = tape.leaf(Matrix::Constant(1, 1, std::numeric_limits<double>::max()));
  EXPECT_THROW(scale(x, 10.0), NumericError);
  EXPECT_THROW(tape.backward(tape.leaf(Matrix::Zero(2, 1), true)), DimensionError);
}

TEST(Tape, GradientHasValueShape) {
  DoubleTape tape;
  const Var w = tape.leaf(seeded(4, 3, 50), true);
  const Var x = tape.constant(seeded(2, 4, 51));
  tape.backward(sum(matmul(x, w)));
  EXPECT_EQ(w.grad().rows(), 4);
  EXPECT_EQ(w.grad().cols(), 3);
}

TEST(Templating, FloatInstantiationMatchesDouble) {
  Tape<float> tape;
  MatrixX<float> x(1, 3);
  x << 1.0f, 2.0f, 3.0f;
  const auto leaf = tape.leaf(x, true);
  const auto p = softmax(leaf);
  tape.backward(sum(mul(p, p)));
  DoubleTape dtape;
  const Var d = dtape.leaf(x.cast<double>(), true);
  const Var dp = softmax(d);
  dtape.backward(sum(mul(dp, dp)));
  for (Index j = 0; j < 3; ++j) {
    EXPECT_NEAR(p.value()(0, j), dp.value()(0, j), 1e-6);
    EXPECT_NEAR(leaf.grad()(0, j), d.grad()(0, j), 1e-5);
  }
}

TEST(UnfoldTime, OutputLengthIsCeilOfStride) {
  DoubleTape tape;
  for (Index T : {1, 2, 5, 8, 9}) {
    const Var out = unfold_time(tape.constant(seeded(T, 3, 60)), 3, 2, 1);
    EXPECT_EQ(out.rows(), (T + 1) / 2);
    EXPECT_EQ(out.cols(), 9);
  }
}

}  // namespace
}  // namespace preformer
