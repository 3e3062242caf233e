#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "bangacmm/autodiff.hpp"
#include "support.hpp"

using namespace bangacmm;
using testsupport::check_op;
using testsupport::random_tensor;

TEST(Tensor, RejectsZeroDimensions) { EXPECT_THROW(Tensor({2, 0}), DimensionError); }

TEST(Tensor, FromChecksValueCount) { EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), DimensionError); }

TEST(Tensor, GradReadsZeroUntilWritten) {
  Tensor t({3}, 1.0, true);
  EXPECT_FALSE(t.has_grad());
  for (double g : t.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Matmul, IdentityAndZeroOperand) {
  Tape tape;
  Tensor r = matmul(tape, Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::from({2, 1}, {3, 4}));
  EXPECT_EQ(r.shape(), (Shape{2, 1}));
  EXPECT_EQ(r[0], 3);
  EXPECT_EQ(r[1], 4);
  Tensor z = matmul(tape, Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {0, 0}));
  EXPECT_EQ(z[0], 0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape tape;
  try {
    matmul(tape, Tensor({2, 3}), Tensor({4, 2}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  auto err = check_op([](Tape& t, const std::vector<Tensor>& in) { return matmul(t, in[0], in[1]); },
                      {random_tensor({3, 4}, 1), random_tensor({4, 2}, 2)});
  EXPECT_LT(err, 1e-6);
}

TEST(Softmax, UniformFromEqualLogits) {
  Tape tape;
  Tensor p = softmax(tape, Tensor({6}));
  for (double v : p.data()) EXPECT_NEAR(v, 1.0 / 6.0, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  Tape tape;
  Tensor p = softmax(tape, Tensor::from({2}, {1000, 0}));
  EXPECT_NEAR(p[0], 1.0, 1e-12);
  EXPECT_NEAR(p[1], 0.0, 1e-12);
}

TEST(Softmax, SlicesSumToOneAndJacobianMatches) {
  Tape tape;
  Tensor p = softmax(tape, Tensor::from({3}, {1, 2, 3}));
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
  auto err = check_op([](Tape& t, const std::vector<Tensor>& in) { return softmax(t, in[0]); },
                      {Tensor::from({3}, {1, 2, 3}, true)});
  EXPECT_LT(err, 1e-6);
  Tensor big = random_tensor({4, 5}, 3, false, 1e3);
  Tensor q = softmax(tape, big);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      EXPECT_GE(q.at(r, c), 0.0);
      s += q.at(r, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(LayerNorm, Examples) {
  Tape tape;
  Tensor g({3}, 1.0), b({3});
  Tensor c = layernorm(tape, Tensor::from({3}, {5, 5, 5}), g, b);
  for (double v : c.data()) EXPECT_EQ(v, 0.0);
  Tensor g2({2}, 1.0), b2({2});
  Tensor y = layernorm(tape, Tensor::from({2}, {1, -1}), g2, b2);
  EXPECT_NEAR(y[0], 1.0, 1e-5);
  EXPECT_NEAR(y[1], -1.0, 1e-5);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  auto err = check_op([](Tape& t, const std::vector<Tensor>& in) { return layernorm(t, in[0], in[1], in[2]); },
                      {random_tensor({2, 8}, 4), random_tensor({8}, 5), random_tensor({8}, 6)});
  EXPECT_LT(err, 1e-5);
}

TEST(Dropout, InferenceAndZeroRateAreIdentity) {
  Tape tape;
  Tensor x = random_tensor({10}, 7, false);
  EXPECT_TRUE(dropout(tape, x, 0.5, false).same_storage(x));
  EXPECT_TRUE(dropout(tape, x, 0.0, true).same_storage(x));
}

TEST(Dropout, RejectsRateOfOne) {
  Tape tape;
  EXPECT_THROW(dropout(tape, Tensor({2}), 1.0, true), ParameterError);
}

TEST(Dropout, PreservesExpectation) {
  Tape tape(true, 123);
  Tensor y = dropout(tape, Tensor({100000}, 1.0), 0.1, true);
  const double mean = std::accumulate(y.data().begin(), y.data().end(), 0.0) / 100000.0;
  EXPECT_GE(mean, 0.99);
  EXPECT_LE(mean, 1.01);
}

TEST(Backward, SumGivesOnesAndUnusedParameterStaysZero) {
  Tensor x = random_tensor({4}, 8);
  Tensor w = random_tensor({4}, 9);
  Tape tape;
  backward(sum(tape, x), tape);
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
  for (double g : w.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, RejectsNonScalarAndReuse) {
  Tensor x = random_tensor({3}, 10);
  Tape tape;
  Tensor y = scale(tape, x, 2.0);
  EXPECT_THROW(backward(y, tape), ContractError);
  Tape t2;
  Tensor s = sum(t2, x);
  backward(s, t2);
  EXPECT_THROW(backward(s, t2), ContractError);
}

TEST(Backward, VisitsEachNodeOnce) {
  Tensor x = random_tensor({2, 3}, 11);
  Tape tape;
  Tensor y = gelu(tape, add(tape, x, x));
  Tensor l = sum(tape, softmax(tape, y));
  const auto nodes = tape.size();
  backward(l, tape);
  EXPECT_EQ(tape.backward_visits(), nodes);
}

TEST(Backward, InferenceTapeRecordsNothing) {
  Tensor x = random_tensor({2, 3}, 12);
  Tape tape(false);
  sum(tape, gelu(tape, x));
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Ops, ElementwiseAndBroadcastGradients) {
  EXPECT_LT(check_op([](Tape& t, const std::vector<Tensor>& in) { return add(t, in[0], in[1]); },
                     {random_tensor({3, 4}, 13), random_tensor({4}, 14)}),
            1e-7);
  EXPECT_LT(check_op([](Tape& t, const std::vector<Tensor>& in) { return mul(t, in[0], in[1]); },
                     {random_tensor({3, 4}, 15), random_tensor({1}, 16)}),
            1e-7);
  EXPECT_LT(check_op([](Tape& t, const std::vector<Tensor>& in) { return mul(t, in[0], in[1]); },
                     {random_tensor({3, 4}, 17), random_tensor({3, 4}, 18)}),
            1e-7);
  EXPECT_LT(check_op([](Tape& t, const std::vector<Tensor>& in) { return gelu(t, in[0]); },
                     {random_tensor({5}, 19)}),
            1e-7);
}

TEST(Ops, GeluMatchesErfDefinition) {
  Tape tape;
  Tensor y = gelu(tape, Tensor::from({3}, {-1.0, 0.0, 2.0}));
  for (int i = 0; i < 3; ++i) {
    const double x = std::vector<double>{-1.0, 0.0, 2.0}[i];
    EXPECT_NEAR(y[i], 0.5 * x * (1 + std::erf(x / std::sqrt(2.0))), 1e-15);
  }
}

TEST(Ops, LinearGradient) {
  EXPECT_LT(check_op([](Tape& t, const std::vector<Tensor>& in) { return linear(t, in[0], in[1], in[2]); },
                     {random_tensor({3, 5}, 20), random_tensor({4, 5}, 21), random_tensor({4}, 22)}),
            1e-7);
  EXPECT_LT(check_op([](Tape& t, const std::vector<Tensor>& in) { return linear(t, in[0], in[1], in[2]); },
                     {random_tensor({5}, 23), random_tensor({4, 5}, 24), random_tensor({4}, 25)}),
            1e-7);
}

TEST(Ops, ConcatSplitsGradientAtBoundary) {
  Tensor a = random_tensor({2, 3}, 26), b = random_tensor({2, 2}, 27);
  Tape tape;
  Tensor c = concat(tape, a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 5}));
  backward(sum(tape, c), tape);
  EXPECT_EQ(a.grad().size(), 6u);
  EXPECT_EQ(b.grad().size(), 4u);
  EXPECT_LT(check_op([](Tape& t, const std::vector<Tensor>& in) { return concat(t, in[0], in[1]); },
                     {random_tensor({2, 3}, 28), random_tensor({2, 2}, 29)}),
            1e-7);
}

TEST(Ops, PoolingSelectionAndStackingGradients) {
  const std::vector<double> w = {1, 0, 1, 1};
  EXPECT_LT(check_op([&](Tape& t, const std::vector<Tensor>& in) { return mean_rows(t, in[0], w); },
                     {random_tensor({4, 3}, 30)}),
            1e-7);
  EXPECT_LT(check_op([](Tape& t, const std::vector<Tensor>& in) { return select_row(t, in[0], 2); },
                     {random_tensor({4, 3}, 31)}),
            1e-7);
  EXPECT_LT(check_op([](Tape& t, const std::vector<Tensor>& in) { return stack_rows(t, {in[0], in[1]}); },
                     {random_tensor({3}, 32), random_tensor({3}, 33)}),
            1e-7);
  const std::vector<int> ids = {1, 0, 1, 3};
  EXPECT_LT(check_op([&](Tape& t, const std::vector<Tensor>& in) { return embedding(t, in[0], ids); },
                     {random_tensor({4, 3}, 34)}),
            1e-7);
}

TEST(Ops, MaskedMeanIgnoresMaskedRows) {
  Tape tape;
  Tensor x = Tensor::from({3, 2}, {1, 2, 3, 4, 100, 100});
  const std::vector<double> w = {1, 1, 0};
  Tensor m = mean_rows(tape, x, w);
  EXPECT_EQ(m[0], 2);
  EXPECT_EQ(m[1], 3);
}

TEST(Ops, AttentionGradientWithMask) {
  const std::vector<bool> mask = {true, true, false, true};
  EXPECT_LT(check_op([&](Tape& t, const std::vector<Tensor>& in) { return attention(t, in[0], in[1], in[2], 2, mask); },
                     {random_tensor({4, 6}, 35), random_tensor({4, 6}, 36), random_tensor({4, 6}, 37)}),
            1e-6);
}

TEST(Ops, AttentionIgnoresMaskedKeys) {
  Tensor q = random_tensor({3, 4}, 38, false), k = random_tensor({3, 4}, 39, false), v = random_tensor({3, 4}, 40, false);
  Tensor k2 = k.clone(), v2 = v.clone();
  for (std::size_t c = 0; c < 4; ++c) {
    k2.at(2, c) = 50.0;
    v2.at(2, c) = -7.0;
  }
  const std::vector<bool> mask = {true, true, false};
  Tape tape(false);
  Tensor a = attention(tape, q, k, v, 2, mask), b = attention(tape, q, k2, v2, 2, mask);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(a.at(r, c), b.at(r, c));
}

TEST(CrossEntropy, AnalyticValues) {
  Tape tape;
  const std::vector<int> y = {2};
  EXPECT_NEAR(cross_entropy(tape, Tensor({1, 6}), y).item(), std::log(6.0), 1e-12);
  Tensor sharp({1, 6});
  sharp.at(0, 2) = 800.0;
  EXPECT_NEAR(cross_entropy(tape, sharp, y).item(), 0.0, 1e-12);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Tensor logits = random_tensor({4, 6}, 41);
  const std::vector<int> y = {0, 5, 2, 2};
  auto f = [&] {
    Tape t(false);
    return cross_entropy(t, logits, y).item();
  };
  Tape tape;
  backward(cross_entropy(tape, logits, y), tape);
  auto num = testsupport::numeric_grads(f, {logits});
  EXPECT_LT(testsupport::rel_error(logits.grad(), num[0]), 1e-5);
}

TEST(CrossEntropy, EmptyBatchIsContractError) {
  Tape tape;
  EXPECT_THROW(cross_entropy(tape, Tensor({1, 6}), std::vector<int>{}), std::logic_error);
}

TEST(Determinism, SameSeedSameValuesAndGradients) {
  auto run = [] {
    Tensor x = random_tensor({4, 8}, 42);
    Tape tape(true, 5);
    Tensor y = dropout(tape, gelu(tape, x), 0.3, true);
    backward(sum(tape, softmax(tape, y)), tape);
    std::vector<double> out(y.data().begin(), y.data().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}
