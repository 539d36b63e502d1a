#include <gtest/gtest.h>

#include <cmath>

#include "evg/autodiff.hpp"
#include "evg/errors.hpp"

using namespace evg;
using namespace evg::ad;

namespace {

Tensor rand_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor::uniform(r, c, lo, hi, rng);
}

// Values in [-1, -0.1] U [0.1, 1]: keeps central differences off the kinks
// of relu and elu.
Tensor away_from_zero(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  Tensor t = rand_tensor(r, c, rng, 0.1, 1.0);
  std::bernoulli_distribution flip(0.5);
  for (double& v : t.values())
    if (flip(rng)) v = -v;
  return t;
}

// Contracts a matrix output against fixed random weights so every output
// coordinate contributes to the scalar under test.
struct Projector {
  std::vector<Tensor> weights;
  std::mt19937_64 rng{99};
  Var operator()(Var out) {
    if (weights.empty() || weights.back().rows() != out.rows() || weights.back().cols() != out.cols()) {
      weights.push_back(rand_tensor(out.rows(), out.cols(), rng));
    }
    return sum(hadamard(out, out.tape->input(weights.back())));
  }
};

double check(const std::function<Var(Tape&)>& program, std::vector<Tensor*> inputs) {
  return finite_diff_check(program, inputs, 1e-5);
}

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return Errc::Io;
}

}  // namespace

TEST(Tensor, ShapeAndFill) {
  Tensor t(2, 3, 1.5);
  EXPECT_EQ(t.shape(), (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t(1, 2), 1.5);
  EXPECT_THROW(Tensor(2, 2, std::vector<double>{1, 2, 3}), Error);
}

TEST(Forward, MatmulMatchesTripleLoop) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng() % 5, k = 1 + rng() % 5, m = 1 + rng() % 5;
    Tensor a = rand_tensor(n, k, rng), b = rand_tensor(k, m, rng);
    Tape tape;
    const Tensor& c = matmul(tape.input(a), tape.input(b)).value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double ref = 0;
        for (std::size_t p = 0; p < k; ++p) ref += a(i, p) * b(p, j);
        EXPECT_NEAR(c(i, j), ref, 1e-14);
      }
  }
}

TEST(Forward, LinearIsMatmulWithTransposedWeight) {
  std::mt19937_64 rng(2);
  Tensor x = rand_tensor(4, 3, rng), w = rand_tensor(5, 3, rng);
  Tape tape;
  const Tensor& a = linear(tape.input(x), tape.input(w)).value();
  const Tensor& b = matmul(tape.input(x), transpose(tape.input(w))).value();
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(Forward, ShapeMismatches) {
  Tape tape;
  Tensor a(2, 3), b(2, 3), row(1, 2), col(3, 1);
  EXPECT_EQ(code_of([&] { matmul(tape.input(a), tape.input(b)); }), Errc::ShapeMismatch);
  EXPECT_EQ(code_of([&] { add(tape.input(a), tape.input(row)); }), Errc::ShapeMismatch);
  EXPECT_EQ(code_of([&] { add_row(tape.input(a), tape.input(row)); }), Errc::ShapeMismatch);
  EXPECT_EQ(code_of([&] { scale_rows(tape.input(a), tape.input(col)); }), Errc::ShapeMismatch);
  EXPECT_EQ(code_of([&] { gather_rows(tape.input(a), Index{0, 2}); }), Errc::ShapeMismatch);
}

TEST(SegmentSoftmax, Examples) {
  Tape tape;
  Tensor s(2, 1, 1.0);
  const Tensor& a = segment_softmax(tape.input(s), Index{0, 0}).value();
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  EXPECT_DOUBLE_EQ(a[1], 0.5);
  Tensor one(1, 1, 5.0);
  EXPECT_DOUBLE_EQ(segment_softmax(tape.input(one), Index{0}).value()[0], 1.0);
}

TEST(SegmentSoftmax, SumsToOnePerSegmentEvenForLargeScores) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Index seg;
    for (std::uint32_t s = 0, n = 1 + rng() % 8; s < n; ++s)
      for (std::size_t r = 0, m = 1 + rng() % 6; r < m; ++r) seg.push_back(s * 2);
    Tensor scores = rand_tensor(seg.size(), 1, rng, -300, 300);
    Tape tape;
    const Tensor& p = segment_softmax(tape.input(scores), seg).value();
    std::map<std::uint32_t, double> sums;
    for (std::size_t i = 0; i < seg.size(); ++i) {
      EXPECT_TRUE(std::isfinite(p[i]));
      sums[seg[i]] += p[i];
    }
    for (auto& [s, total] : sums) EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(SegmentSoftmax, RejectsUnsortedSegments) {
  Tape tape;
  Tensor s(3, 1);
  EXPECT_EQ(code_of([&] { segment_softmax(tape.input(s), Index{1, 0, 1}); }), Errc::UnsortedSegments);
  EXPECT_EQ(code_of([&] { segment_softmax(tape.input(s), Index{0, 0}); }), Errc::ShapeMismatch);
}

TEST(SegmentSum, MatchesLoopAndLeavesEmptySegmentsZero) {
  std::mt19937_64 rng(4);
  Tensor v = rand_tensor(6, 3, rng);
  Index seg{2, 0, 2, 3, 0, 2};
  Tape tape;
  const Tensor& out = segment_sum(tape.input(v), seg, 5).value();
  ASSERT_EQ(out.rows(), 5u);
  for (std::size_t s = 0; s < 5; ++s)
    for (std::size_t c = 0; c < 3; ++c) {
      double ref = 0;
      for (std::size_t r = 0; r < 6; ++r)
        if (seg[r] == s) ref += v(r, c);
      EXPECT_NEAR(out(s, c), ref, 1e-15);
    }
}

TEST(Backward, AnalyticExamples) {
  std::mt19937_64 rng(5);
  Tensor x = rand_tensor(3, 2, rng);
  x.set_requires_grad();
  {
    Tape tape;
    Var v = tape.param(x);
    tape.backward(sum(hadamard(v, v)));
  }
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * x[i]);

  Tensor z(1, 1, 0.0);
  z.set_requires_grad();
  Tape tape;
  tape.backward(sigmoid(tape.param(z)));
  EXPECT_DOUBLE_EQ(z.grad()[0], 0.25);
}

TEST(Backward, RepeatedCallsAccumulate) {
  Tensor x(1, 2, std::vector<double>{1.0, -2.0});
  x.set_requires_grad();
  for (int i = 0; i < 3; ++i) {
    Tape tape;
    tape.backward(sum(scale(tape.param(x), 4.0)));
  }
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[1], 0.0);
}

TEST(Backward, IsLinearInTheLoss) {
  std::mt19937_64 rng(6);
  Tensor x = rand_tensor(2, 3, rng);
  x.set_requires_grad();
  auto f = [](Var v) { return sum(exp(v)); };
  auto g = [](Var v) { return sum(hadamard(sigmoid(v), v)); };
  auto grad_of = [&](const std::function<Var(Var)>& fn) {
    x.zero_grad();
    Tape tape;
    tape.backward(fn(tape.param(x)));
    return x.grad();
  };
  const auto gf = grad_of(f), gg = grad_of(g);
  const auto combo = grad_of([&](Var v) { return add(scale(f(v), 2.5), scale(g(v), -0.75)); });
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(combo[i], 2.5 * gf[i] - 0.75 * gg[i], 1e-12);
}

TEST(Backward, NonScalarLossRejected) {
  Tensor x(2, 2);
  x.set_requires_grad();
  Tape tape;
  Var v = tape.param(x);
  EXPECT_EQ(code_of([&] { tape.backward(v); }), Errc::NonScalarLoss);
}

TEST(Backward, UnusedParameterKeepsEmptyGrad) {
  Tensor used(1, 1, 2.0), unused(1, 1, 3.0);
  used.set_requires_grad();
  unused.set_requires_grad();
  Tape tape;
  tape.param(unused);
  tape.backward(sum(tape.param(used)));
  EXPECT_TRUE(unused.grad().empty());
}

TEST(FiniteDiff, LinearAndConstantPrograms) {
  std::mt19937_64 rng(7);
  Tensor x = rand_tensor(3, 3, rng), w = rand_tensor(3, 3, rng);
  EXPECT_LT(check([&](Tape& t) { return sum(hadamard(t.param(x), t.input(w))); }, {&x}), 1e-10);
  Tensor c(1, 1, 4.0);
  EXPECT_EQ(check([&](Tape& t) { return t.constant(Tensor(1, 1, 3.0)); }, {&c}), 0.0);
}

TEST(FiniteDiff, RestoresInputs) {
  Tensor x(1, 3, std::vector<double>{0.1, 0.2, 0.3});
  check([&](Tape& t) { return sum(exp(t.param(x))); }, {&x});
  EXPECT_FALSE(x.requires_grad());
  EXPECT_EQ(x.values(), (std::vector<double>{0.1, 0.2, 0.3}));
}

// Every primitive against central differences on random inputs in [-1, 1].
TEST(FiniteDiff, EveryPrimitive) {
  std::mt19937_64 rng(8);
  Projector proj;
  Tensor a = rand_tensor(4, 3, rng), b = rand_tensor(4, 3, rng), m = rand_tensor(3, 5, rng);
  Tensor w = rand_tensor(2, 3, rng), row = rand_tensor(1, 3, rng), col = rand_tensor(4, 1, rng);
  Tensor pos = rand_tensor(4, 3, rng, 0.2, 1.0), kinked = away_from_zero(4, 3, rng);
  Tensor scores = rand_tensor(7, 1, rng);
  const Index seg{0, 0, 1, 2, 2, 2, 4};
  const Index rows{3, 0, 0, 2};

  struct Case {
    const char* name;
    std::function<Var(Tape&)> fn;
    std::vector<Tensor*> inputs;
  };
  std::vector<Case> cases = {
      {"matmul", [&](Tape& t) { return proj(matmul(t.param(a), t.param(m))); }, {&a, &m}},
      {"linear", [&](Tape& t) { return proj(linear(t.param(a), t.param(w))); }, {&a, &w}},
      {"transpose", [&](Tape& t) { return proj(transpose(t.param(a))); }, {&a}},
      {"add", [&](Tape& t) { return proj(add(t.param(a), t.param(b))); }, {&a, &b}},
      {"add_row", [&](Tape& t) { return proj(add_row(t.param(a), t.param(row))); }, {&a, &row}},
      {"hadamard", [&](Tape& t) { return proj(hadamard(t.param(a), t.param(b))); }, {&a, &b}},
      {"scale_rows", [&](Tape& t) { return proj(scale_rows(t.param(a), t.param(col))); }, {&a, &col}},
      {"scale", [&](Tape& t) { return proj(scale(t.param(a), -1.7)); }, {&a}},
      {"sigmoid", [&](Tape& t) { return proj(sigmoid(t.param(a))); }, {&a}},
      {"exp", [&](Tape& t) { return proj(exp(t.param(a))); }, {&a}},
      {"log", [&](Tape& t) { return proj(log(t.param(pos))); }, {&pos}},
      {"relu", [&](Tape& t) { return proj(relu(t.param(kinked))); }, {&kinked}},
      {"elu", [&](Tape& t) { return proj(elu(t.param(kinked))); }, {&kinked}},
      {"sum", [&](Tape& t) { return scale(sum(t.param(a)), 0.3); }, {&a}},
      {"sum_rows", [&](Tape& t) { return proj(sum_rows(t.param(a))); }, {&a}},
      {"gather_rows", [&](Tape& t) { return proj(gather_rows(t.param(a), rows)); }, {&a}},
      {"concat_cols", [&](Tape& t) { return proj(concat_cols(t.param(a), t.param(col))); }, {&a, &col}},
      {"segment_softmax", [&](Tape& t) { return proj(segment_softmax(t.param(scores), seg)); }, {&scores}},
      {"segment_sum", [&](Tape& t) { return proj(segment_sum(t.param(a), Index{1, 0, 1, 3}, 5)); }, {&a}},
      {"batch_norm",
       [&](Tape& t) { return proj(batch_norm(t.param(a), t.param(row), t.param(w), 1e-5)); },
       {&a, &row}},
      {"softmax_cross_entropy",
       [&](Tape& t) {
         const int labels[] = {0, 2, 1, 2};
         return softmax_cross_entropy(t.param(a), labels);
       },
       {&a}},
  };
  // batch_norm's shift must be 1 x cols.
  w = rand_tensor(1, 3, rng);
  for (auto& c : cases) EXPECT_LT(check(c.fn, c.inputs), 1e-6) << c.name;
  Tensor beta = rand_tensor(1, 3, rng);
  EXPECT_LT(check([&](Tape& t) { return proj(batch_norm(t.param(a), t.param(row), t.param(beta), 1e-5)); }, {&beta}),
            1e-6);
}

TEST(FiniteDiff, RandomCompositeProgram) {
  std::mt19937_64 rng(9);
  Tensor x = rand_tensor(5, 4, rng), w1 = rand_tensor(6, 4, rng), w2 = rand_tensor(3, 6, rng), bias = rand_tensor(1, 6, rng);
  auto program = [&](Tape& t) {
    Var h = elu(add_row(linear(t.param(x), t.param(w1)), t.param(bias)));
    Var s = segment_softmax(sum_rows(h), Index{0, 0, 1, 1, 1});
    Var agg = segment_sum(scale_rows(h, s), Index{0, 0, 1, 1, 1}, 2);
    const int labels[] = {2, 0};
    return softmax_cross_entropy(linear(agg, t.param(w2)), labels);
  };
  EXPECT_LT(check(program, {&x, &w1, &w2, &bias}), 1e-6);
}

TEST(BatchNorm, TrainOutputIsStandardised) {
  std::mt19937_64 rng(10);
  Tensor x = rand_tensor(9, 4, rng, -3, 5);
  Tensor gamma(1, 4, 1.0), beta(1, 4, 0.0);
  Tape tape;
  BatchMoments mom;
  const Tensor& y = batch_norm(tape.input(x), tape.input(gamma), tape.input(beta), 0.0, &mom).value();
  for (std::size_t c = 0; c < 4; ++c) {
    double mean = 0, var = 0, xm = 0;
    for (std::size_t r = 0; r < 9; ++r) {
      mean += y(r, c) / 9;
      xm += x(r, c) / 9;
    }
    for (std::size_t r = 0; r < 9; ++r) var += (y(r, c) - mean) * (y(r, c) - mean) / 9;
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-9);
    EXPECT_NEAR(mom.mean[c], xm, 1e-12);
  }
  Tensor single(1, 4);
  EXPECT_EQ(code_of([&] { batch_norm(tape.input(single), tape.input(gamma), tape.input(beta), 1e-5); }),
            Errc::SingleRowTrainBatch);
}

TEST(CrossEntropy, AnalyticValues) {
  Tape tape;
  Tensor uniform(1, 4, 0.3);
  const int label[] = {2};
  EXPECT_NEAR(softmax_cross_entropy(tape.input(uniform), label).value()[0], std::log(4.0), 1e-12);
  Tensor confident(1, 3, std::vector<double>{-500.0, 500.0, -500.0});
  const int right[] = {1};
  EXPECT_LT(softmax_cross_entropy(tape.input(confident), right).value()[0], 1e-12);
  const int bad[] = {4};
  EXPECT_EQ(code_of([&] { softmax_cross_entropy(tape.input(uniform), bad); }), Errc::BadLabel);
}
