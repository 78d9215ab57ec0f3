#include <gtest/gtest.h>

#include <cmath>

#include "maestro/grad_check.hpp"
#include "maestro/ops.hpp"
#include "maestro/rng.hpp"

using namespace maestro;

namespace {

Array<double> random_array(std::vector<i64> shape, CounterRng& rng, double lo = -2.0,
                           double hi = 2.0) {
  Array<double> a(std::move(shape));
  for (double& v : a.data) v = rng.next_uniform(lo, hi);
  return a;
}

using Fn = std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>;

void expect_grad_ok(const Fn& fn, std::vector<Array<double>> inputs, double tol = 1e-6) {
  auto report = grad_check<double>(fn, std::move(inputs), 1e-5, tol);
  EXPECT_TRUE(report.pass) << report.summary();
}

}  // namespace

TEST(Array, BasicShapeAndAccess) {
  Array<double> a({2, 3});
  EXPECT_EQ(a.numel(), 6);
  EXPECT_EQ(a.rows(), 2);
  EXPECT_EQ(a.cols(), 3);
  a.at(1, 2) = 5.0;
  EXPECT_DOUBLE_EQ(a.data[5], 5.0);
  EXPECT_EQ(a.shape_str(), "[2x3]");
  EXPECT_THROW(Array<double>({2, 2}, {1.0, 2.0, 3.0}), Error);
}

TEST(Rng, DeterministicAndCounterBased) {
  CounterRng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  CounterRng c(42);
  c.set_state(42, a.counter());
  EXPECT_EQ(c.next_u64(), a.next_u64());
  CounterRng d(43);
  EXPECT_NE(CounterRng(42).next_u64(), d.next_u64());
}

TEST(Rng, UniformAndNormalRanges) {
  CounterRng rng(7);
  double mean = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double u = rng.next_double();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    mean += u;
  }
  EXPECT_NEAR(mean / n, 0.5, 0.02);
  double nm = 0.0, nv = 0.0;
  for (int i = 0; i < n; ++i) {
    double z = rng.next_normal();
    nm += z;
    nv += z * z;
  }
  EXPECT_NEAR(nm / n, 0.0, 0.05);
  EXPECT_NEAR(nv / n, 1.0, 0.05);
}

TEST(Rng, PermutationIsValid) {
  CounterRng rng(3);
  auto p = rng.permutation(50);
  std::vector<bool> seen(50, false);
  for (i64 v : p) {
    ASSERT_GE(v, 0);
    ASSERT_LT(v, 50);
    ASSERT_FALSE(seen[static_cast<size_t>(v)]);
    seen[static_cast<size_t>(v)] = true;
  }
}

// Pinned value checks.

TEST(Ops, MatmulKnownValue) {
  Tape<double> tape;
  auto a = tape.leaf(Array<double>({2, 2}, {1, 2, 3, 4}));
  auto b = tape.leaf(Array<double>({2, 1}, {1, 1}));
  auto c = matmul(a, b);
  EXPECT_DOUBLE_EQ(c.value().at(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(c.value().at(1, 0), 7.0);
}

TEST(Ops, SoftmaxUniform) {
  Tape<double> tape;
  auto x = tape.leaf(Array<double>({1, 3}, {0, 0, 0}));
  auto y = softmax(x);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(y.value().at(0, j), 1.0 / 3.0, 1e-15);
}

TEST(Ops, LogsumexpKnownValue) {
  Tape<double> tape;
  auto x = tape.leaf(Array<double>({2}, {std::log(2.0), std::log(3.0)}));
  auto y = logsumexp(x);
  EXPECT_NEAR(y.value().item(), std::log(5.0), 1e-14);
}

TEST(Ops, SquareGradientAtThree) {
  Tape<double> tape;
  auto x = tape.leaf(Array<double>::scalar(3.0), true);
  auto y = mul(x, x);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(tape.grad(x.id).item(), 6.0);
}

TEST(Ops, SumOfSoftmaxHasZeroGradient) {
  Tape<double> tape;
  auto x = tape.leaf(Array<double>({1, 4}, {0.3, -1.2, 0.7, 2.0}), true);
  auto s = reduce_sum(softmax(x));
  EXPECT_NEAR(s.value().item(), 1.0, 1e-14);
  tape.backward(s);
  for (double g : tape.grad(x.id).data) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(Ops, MatmulShapeMismatchThrows) {
  Tape<double> tape;
  auto a = tape.leaf(Array<double>({2, 3}));
  auto b = tape.leaf(Array<double>({2, 2}));
  try {
    matmul(a, b);
    FAIL() << "expected shape error";
  } catch (const Error& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
  }
}

// Per-op finite-difference checks.

TEST(GradCheck, ElementwiseBinaryOps) {
  CounterRng rng(11);
  auto a = random_array({3, 4}, rng);
  auto b = random_array({3, 4}, rng);
  expect_grad_ok(
      [](Tape<double>& t, std::vector<Var<double>>& xs) {
        return reduce_sum(mul(add(xs[0], xs[1]), sub(xs[0], xs[1])));
      },
      {a, b});
}

TEST(GradCheck, UnaryOps) {
  CounterRng rng(12);
  auto a = random_array({2, 5}, rng);
  expect_grad_ok(
      [](Tape<double>& t, std::vector<Var<double>>& xs) {
        auto h = tanh_op(xs[0]);
        h = sigmoid(h);
        h = relu(add_const(h, Array<double>({2, 5}, std::vector<double>(10, -0.5))));
        return reduce_sum(mul(h, h));
      },
      {a});
}

TEST(GradCheck, MatmulAndTranspose) {
  CounterRng rng(13);
  auto a = random_array({3, 4}, rng);
  auto b = random_array({4, 2}, rng);
  expect_grad_ok(
      [](Tape<double>& t, std::vector<Var<double>>& xs) {
        return reduce_sum(matmul(transpose(matmul(xs[0], xs[1])), xs[0]));
      },
      {a, b});
}

TEST(GradCheck, SoftmaxLogsumexpLogsoftmax) {
  CounterRng rng(14);
  auto a = random_array({4, 6}, rng);
  expect_grad_ok(
      [](Tape<double>& t, std::vector<Var<double>>& xs) {
        auto s = softmax(xs[0]);
        auto l = log_softmax(xs[0]);
        auto z = logsumexp(xs[0]);
        return add(reduce_sum(mul(s, l)), reduce_sum(z));
      },
      {a});
}

TEST(GradCheck, GatherSliceConcat) {
  CounterRng rng(15);
  auto table = random_array({5, 3}, rng);
  expect_grad_ok(
      [](Tape<double>& t, std::vector<Var<double>>& xs) {
        auto g = gather(xs[0], {0, 2, 2, 4, 1});
        auto top = slice_rows(g, 0, 2);
        auto rest = slice_rows(g, 2, 5);
        auto cat = concat_rows<double>({rest, top});
        auto cc = concat_cols<double>({cat, cat});
        auto left = slice_cols(cc, 0, 4);
        return reduce_sum(mul(left, left));
      },
      {table});
}

TEST(GradCheck, AddRowBroadcast) {
  CounterRng rng(16);
  auto m = random_array({4, 3}, rng);
  auto r = random_array({3}, rng);
  expect_grad_ok(
      [](Tape<double>& t, std::vector<Var<double>>& xs) {
        return reduce_sum(tanh_op(add_row(xs[0], xs[1])));
      },
      {m, r});
}

TEST(GradCheck, LayerNorm) {
  CounterRng rng(17);
  auto x = random_array({3, 6}, rng);
  auto g = random_array({6}, rng, 0.5, 1.5);
  auto b = random_array({6}, rng, -0.5, 0.5);
  expect_grad_ok(
      [](Tape<double>& t, std::vector<Var<double>>& xs) {
        return reduce_sum(mul(layer_norm(xs[0], xs[1], xs[2]), xs[0]));
      },
      {x, g, b}, 2e-6);
}

TEST(GradCheck, RowL2Normalize) {
  CounterRng rng(18);
  auto x = random_array({4, 5}, rng);
  expect_grad_ok(
      [](Tape<double>& t, std::vector<Var<double>>& xs) {
        auto y = row_l2_normalize(xs[0]);
        return reduce_sum(mul(y, xs[0]));
      },
      {x});
}

TEST(GradCheck, Conv1d) {
  CounterRng rng(19);
  auto x = random_array({7, 3}, rng);
  auto w = random_array({5, 3, 4}, rng, -0.5, 0.5);
  expect_grad_ok(
      [](Tape<double>& t, std::vector<Var<double>>& xs) {
        return reduce_sum(tanh_op(conv1d(xs[0], xs[1], 5)));
      },
      {x, w});
}

TEST(GradCheck, DepthwiseConv1d) {
  CounterRng rng(20);
  auto x = random_array({6, 4}, rng);
  auto w = random_array({4, 3}, rng, -0.5, 0.5);
  expect_grad_ok(
      [](Tape<double>& t, std::vector<Var<double>>& xs) {
        auto k = softmax(xs[1]);
        return reduce_sum(mul(depthwise_conv1d(xs[0], k), xs[0]));
      },
      {x, w});
}

TEST(GradCheck, ScaleAndConstOps) {
  CounterRng rng(21);
  auto x = random_array({2, 3}, rng);
  Array<double> mask({2, 3}, {1, 0, 1, 0, 1, 0});
  expect_grad_ok(
      [mask](Tape<double>& t, std::vector<Var<double>>& xs) {
        auto h = scale(xs[0], 1.7);
        h = mul_const(h, mask);
        h = add_const(h, mask);
        return reduce_mean(mul(h, h));
      },
      {x});
}

TEST(GradCheck, ThreeLayerMlp) {
  CounterRng rng(22);
  auto x = random_array({4, 5}, rng);
  auto w1 = random_array({5, 8}, rng, -0.6, 0.6);
  auto b1 = random_array({8}, rng, -0.1, 0.1);
  auto w2 = random_array({8, 8}, rng, -0.6, 0.6);
  auto b2 = random_array({8}, rng, -0.1, 0.1);
  auto w3 = random_array({8, 3}, rng, -0.6, 0.6);
  auto b3 = random_array({3}, rng, -0.1, 0.1);
  expect_grad_ok(
      [](Tape<double>& t, std::vector<Var<double>>& xs) {
        auto h = tanh_op(add_row(matmul(xs[0], xs[1]), xs[2]));
        h = tanh_op(add_row(matmul(h, xs[3]), xs[4]));
        h = add_row(matmul(h, xs[5]), xs[6]);
        auto p = log_softmax(h);
        return scale(reduce_sum(mul(p, p)), 0.25);
      },
      {x, w1, b1, w2, b2, w3, b3});
}

// Gradient accumulation when a value fans out to several consumers.
TEST(Tape, FanOutAccumulates) {
  Tape<double> tape;
  auto x = tape.leaf(Array<double>::scalar(2.0), true);
  auto y = add(mul(x, x), mul(x, x));
  tape.backward(y);
  EXPECT_DOUBLE_EQ(tape.grad(x.id).item(), 8.0);
}

TEST(Tape, BackwardIsLinearInSeed) {
  // backward(a*loss1 + b*loss2) == a*backward(loss1) + b*backward(loss2)
  CounterRng rng(23);
  auto xv = random_array({3, 3}, rng);
  auto run = [&](double a, double b) {
    Tape<double> tape;
    auto x = tape.leaf(xv, true);
    auto l1 = reduce_sum(mul(x, x));
    auto l2 = reduce_sum(tanh_op(x));
    auto l = add(scale(l1, a), scale(l2, b));
    tape.backward(l);
    return tape.grad(x.id);
  };
  auto g10 = run(1, 0), g01 = run(0, 1), g23 = run(2, 3);
  for (size_t i = 0; i < g23.data.size(); ++i)
    EXPECT_NEAR(g23.data[i], 2 * g10.data[i] + 3 * g01.data[i], 1e-12);
}

TEST(Tape, NoGradGuardSkipsRecording) {
  Tape<double> tape;
  auto x = tape.leaf(Array<double>::scalar(3.0), true);
  {
    NoGradGuard<double> guard(tape);
    auto y = mul(x, x);
    EXPECT_FALSE(tape.needs_grad(y.id));
  }
  auto z = mul(x, x);
  EXPECT_TRUE(tape.needs_grad(z.id));
  tape.backward(z);
  EXPECT_DOUBLE_EQ(tape.grad(x.id).item(), 6.0);
}

TEST(Tape, ConstantsDoNotCollectGradient) {
  Tape<double> tape;
  auto x = tape.leaf(Array<double>::scalar(2.0), true);
  auto c = tape.constant(Array<double>::scalar(5.0));
  auto y = mul(x, c);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(tape.grad(x.id).item(), 5.0);
  EXPECT_FALSE(tape.has_grad(c.id));
}

// A deliberately wrong backward must be caught by the checker.
TEST(GradCheck, DetectsInjectedBug) {
  auto report = grad_check<double>(
      [](Tape<double>& t, std::vector<Var<double>>& xs) {
        i64 ia = xs[0].id;
        Array<double> out = xs[0].value();
        for (double& v : out.data) v = v * v;
        // Backward doubles the true gradient.
        auto bugged = t.record(std::move(out), {ia}, [ia](Tape<double>& tt, i64 out_id) {
          const auto& g = tt.grad(out_id);
          const auto& x = tt.value(ia);
          auto& gx = tt.grad(ia);
          for (size_t i = 0; i < gx.data.size(); ++i)
            gx.data[i] += 2.0 * (2.0 * x.data[i]) * g.data[i];
        });
        return reduce_sum(bugged);
      },
      {Array<double>({3}, {0.4, -1.1, 2.0})});
  EXPECT_FALSE(report.pass);
  EXPECT_GT(report.max_rel_err, 0.1);
}

TEST(GradCheck, ReportsWorstCoordinate) {
  auto report = grad_check<double>(
      [](Tape<double>& t, std::vector<Var<double>>& xs) {
        return reduce_sum(mul(xs[0], xs[0]));
      },
      {Array<double>({2}, {1.0, -2.0})});
  EXPECT_TRUE(report.pass);
  EXPECT_EQ(report.coords_checked, 2);
  EXPECT_TRUE(report.deterministic);
}

TEST(Ops, ErrorsNameTheOpAndShapes) {
  Tape<double> tape;
  auto a = tape.leaf(Array<double>({2, 3}));
  EXPECT_THROW(slice_rows(a, 1, 5), Error);
  EXPECT_THROW(gather(a, {7}), Error);
  EXPECT_THROW(layer_norm(a, tape.leaf(Array<double>({2})), tape.leaf(Array<double>({3}))), Error);
}
