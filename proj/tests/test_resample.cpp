#include <gtest/gtest.h>

#include "maestro/grad_check.hpp"
#include "maestro/masking.hpp"
#include "maestro/resample.hpp"
#include "maestro/rng.hpp"

using namespace maestro;

namespace {

// Distinct rows so per-offset contributions are visible in the output.
Array<double> pos_table(i64 rows, i64 d) {
  Array<double> p({rows, d});
  for (i64 r = 0; r < rows; ++r)
    for (i64 j = 0; j < d; ++j) p.at(r, j) = 100.0 * static_cast<double>(r + 1) + static_cast<double>(j);
  return p;
}

}  // namespace

TEST(Resample, RepeatsRowsWithOffsetEmbedding) {
  Tape<double> tape;
  auto e = tape.leaf(Array<double>({2, 2}, {1, 10, 2, 20}));
  auto pos = tape.leaf(pos_table(4, 2));
  auto out = resample(e, {2, 3}, pos);
  ASSERT_EQ(out.value().rows(), 5);
  // rows: a+p0, a+p1, b+p0, b+p1, b+p2
  std::vector<double> expect = {1 + 100, 10 + 101, 1 + 200, 10 + 201,
                                2 + 100, 20 + 101, 2 + 200, 20 + 201, 2 + 300, 20 + 301};
  for (size_t i = 0; i < expect.size(); ++i) EXPECT_DOUBLE_EQ(out.value().data[i], expect[i]);
}

TEST(Resample, AllOnesIsCopyPlusFirstOffset) {
  Tape<double> tape;
  auto e = tape.leaf(Array<double>({3, 2}, {1, 2, 3, 4, 5, 6}));
  auto pos = tape.leaf(pos_table(2, 2));
  auto out = resample(e, {1, 1, 1}, pos);
  ASSERT_EQ(out.value().rows(), 3);
  for (i64 r = 0; r < 3; ++r)
    for (i64 j = 0; j < 2; ++j)
      EXPECT_DOUBLE_EQ(out.value().at(r, j), e.value().at(r, j) + pos.value().at(0, j));
}

TEST(Resample, LengthMatchesDurationSum) {
  Tape<double> tape;
  auto e = tape.leaf(Array<double>({4, 3}));
  auto pos = tape.leaf(Array<double>({8, 3}));
  auto out = resample(e, {5, 4, 7, 1}, pos);
  EXPECT_EQ(out.value().rows(), 17);
}

TEST(Resample, GradientSumsOverCopies) {
  Tape<double> tape;
  auto e = tape.leaf(Array<double>({2, 1}, {1.0, 2.0}), true);
  auto pos = tape.leaf(Array<double>({3, 1}));
  auto out = resample(e, {3, 1}, pos);
  tape.backward(reduce_sum(out));
  EXPECT_DOUBLE_EQ(tape.grad(e.id).data[0], 3.0);
  EXPECT_DOUBLE_EQ(tape.grad(e.id).data[1], 1.0);
}

TEST(Resample, BlockLocality) {
  // Changing e_t[u] must affect exactly the rows of block u.
  Tape<double> tape;
  Array<double> ev({3, 2}, {1, 1, 2, 2, 3, 3});
  auto pos = tape.leaf(pos_table(3, 2));
  auto base = resample(tape.leaf(ev), {2, 1, 3}, pos);
  Array<double> ev2 = ev;
  ev2.at(1, 0) += 5.0;
  auto bumped = resample(tape.leaf(ev2), {2, 1, 3}, pos);
  for (i64 r = 0; r < 6; ++r)
    for (i64 j = 0; j < 2; ++j) {
      double diff = bumped.value().at(r, j) - base.value().at(r, j);
      if (r == 2 && j == 0)
        EXPECT_DOUBLE_EQ(diff, 5.0);
      else
        EXPECT_DOUBLE_EQ(diff, 0.0);
    }
}

TEST(Resample, FiniteDifferenceCheck) {
  CounterRng rng(31);
  Array<double> e({4, 3});
  for (double& v : e.data) v = rng.next_uniform(-2, 2);
  Array<double> pos({4, 3});
  for (double& v : pos.data) v = rng.next_uniform(-1, 1);
  auto report = grad_check<double>(
      [](Tape<double>& t, std::vector<Var<double>>& xs) {
        auto r = resample(xs[0], {1, 3, 2, 1}, xs[1]);
        return reduce_sum(mul(r, r));
      },
      {e, pos});
  EXPECT_TRUE(report.pass) << report.summary();
}

TEST(Resample, ZeroDurationRejected) {
  Tape<double> tape;
  auto e = tape.leaf(Array<double>({2, 2}));
  auto pos = tape.leaf(Array<double>({4, 2}));
  EXPECT_THROW(resample(e, {0, 2}, pos), Error);
  EXPECT_THROW(resample(e, {1}, pos), Error);
  // Duration longer than the positional table is a contract violation.
  EXPECT_THROW(resample(e, {1, 5}, pos), Error);
}

TEST(RoundDurations, HalfUpAndClamp) {
  EXPECT_EQ(round_durations<double>({2.4, 3.6}), (std::vector<i64>{2, 4}));
  EXPECT_EQ(round_durations<double>({0.2}), (std::vector<i64>{1}));
  EXPECT_EQ(round_durations<double>({2.5}), (std::vector<i64>{3}));
  EXPECT_THROW(round_durations<double>({-1.0}), Error);
  EXPECT_THROW(round_durations<double>({0.0}), Error);
}

TEST(RoundDurations, IdempotentOnIntegers) {
  std::vector<double> in = {1.0, 4.0, 6.0};
  auto once = round_durations(in);
  std::vector<double> again(once.begin(), once.end());
  EXPECT_EQ(round_durations(again), once);
}

TEST(Masking, RespectsHalfCapPerAxis) {
  // Pathological spec: masks far wider than the cap; the union must clip.
  MaskSpec spec;
  spec.n_time_masks = 10;
  spec.max_time_width = 50;
  spec.n_feature_masks = 10;
  spec.max_feature_width = 50;
  for (u64 seed = 0; seed < 30; ++seed) {
    CounterRng rng(seed);
    auto plan = plan_mask(12, 8, spec, rng);
    i64 t_masked = 0, f_masked = 0;
    for (u8 m : plan.time_masked) t_masked += m;
    for (u8 m : plan.feature_masked) f_masked += m;
    ASSERT_LE(t_masked, 6);
    ASSERT_LE(f_masked, 4);
    ASSERT_EQ(static_cast<i64>(plan.masked_time_positions.size()), t_masked);
  }
}

TEST(Masking, DeterministicGivenRngState) {
  MaskSpec spec;
  CounterRng a(99), b(99);
  auto p1 = plan_mask(20, 16, spec, a);
  auto p2 = plan_mask(20, 16, spec, b);
  EXPECT_EQ(p1.time_masked, p2.time_masked);
  EXPECT_EQ(p1.feature_masked, p2.feature_masked);
  EXPECT_EQ(p1.masked_time_positions, p2.masked_time_positions);
}

TEST(Masking, AppliesZeroAndPassesKept) {
  MaskSpec spec;
  spec.n_time_masks = 1;
  spec.max_time_width = 2;
  spec.n_feature_masks = 0;
  CounterRng rng(5);
  auto plan = plan_mask(6, 3, spec, rng);
  Tape<double> tape;
  Array<double> xv({6, 3});
  for (size_t i = 0; i < xv.data.size(); ++i) xv.data[i] = 1.0 + static_cast<double>(i);
  auto x = tape.leaf(xv, true);
  auto masked = apply_mask(x, plan, spec);
  for (i64 t = 0; t < 6; ++t)
    for (i64 j = 0; j < 3; ++j) {
      double got = masked.value().at(t, j);
      if (plan.time_masked[static_cast<size_t>(t)])
        EXPECT_DOUBLE_EQ(got, 0.0);
      else
        EXPECT_DOUBLE_EQ(got, xv.at(t, j));
    }
  // Gradient flows only through kept cells.
  tape.backward(reduce_sum(masked));
  for (i64 t = 0; t < 6; ++t)
    for (i64 j = 0; j < 3; ++j)
      EXPECT_DOUBLE_EQ(tape.grad(x.id).at(t, j),
                       plan.time_masked[static_cast<size_t>(t)] ? 0.0 : 1.0);
}

TEST(Masking, NonzeroFillValue) {
  MaskSpec spec;
  spec.n_time_masks = 1;
  spec.max_time_width = 3;
  spec.n_feature_masks = 0;
  spec.mask_value = -1.5;
  CounterRng rng(8);
  auto plan = plan_mask(8, 2, spec, rng);
  ASSERT_FALSE(plan.masked_time_positions.empty());
  Tape<double> tape;
  auto x = tape.leaf(Array<double>({8, 2}, std::vector<double>(16, 7.0)));
  auto masked = apply_mask(x, plan, spec);
  for (i64 t : plan.masked_time_positions)
    for (i64 j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(masked.value().at(t, j), -1.5);
}
