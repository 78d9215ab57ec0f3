#include <gtest/gtest.h>

#include <cmath>

#include "maestro/fdcheck.hpp"
#include "maestro/grad_check.hpp"
#include "maestro/objectives.hpp"

using namespace maestro;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.frame_dim = 4;
  c.d_model = 8;
  c.n_speech_layers = 1;
  c.n_shared_layers = 1;
  c.n_text_conv_layers = 1;
  c.n_text_transformer_layers = 1;
  c.n_refiner_layers = 1;
  c.n_duration_blocks = 1;
  c.n_heads = 1;
  c.decoder_hidden = 6;
  c.joint_dim = 6;
  c.vocab_size = 4;
  c.d_ff = 8;
  c.text_conv_kernel = 3;
  c.refiner_kernel = 3;
  c.duration_kernel = 3;
  c.n_codes = 8;
  c.quant_dim = 3;
  c.max_len = 16;
  return c;
}

Array<double> random_frames(i64 t_len, i64 d, u64 seed) {
  CounterRng rng(seed);
  Array<double> f({t_len, d});
  for (double& v : f.data) v = rng.next_normal();
  return f;
}

}  // namespace

TEST(MmMse, ExactExamplesAndScaling) {
  Tape<double> tape;
  Array<double> es({4, 3});
  for (size_t i = 0; i < es.data.size(); ++i) es.data[i] = 0.1 * static_cast<double>(i);
  Array<double> et({2, 3});
  for (i64 r = 0; r < 2; ++r)
    for (i64 j = 0; j < 3; ++j) et.at(r, j) = es.at(r, j);
  Var<double> v_es = tape.constant(es);
  EXPECT_DOUBLE_EQ(loss_mm_mse(v_es, tape.constant(et)).value().data[0], 0.0);

  Array<double> et1 = et;
  for (double& v : et1.data) v += 1.0;
  EXPECT_DOUBLE_EQ(loss_mm_mse(v_es, tape.constant(et1)).value().data[0], 1.0);

  // scaling both sides by c scales the loss by c^2
  Array<double> es_c = es, et_c = et1;
  for (double& v : es_c.data) v *= 3.0;
  for (double& v : et_c.data) v *= 3.0;
  EXPECT_NEAR(loss_mm_mse(tape.constant(es_c), tape.constant(et_c)).value().data[0], 9.0, 1e-12);
}

TEST(MmMse, ResampledLongerThanSpeechThrows) {
  Tape<double> tape;
  Var<double> es = tape.constant(Array<double>({2, 3}));
  Var<double> et = tape.constant(Array<double>({3, 3}));
  EXPECT_THROW(loss_mm_mse(es, et), Error);
}

TEST(DurationLoss, ExactExamples) {
  Tape<double> tape;
  std::vector<i64> targets = {2, 3, 5};
  Array<double> exact({3, 1});
  for (i64 u = 0; u < 3; ++u) exact.at(u, 0) = std::log(static_cast<double>(targets[u]));
  EXPECT_DOUBLE_EQ(loss_duration(tape.constant(exact), targets).value().data[0], 0.0);
  Array<double> off = exact;
  for (double& v : off.data) v += 1.0;
  EXPECT_NEAR(loss_duration(tape.constant(off), targets).value().data[0], 1.0, 1e-12);
  EXPECT_THROW(loss_duration(tape.constant(exact), std::vector<i64>{2, 3}), Error);
}

TEST(InfoNce, UniformLogitsGiveExactlyLogCandidates) {
  // anchors and targets mutually orthogonal: every similarity is zero, so
  // each anchor sees uniform logits over 1 positive + 7 negatives
  Tape<double> tape;
  i64 m = 8, d = 16;
  Array<double> anchors({m, d}), targets({m, d});
  for (i64 i = 0; i < m; ++i) {
    anchors.at(i, i) = 1.0;
    targets.at(i, 8 + i) = 1.0;
  }
  CounterRng rng(3);
  Var<double> loss =
      info_nce(tape.constant(anchors), tape.constant(targets), 0.1, 7, rng);
  EXPECT_NEAR(loss.value().data[0], std::log(8.0), 1e-12);
}

TEST(InfoNce, NegativeCountAdaptsToAvailablePositions) {
  Tape<double> tape;
  i64 m = 3, d = 6;
  Array<double> anchors({m, d}), targets({m, d});
  for (i64 i = 0; i < m; ++i) {
    anchors.at(i, i) = 1.0;
    targets.at(i, 3 + i) = 1.0;
  }
  CounterRng rng(9);
  Var<double> loss =
      info_nce(tape.constant(anchors), tape.constant(targets), 0.1, 7, rng);
  EXPECT_NEAR(loss.value().data[0], std::log(3.0), 1e-12);  // 1 positive + 2 negatives
}

TEST(InfoNce, MatchedPairsScoreNearZero) {
  Tape<double> tape;
  CounterRng data_rng(41);
  Array<double> rows({6, 16});
  for (double& v : rows.data) v = data_rng.next_normal();
  CounterRng rng(7);
  Var<double> loss = info_nce(tape.constant(rows), tape.constant(rows), 0.1, 7, rng);
  EXPECT_LT(loss.value().data[0], 0.5);
  EXPECT_GE(loss.value().data[0], 0.0);
}

TEST(CodebookCe, ZeroLogitsGiveExactlyLogCodes) {
  Tape<double> tape;
  Var<double> logits = tape.constant(Array<double>({5, 64}));
  Var<double> loss = codebook_cross_entropy(logits, std::vector<i64>{0, 7, 63, 12, 1});
  EXPECT_NEAR(loss.value().data[0], std::log(64.0), 1e-12);
}

TEST(CodebookCe, ConfidentCorrectLogitsScoreNearZero) {
  Tape<double> tape;
  Array<double> logits({3, 8});
  std::vector<i64> ids = {2, 5, 0};
  for (i64 r = 0; r < 3; ++r) logits.at(r, ids[static_cast<size_t>(r)]) = 30.0;
  EXPECT_LT(codebook_cross_entropy(tape.constant(logits), ids).value().data[0], 1e-9);
  EXPECT_THROW(codebook_cross_entropy(tape.constant(logits), std::vector<i64>{2, 5, 9}), Error);
}

TEST(SpeechOnly, UntrainedLossesNearUniformExpectation) {
  ModelConfig cfg;  // desk defaults: 64 codes
  Model<double> m(cfg, 19);
  Array<double> frames = random_frames(24, cfg.frame_dim, 5);
  CounterRng mask_rng(11);
  MaskSpec spec;
  MaskPlan plan = plan_mask(frames.rows(), cfg.d_model, spec, mask_rng);
  ASSERT_GE(static_cast<i64>(plan.masked_time_positions.size()), 2);
  SpeechTargets<double> targets = prepare_speech_targets(m, frames, plan);
  Tape<double> tape;
  Bound<double> b = m.bind(tape, false);
  CounterRng neg_rng(13);
  SpeechOnlyLosses<double> out =
      loss_speech_only(m, b, frames, spec, plan, targets, 0.1, 7, neg_rng);
  ASSERT_FALSE(out.skipped);
  // same order as the uniform-logit expectations ln 8 and ln 64
  EXPECT_GT(out.contrastive.value().data[0], 0.3);
  EXPECT_LT(out.contrastive.value().data[0], 7.0);
  EXPECT_GT(out.speech_mlm.value().data[0], 2.5);
  EXPECT_LT(out.speech_mlm.value().data[0], 6.5);
}

TEST(SpeechOnly, FewerThanTwoMaskedPositionsSkips) {
  ModelConfig cfg = tiny_config();
  Model<double> m(cfg, 23);
  Array<double> frames = random_frames(8, cfg.frame_dim, 6);
  MaskSpec spec;
  spec.n_time_masks = 0;  // nothing masked in time
  CounterRng mask_rng(2);
  MaskPlan plan = plan_mask(frames.rows(), cfg.d_model, spec, mask_rng);
  SpeechTargets<double> targets = prepare_speech_targets(m, frames, plan);
  Tape<double> tape;
  Bound<double> b = m.bind(tape, false);
  CounterRng neg_rng(3);
  SpeechOnlyLosses<double> out =
      loss_speech_only(m, b, frames, spec, plan, targets, 0.1, 7, neg_rng);
  EXPECT_TRUE(out.skipped);
  EXPECT_EQ(out.n_masked, 0);
  EXPECT_FALSE(out.contrastive.valid());
}

TEST(AMlm, ZeroMasksEqualsPlainTransducerOnTextPath) {
  ModelConfig cfg = tiny_config();
  Model<double> m(cfg, 29);
  std::vector<i64> tokens = {1, 3};
  std::vector<i64> durations = {2, 2};
  MaskSpec none;
  none.n_time_masks = 0;
  none.n_feature_masks = 0;
  Tape<double> tape;
  Bound<double> b = m.bind(tape, false);
  CounterRng rng(1);
  double a_mlm = loss_a_mlm(m, b, tokens, durations, none, rng).value().data[0];

  Var<double> e_t = m.text_embed(b, tokens);
  Var<double> e_hat = m.refine(b, resample(e_t, durations, b.buffer("pos.sin")));
  Var<double> enc = m.shared_encode(b, e_hat);
  Var<double> pred = m.decoder_states(b, tokens);
  double plain =
      rnnt_loss_op(m.joint_lattice(b, enc, pred), tokens, e_hat.value().rows()).value().data[0];
  EXPECT_DOUBLE_EQ(a_mlm, plain);
  EXPECT_TRUE(std::isfinite(a_mlm));
  EXPECT_GT(a_mlm, 0.0);
}

TEST(Objectives, TeacherReceivesNoGradientAndBothSidesDo) {
  ModelConfig cfg = tiny_config();
  Model<double> student(cfg, 31);
  Model<double> teacher(cfg, 37);
  Array<double> frames = random_frames(6, cfg.frame_dim, 71);
  std::vector<i64> tokens = {2, 4};

  // teacher produces durations as plain integers
  std::vector<i64> durations = teacher_align_durations(teacher, frames, tokens);
  ASSERT_EQ(durations.size(), tokens.size());
  i64 sum = 0;
  for (i64 d : durations) {
    EXPECT_GE(d, 1);
    sum += d;
  }
  EXPECT_LE(sum, frames.rows());

  Tape<double> tape;
  Bound<double> sb = student.bind(tape, true);
  Bound<double> tb = teacher.bind(tape, true);  // present on tape, unused
  PairedLosses<double> pl = loss_mm(student, sb, frames, tokens, durations);
  Var<double> total = add(add(pl.mm_mse, pl.rnnt_paired), pl.duration);
  tape.backward(total);

  auto grad_abs_sum = [&](const Bound<double>& bd, const std::string& name) {
    const Array<double>& g = tape.grad(bd(name).id);
    double s = 0;
    for (double v : g.data) s += std::abs(v);
    return s;
  };
  for (const auto& [name, var] : tb.vars) EXPECT_EQ(grad_abs_sum(tb, name), 0.0) << name;
  // text side, speech side, refiner, duration head all receive gradient
  EXPECT_GT(grad_abs_sum(sb, "text.emb"), 0.0);
  EXPECT_GT(grad_abs_sum(sb, "input_proj.w"), 0.0);
  EXPECT_GT(grad_abs_sum(sb, "refiner.l0.pw.w"), 0.0);
  EXPECT_GT(grad_abs_sum(sb, "dur.out.w"), 0.0);
  EXPECT_GT(grad_abs_sum(sb, "joint.out.w"), 0.0);
}

TEST(Objectives, TeacherTextDurationsArePositiveRoundedPredictions) {
  ModelConfig cfg = tiny_config();
  Model<double> teacher(cfg, 41);
  std::vector<i64> tokens = {1, 2, 3};
  std::vector<i64> d = teacher_text_durations(teacher, tokens);
  ASSERT_EQ(d.size(), tokens.size());
  for (i64 v : d) EXPECT_GE(v, 1);
}

TEST(GradCheckObjectives, EveryComponentMatchesFiniteDifferences) {
  GradCheckSuite suite = run_gradient_checks(43);
  ASSERT_EQ(suite.components.size(), 6u);
  std::vector<std::string> expected = {"rnnt",  "mm_mse",      "duration_loss",
                                       "a_mlm", "contrastive", "speech_mlm"};
  for (size_t i = 0; i < expected.size(); ++i) {
    const ComponentGradCheck& c = suite.components[i];
    EXPECT_EQ(c.component, expected[i]);
    EXPECT_TRUE(c.report.deterministic) << c.component;
    EXPECT_TRUE(c.report.pass) << c.component << ": " << c.report.summary();
    EXPECT_GT(c.report.coords_checked, 0) << c.component;
  }
  EXPECT_TRUE(suite.pass()) << suite.summary();
  EXPECT_LE(suite.max_rel_err(), 1e-4);
}

TEST(LossBundleTotals, WeightsApply) {
  LossBundle b;
  b.mm_mse = 1.0;
  b.rnnt_paired = 2.0;
  b.a_mlm = 3.0;
  b.contrastive = 4.0;
  b.speech_mlm = 5.0;
  b.duration = 6.0;
  LossWeights w;
  EXPECT_DOUBLE_EQ(b.total(w), 21.0);
  w.mm_mse = 0.0;
  w.duration = 0.5;
  EXPECT_DOUBLE_EQ(b.total(w), 17.0);
}
