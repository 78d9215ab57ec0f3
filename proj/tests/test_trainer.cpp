#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <sstream>

#include "maestro/maestro.hpp"

using namespace maestro;

namespace {

// Small corpus and short curriculum so a full multi-stage run takes
// seconds. Model dims stay at corpus-compatible defaults.
RunConfig quick_config() {
  RunConfig cfg;
  cfg.corpus.n_speech = 24;
  cfg.corpus.n_text = 24;
  cfg.corpus.n_paired = 24;
  cfg.corpus.n_eval_paired = 4;
  cfg.corpus.n_eval_text = 4;
  cfg.corpus.max_tokens = 5;  // short utterances keep lattices small
  cfg.curriculum.stage1_steps = 4;
  cfg.curriculum.stage2_delay = 2;
  cfg.curriculum.stage3_delay = 2;
  cfg.curriculum.total_steps = 8;
  cfg.curriculum.batch_speech = 2;
  cfg.curriculum.batch_text = 2;
  cfg.curriculum.batch_paired = 2;
  cfg.curriculum.ema_decay = 0.5;
  cfg.optim.warmup_steps = 4;
  cfg.eval_every = 4;
  cfg.eval_items = 2;
  cfg.checkpoint_every = 0;
  cfg.seed = 77;
  return cfg;
}

LoadedCorpus quick_corpus(const RunConfig& cfg) { return to_loaded(generate_corpus(cfg.corpus)); }

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  return lines;
}

std::string field_of(const std::string& line, const std::string& key) {
  std::istringstream is(line);
  std::string token;
  while (is >> token) {
    if (token.rfind(key + ":", 0) == 0) return token.substr(key.size() + 1);
  }
  return "";
}

}  // namespace

TEST(LrSchedule, WarmupAndDecayExamples) {
  double peak = 2e-3;
  i64 w = 100;
  EXPECT_DOUBLE_EQ(lr_schedule(peak, w, 50), peak / 2);  // midpoint of linear warmup
  EXPECT_DOUBLE_EQ(lr_schedule(peak, w, 100), peak);
  EXPECT_DOUBLE_EQ(lr_schedule(peak, w, 400), peak / 2);  // inverse square root
  EXPECT_GT(lr_schedule(peak, w, 101), lr_schedule(peak, w, 102));
  EXPECT_THROW(lr_schedule(peak, w, 0), Error);
}

TEST(Adam, ZeroGradientsLeaveParamsUnchanged) {
  ModelConfig mc;
  mc.d_model = 8;
  mc.n_speech_layers = 1;
  mc.n_shared_layers = 1;
  mc.n_text_conv_layers = 1;
  mc.n_text_transformer_layers = 1;
  mc.n_refiner_layers = 1;
  mc.n_duration_blocks = 1;
  mc.n_heads = 1;
  mc.frame_dim = 4;
  mc.vocab_size = 4;
  mc.decoder_hidden = 4;
  mc.joint_dim = 4;
  mc.d_ff = 8;
  Model<double> m(mc, 3);
  Parameters<double> before = m.params;
  Adam<double> opt(OptimizerConfig{}, m.params);
  std::map<std::string, Array<double>> grads;
  for (const auto& [name, arr] : m.params.values) grads.emplace(name, zeros_like(arr));
  EXPECT_TRUE(opt.apply(m.params, grads, 1e-3));
  for (const auto& [name, arr] : m.params.values)
    EXPECT_EQ(arr.data, before.values.at(name).data) << name;
}

TEST(Adam, NonFiniteGradientSkipsStep) {
  Parameters<double> p;
  p.values["w"] = Array<double>({2, 2});
  Adam<double> opt(OptimizerConfig{}, p);
  std::map<std::string, Array<double>> grads;
  grads["w"] = Array<double>({2, 2});
  grads["w"].data[3] = std::numeric_limits<double>::quiet_NaN();
  Parameters<double> before = p;
  EXPECT_FALSE(opt.apply(p, grads, 1e-3));
  EXPECT_EQ(opt.skipped_steps, 1);
  EXPECT_EQ(opt.applied_steps, 0);
  EXPECT_EQ(p.values["w"].data, before.values["w"].data);
}

TEST(Adam, ClippingBoundsPostClipNorm) {
  Parameters<double> p;
  p.values["w"] = Array<double>({4});
  Adam<double> opt(OptimizerConfig{}, p);
  std::map<std::string, Array<double>> grads;
  grads["w"] = Array<double>({4});
  for (double& v : grads["w"].data) v = 50.0;  // norm 100
  EXPECT_TRUE(opt.apply(p, grads, 1e-3));
  EXPECT_NEAR(opt.last_grad_norm, 100.0, 1e-9);
  EXPECT_LE(opt.last_grad_norm * opt.last_clip_scale, opt.cfg.clip_norm + 1e-6);
  EXPECT_LT(opt.last_clip_scale, 1.0);
}

TEST(Adam, ConvexQuadraticDecreasesMonotonically) {
  // f(x) = sum (x - 1)^2, gradient 2(x - 1)
  Parameters<double> p;
  p.values["x"] = Array<double>({8});
  Adam<double> opt(OptimizerConfig{}, p);
  auto loss = [&] {
    double s = 0;
    for (double v : p.values["x"].data) s += (v - 1.0) * (v - 1.0);
    return s;
  };
  // peak small enough that 100 steps cannot overshoot the optimum
  double prev = loss();
  for (i64 s = 1; s <= 100; ++s) {
    std::map<std::string, Array<double>> grads;
    grads["x"] = Array<double>({8});
    for (size_t i = 0; i < 8; ++i) grads["x"].data[i] = 2.0 * (p.values["x"].data[i] - 1.0);
    ASSERT_TRUE(opt.apply(p, grads, lr_schedule(0.01, 10, s)));
    double cur = loss();
    EXPECT_LT(cur, prev) << "step " << s;
    prev = cur;
  }
}

TEST(Ema, ClosedFormExamples) {
  Parameters<double> p;
  p.values["w"] = Array<double>({1});
  p.values["w"].data[0] = 0.0;
  EmaShadow<double> ema(0.5, p);  // shadow starts at 0
  p.values["w"].data[0] = 1.0;    // constant param from now on
  for (int k = 0; k < 3; ++k) ema.update(p);
  EXPECT_DOUBLE_EQ(ema.shadow.at("w").data[0], 0.875);

  EmaShadow<double> e2(0.99, p);
  Parameters<double> q = p;
  q.values["w"].data[0] = -3.0;
  e2.shadow.at("w").data[0] = 5.0;
  for (int k = 0; k < 100; ++k) e2.update(q);
  double expected = -3.0 + std::pow(0.99, 100) * (5.0 - (-3.0));
  EXPECT_NEAR(e2.shadow.at("w").data[0], expected, 1e-12);
  EXPECT_THROW(EmaShadow<double>(1.0, p), Error);
}

TEST(Ema, TeacherModelCarriesShadowValues) {
  ModelConfig mc;
  Model<double> m(mc, 5);
  EmaShadow<double> ema(0.9, m.params);
  for (auto& [name, arr] : m.params.values)
    for (double& v : arr.data) v += 1.0;  // student drifts
  ema.update(m.params);
  Model<double> t = teacher_model(m, ema);
  const Array<double>& tw = t.params.at("input_proj.w");
  const Array<double>& sw = m.params.at("input_proj.w");
  const Array<double>& sh = ema.shadow.at("input_proj.w");
  EXPECT_EQ(tw.data, sh.data);
  EXPECT_NE(tw.data, sw.data);
  EXPECT_EQ(t.params.buffer("pos.sin").data, m.params.buffer("pos.sin").data);
}

TEST(CheckpointFile, RoundTripIsExact) {
  Checkpoint<double> ck;
  ck.step = 42;
  ck.params["a.w"] = Array<double>({2, 3});
  for (size_t i = 0; i < 6; ++i) ck.params["a.w"].data[i] = 0.1 * static_cast<double>(i) - 0.3;
  ck.opt_m["a.w"] = zeros_like(ck.params["a.w"]);
  ck.opt_v["a.w"] = zeros_like(ck.params["a.w"]);
  ck.opt_v["a.w"].data[1] = 1e-17;
  ck.applied_steps = 41;
  ck.skipped_steps = 1;
  ck.ema_decay = 0.99;
  ck.ema["a.w"] = ck.params["a.w"];
  ck.cursors["speech"] = {3, 7};
  ck.counters["text_infeasible"] = 5;
  std::string path = "/tmp/maestro_ck_test.mstp";
  save_checkpoint(path, ck);
  Checkpoint<double> rd = load_checkpoint<double>(path);
  EXPECT_EQ(rd.step, 42u);
  EXPECT_EQ(rd.params.at("a.w").data, ck.params.at("a.w").data);
  EXPECT_EQ(rd.opt_v.at("a.w").data, ck.opt_v.at("a.w").data);
  EXPECT_EQ(rd.applied_steps, 41u);
  EXPECT_EQ(rd.skipped_steps, 1u);
  EXPECT_EQ(rd.ema_decay, 0.99);
  EXPECT_EQ(rd.cursors.at("speech").epoch, 3u);
  EXPECT_EQ(rd.cursors.at("speech").pos, 7u);
  EXPECT_EQ(rd.counters.at("text_infeasible"), 5u);
  std::remove(path.c_str());
}

TEST(CheckpointFile, CorruptionAndMissingFileError) {
  EXPECT_THROW(load_checkpoint<double>("/tmp/maestro_no_such.mstp"), Error);
  std::string path = "/tmp/maestro_ck_bad.mstp";
  {
    std::ofstream f(path, std::ios::binary);
    f << "MSTPxxxx";
  }
  EXPECT_THROW(load_checkpoint<double>(path), Error);
  std::remove(path.c_str());
}

TEST(StreamCursorSuite, CyclesWithSeededShuffles) {
  StreamCursor c{rng_label::shuffle_speech, 5, 0, 0, {}};
  c.reshuffle(9);
  std::vector<i64> first_epoch, second_epoch;
  for (int i = 0; i < 5; ++i) first_epoch.push_back(c.next(9));
  for (int i = 0; i < 5; ++i) second_epoch.push_back(c.next(9));
  auto sorted = first_epoch;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<i64>{0, 1, 2, 3, 4}));
  EXPECT_NE(first_epoch, second_epoch);  // reshuffled between epochs
  EXPECT_EQ(c.epoch, 1u);

  StreamCursor d{rng_label::shuffle_speech, 5, 0, 0, {}};
  d.reshuffle(9);
  std::vector<i64> replay;
  for (int i = 0; i < 5; ++i) replay.push_back(d.next(9));
  EXPECT_EQ(replay, first_epoch);
}

TEST(TrainerSuite, StageActivationIsExact) {
  RunConfig cfg = quick_config();
  LoadedCorpus corpus = quick_corpus(cfg);
  std::ostringstream metrics;
  Trainer<double> tr(cfg, corpus, &metrics);
  tr.train();
  std::vector<std::string> lines = lines_of(metrics.str());
  ASSERT_EQ(lines.size(), 8u);
  for (i64 s = 0; s < 8; ++s) {
    const std::string& line = lines[static_cast<size_t>(s)];
    EXPECT_EQ(field_of(line, "step"), std::to_string(s));
    std::string streams = field_of(line, "streams");
    if (s < 4) {
      EXPECT_EQ(streams, "speech") << line;
      EXPECT_EQ(field_of(line, "mm_mse"), "0") << line;
      EXPECT_EQ(field_of(line, "rnnt_paired"), "0") << line;
      EXPECT_EQ(field_of(line, "a_mlm"), "0") << line;
      EXPECT_EQ(field_of(line, "duration"), "0") << line;
    } else if (s < 6) {
      EXPECT_EQ(streams, "speech,paired") << line;
      EXPECT_NE(field_of(line, "mm_mse"), "0") << line;
      EXPECT_NE(field_of(line, "rnnt_paired"), "0") << line;
      EXPECT_EQ(field_of(line, "batch_text"), "0") << line;
    } else {
      EXPECT_EQ(streams, "speech,paired,text") << line;
      EXPECT_EQ(field_of(line, "batch_text"), "2") << line;
    }
    EXPECT_NE(field_of(line, "contrastive"), "0") << line;
    EXPECT_NE(field_of(line, "speech_mlm"), "0") << line;
    EXPECT_EQ(field_of(line, "batch_speech"), "2") << line;
    EXPECT_NE(field_of(line, "grad_norm"), "") << line;
    EXPECT_NE(field_of(line, "lr"), "") << line;
  }
  // eval cadence: steps 3 and 7
  EXPECT_NE(field_of(lines[3], "mm_mse_eval"), "");
  EXPECT_EQ(field_of(lines[4], "mm_mse_eval"), "");
  EXPECT_NE(field_of(lines[7], "mm_mse_eval"), "");
  ASSERT_EQ(tr.eval_history().size(), 2u);
  EXPECT_EQ(tr.eval_history()[0].first, 3);
}

TEST(TrainerSuite, RerunsAreBitwiseIdentical) {
  RunConfig cfg = quick_config();
  LoadedCorpus corpus = quick_corpus(cfg);
  std::ostringstream m1, m2;
  Trainer<double>(cfg, corpus, &m1).train();
  Trainer<double>(cfg, corpus, &m2).train();
  EXPECT_EQ(m1.str(), m2.str());
  EXPECT_FALSE(m1.str().empty());
}

TEST(TrainerSuite, ResumeReproducesUninterruptedRunBitwise) {
  RunConfig cfg = quick_config();
  LoadedCorpus corpus = quick_corpus(cfg);

  std::ostringstream full;
  Trainer<double> a(cfg, corpus, &full);
  a.train();
  std::vector<std::string> full_lines = lines_of(full.str());

  std::ostringstream head;
  Trainer<double> b(cfg, corpus, &head);
  for (int s = 0; s < 5; ++s) b.step_once();
  std::string path = "/tmp/maestro_resume_test.mstp";
  b.save(path);

  std::ostringstream tail;
  Trainer<double> c(cfg, corpus, &tail);
  c.restore(path);
  EXPECT_EQ(c.step(), 5);
  while (c.step_once()) {
  }
  std::vector<std::string> tail_lines = lines_of(tail.str());
  ASSERT_EQ(tail_lines.size(), 3u);
  for (size_t i = 0; i < 3; ++i) EXPECT_EQ(tail_lines[i], full_lines[5 + i]) << i;

  // the resumed model matches the uninterrupted one exactly
  for (const auto& [name, arr] : a.model().params.values)
    EXPECT_EQ(arr.data, c.model().params.values.at(name).data) << name;
  std::remove(path.c_str());
}

TEST(TrainerSuite, EmptyStreamFailsAtStageEntry) {
  RunConfig cfg = quick_config();
  LoadedCorpus corpus = quick_corpus(cfg);
  corpus.paired.clear();
  std::ostringstream metrics;
  Trainer<double> tr(cfg, corpus, &metrics);
  for (int s = 0; s < 4; ++s) EXPECT_NO_THROW(tr.step_once());  // stage 1 fine
  EXPECT_THROW(tr.step_once(), Error);                          // stage 2 entry
}

TEST(TrainerSuite, VocabMismatchRejected) {
  RunConfig cfg = quick_config();
  LoadedCorpus corpus = quick_corpus(cfg);
  cfg.model.vocab_size = 8;
  EXPECT_THROW(Trainer<double>(cfg, corpus, nullptr), Error);
}

TEST(TrainerSuite, EmaShadowTracksStudent) {
  RunConfig cfg = quick_config();
  cfg.curriculum.stage1_steps = 2;
  cfg.curriculum.stage2_delay = 1;
  cfg.curriculum.stage3_delay = 1;
  cfg.curriculum.total_steps = 4;
  LoadedCorpus corpus = quick_corpus(cfg);
  Trainer<double> tr(cfg, corpus, nullptr);
  tr.step_once();
  // decay 0.5: shadow = 0.5*init + 0.5*updated, strictly between the two
  const Array<double>& s = tr.ema().shadow.at("input_proj.w");
  const Array<double>& p = tr.model().params.at("input_proj.w");
  Model<double> fresh(cfg.model, cfg.seed);
  const Array<double>& init = fresh.params.at("input_proj.w");
  bool any_moved = false;
  for (size_t i = 0; i < s.data.size(); ++i) {
    if (p.data[i] != init.data[i]) {
      any_moved = true;
      EXPECT_NEAR(s.data[i], 0.5 * init.data[i] + 0.5 * p.data[i], 1e-15);
    }
  }
  EXPECT_TRUE(any_moved);
}
