#pragma once

#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "maestro/checkpoint.hpp"
#include "maestro/config.hpp"
#include "maestro/ema.hpp"
#include "maestro/eval.hpp"
#include "maestro/objectives.hpp"
#include "maestro/optimizer.hpp"

// Three-stream curriculum trainer. Stage 1 trains on untranscribed speech
// only; paired data joins at stage 2 (modality matching, transducer,
// duration, aligned MLM); unspoken text joins at stage 3 (aligned MLM with
// teacher-predicted durations). The EMA shadow of the student is the
// teacher for every alignment, duration prediction, and text resampling.
// All per-step randomness is derived from (seed, step, slot), so a resumed
// run replays the exact remaining schedule.

namespace maestro {

namespace rng_label {
inline constexpr u64 shuffle_speech = 0x53485553;
inline constexpr u64 shuffle_text = 0x53485458;
inline constexpr u64 shuffle_paired = 0x53485052;
inline constexpr u64 mask = 0x4D41534B;
inline constexpr u64 negatives = 0x4E454753;
}  // namespace rng_label

// Cycles over a stream in seeded per-epoch shuffles.
struct StreamCursor {
  u64 label = 0;
  i64 n_items = 0;
  u64 epoch = 0;
  u64 pos = 0;
  std::vector<i64> order;

  void reshuffle(u64 seed) {
    CounterRng rng(CounterRng::derive_key(CounterRng::derive_key(seed, label), epoch));
    order = rng.permutation(n_items);
  }
  i64 next(u64 seed) {
    if (pos >= order.size()) {
      ++epoch;
      pos = 0;
      reshuffle(seed);
    }
    return order[static_cast<size_t>(pos++)];
  }
};

template <typename T>
class Trainer {
 public:
  Trainer(const RunConfig& cfg, const LoadedCorpus& corpus, std::ostream* metrics = nullptr)
      : cfg_(cfg),
        model_(cfg.model, cfg.seed),
        opt_(cfg.optim, model_.params),
        ema_(cfg.curriculum.ema_decay, model_.params),
        corpus_(&corpus),
        metrics_(metrics) {
    cfg_.curriculum.validate();
    cfg_.model.validate();
    require(cfg_.model.vocab_size == corpus.vocab,
            "trainer: model vocab " + std::to_string(cfg_.model.vocab_size) +
                " != corpus vocab " + std::to_string(corpus.vocab));
    require(cfg_.model.frame_dim == corpus.frame_dim,
            "trainer: model frame_dim " + std::to_string(cfg_.model.frame_dim) +
                " != corpus frame_dim " + std::to_string(corpus.frame_dim));
    warmup_ = cfg_.optim.warmup_steps > 0
                  ? cfg_.optim.warmup_steps
                  : std::max<i64>(1, cfg_.curriculum.total_steps / 10);
    speech_ = {rng_label::shuffle_speech, static_cast<i64>(corpus.speech.size()), 0, 0, {}};
    text_ = {rng_label::shuffle_text, static_cast<i64>(corpus.text.size()), 0, 0, {}};
    paired_ = {rng_label::shuffle_paired, static_cast<i64>(corpus.paired.size()), 0, 0, {}};
    if (speech_.n_items > 0) speech_.reshuffle(cfg_.seed);
    if (text_.n_items > 0) text_.reshuffle(cfg_.seed);
    if (paired_.n_items > 0) paired_.reshuffle(cfg_.seed);
  }

  i64 step() const { return step_; }
  const Model<T>& model() const { return model_; }
  Model<T> teacher() const { return teacher_model(model_, ema_); }
  const EmaShadow<T>& ema() const { return ema_; }
  i64 skipped_optimizer_steps() const { return opt_.skipped_steps; }
  i64 text_infeasible() const { return text_infeasible_; }
  i64 speech_skipped() const { return speech_skipped_; }
  const std::vector<std::pair<i64, double>>& eval_history() const { return eval_history_; }

  bool speech_active() const { return true; }
  bool paired_active() const {
    if (cfg_.stage_override > 0) return cfg_.stage_override >= 2;
    return step_ >= cfg_.curriculum.stage2_start();
  }
  bool text_active() const {
    if (cfg_.stage_override > 0) return cfg_.stage_override >= 3;
    return step_ >= cfg_.curriculum.stage3_start();
  }

  // Runs one training step; returns false once total_steps are done.
  bool step_once() {
    if (step_ >= cfg_.curriculum.total_steps) return false;
    check_stage_entry();
    Model<T> teacher = teacher_model(model_, ema_);

    Tape<T> tape;
    Bound<T> b = model_.bind(tape, true);
    LossBundle bundle;
    std::vector<Var<T>> terms;
    std::vector<i64> speech_ids, text_ids, paired_ids;

    // --- untranscribed speech: contrastive + codebook MLM ---
    {
      std::vector<Var<T>> contrast, mlm;
      for (i64 slot = 0; slot < cfg_.curriculum.batch_speech; ++slot) {
        i64 id = speech_.next(cfg_.seed);
        speech_ids.push_back(id);
        const CorpusItem& item = corpus_->speech[static_cast<size_t>(id)];
        Array<T> frames = frames_to<T>(item.frames);
        CounterRng mask_rng(slot_key(rng_label::mask, 0, slot));
        MaskPlan plan = plan_mask(frames.rows(), cfg_.model.d_model, cfg_.mask, mask_rng);
        SpeechTargets<T> targets = prepare_speech_targets(model_, frames, plan);
        CounterRng neg_rng(slot_key(rng_label::negatives, 0, slot));
        SpeechOnlyLosses<T> out =
            loss_speech_only(model_, b, frames, cfg_.mask, plan, targets,
                             static_cast<T>(cfg_.temperature), cfg_.n_negatives, neg_rng);
        if (out.skipped) {
          ++speech_skipped_;
          continue;
        }
        contrast.push_back(out.contrastive);
        mlm.push_back(out.speech_mlm);
      }
      if (!contrast.empty()) {
        Var<T> c = mean_of(contrast);
        Var<T> q = mean_of(mlm);
        bundle.contrastive = value_of(c);
        bundle.speech_mlm = value_of(q);
        if (cfg_.weights.contrastive != 0.0)
          terms.push_back(scale(c, static_cast<T>(cfg_.weights.contrastive)));
        if (cfg_.weights.speech_mlm != 0.0)
          terms.push_back(scale(q, static_cast<T>(cfg_.weights.speech_mlm)));
      }
    }

    std::vector<Var<T>> a_mlm_terms;

    // --- paired speech and text ---
    if (paired_active()) {
      std::vector<Var<T>> mm, rnnt, dur;
      for (i64 slot = 0; slot < cfg_.curriculum.batch_paired; ++slot) {
        i64 id = paired_.next(cfg_.seed);
        paired_ids.push_back(id);
        const CorpusItem& item = corpus_->paired[static_cast<size_t>(id)];
        Array<T> frames = frames_to<T>(item.frames);
        std::vector<i64> durations = teacher_align_durations(teacher, frames, item.tokens);
        PairedLosses<T> pl = loss_mm(model_, b, frames, item.tokens, durations);
        mm.push_back(pl.mm_mse);
        rnnt.push_back(pl.rnnt_paired);
        dur.push_back(pl.duration);
        CounterRng mask_rng(slot_key(rng_label::mask, 1, slot));
        a_mlm_terms.push_back(
            loss_a_mlm(model_, b, item.tokens, durations, cfg_.mask, mask_rng));
      }
      Var<T> m_ = mean_of(mm);
      Var<T> r_ = mean_of(rnnt);
      Var<T> d_ = mean_of(dur);
      bundle.mm_mse = value_of(m_);
      bundle.rnnt_paired = value_of(r_);
      bundle.duration = value_of(d_);
      if (cfg_.weights.mm_mse != 0.0) terms.push_back(scale(m_, static_cast<T>(cfg_.weights.mm_mse)));
      if (cfg_.weights.rnnt_paired != 0.0)
        terms.push_back(scale(r_, static_cast<T>(cfg_.weights.rnnt_paired)));
      if (cfg_.weights.duration != 0.0)
        terms.push_back(scale(d_, static_cast<T>(cfg_.weights.duration)));
    }

    // --- unspoken text ---
    if (text_active()) {
      for (i64 slot = 0; slot < cfg_.curriculum.batch_text; ++slot) {
        i64 id = text_.next(cfg_.seed);
        text_ids.push_back(id);
        const CorpusItem& item = corpus_->text[static_cast<size_t>(id)];
        std::vector<i64> durations = teacher_text_durations(teacher, item.tokens);
        i64 total = 0;
        for (i64 d : durations) total += d;
        if (total > cfg_.model.max_len) {
          ++text_infeasible_;
          continue;
        }
        CounterRng mask_rng(slot_key(rng_label::mask, 2, slot));
        a_mlm_terms.push_back(
            loss_a_mlm(model_, b, item.tokens, durations, cfg_.mask, mask_rng));
      }
    }

    if (!a_mlm_terms.empty()) {
      Var<T> a = mean_of(a_mlm_terms);
      bundle.a_mlm = value_of(a);
      if (cfg_.weights.a_mlm != 0.0) terms.push_back(scale(a, static_cast<T>(cfg_.weights.a_mlm)));
    }

    require(!terms.empty(), "trainer: no loss terms at step " + std::to_string(step_));
    Var<T> total = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
    double total_value = value_of(total);
    if (!std::isfinite(total_value)) abort_non_finite(bundle, speech_ids, text_ids, paired_ids);

    tape.backward(total);
    std::map<std::string, Array<T>> grads;
    for (const auto& [name, var] : b.vars) grads.emplace(name, tape.grad(var.id));
    double grad_norm = global_grad_norm(grads);
    double lr = lr_schedule(cfg_.optim.lr_peak, warmup_, step_ + 1);
    bool applied = opt_.apply(model_.params, grads, lr);
    if (applied) ema_.update(model_.params);

    double mm_eval = -1.0;
    if (cfg_.eval_every > 0 && (step_ + 1) % cfg_.eval_every == 0 &&
        !corpus_->eval_paired.empty()) {
      mm_eval = eval_mm_mse(model_, corpus_->eval_paired, cfg_.eval_items);
      eval_history_.emplace_back(step_, mm_eval);
    }
    write_metrics(bundle, total_value, grad_norm, lr, speech_ids.size(), text_ids.size(),
                  paired_ids.size(), mm_eval);
    ++step_;
    return step_ < cfg_.curriculum.total_steps;
  }

  void train() {
    while (step_once()) {
      if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0 &&
          !cfg_.out_dir.empty())
        save(cfg_.out_dir + "/ckpt_" + std::to_string(step_) + ".mstp");
    }
  }

  void save(const std::string& path) const {
    Checkpoint<T> ck;
    ck.step = static_cast<u64>(step_);
    ck.params = model_.params.values;
    ck.opt_m = opt_.m;
    ck.opt_v = opt_.v;
    ck.applied_steps = static_cast<u64>(opt_.applied_steps);
    ck.skipped_steps = static_cast<u64>(opt_.skipped_steps);
    ck.ema_decay = ema_.decay;
    ck.ema = ema_.shadow;
    ck.cursors["speech"] = {speech_.epoch, speech_.pos};
    ck.cursors["text"] = {text_.epoch, text_.pos};
    ck.cursors["paired"] = {paired_.epoch, paired_.pos};
    ck.counters["text_infeasible"] = static_cast<u64>(text_infeasible_);
    ck.counters["speech_skipped"] = static_cast<u64>(speech_skipped_);
    save_checkpoint(path, ck);
  }

  void restore(const std::string& path) {
    Checkpoint<T> ck = load_checkpoint<T>(path);
    require(ck.params.size() == model_.params.values.size(),
            "restore: parameter count mismatch in " + path);
    for (auto& [name, arr] : model_.params.values) {
      auto it = ck.params.find(name);
      require(it != ck.params.end() && it->second.shape == arr.shape,
              "restore: missing or misshaped parameter " + name);
      arr = it->second;
    }
    opt_.m = std::move(ck.opt_m);
    opt_.v = std::move(ck.opt_v);
    opt_.applied_steps = static_cast<i64>(ck.applied_steps);
    opt_.skipped_steps = static_cast<i64>(ck.skipped_steps);
    require(ck.ema_decay == ema_.decay, "restore: ema decay mismatch");
    ema_.shadow = std::move(ck.ema);
    restore_cursor(speech_, ck, "speech");
    restore_cursor(text_, ck, "text");
    restore_cursor(paired_, ck, "paired");
    text_infeasible_ = static_cast<i64>(ck.counters.at("text_infeasible"));
    speech_skipped_ = static_cast<i64>(ck.counters.at("speech_skipped"));
    step_ = static_cast<i64>(ck.step);
  }

 private:
  u64 slot_key(u64 label, u64 stream_tag, i64 slot) const {
    u64 k = CounterRng::derive_key(cfg_.seed, label);
    k = CounterRng::derive_key(k, static_cast<u64>(step_) * 8 + stream_tag);
    return CounterRng::derive_key(k, static_cast<u64>(slot));
  }

  static Var<T> mean_of(const std::vector<Var<T>>& terms) {
    Var<T> s = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) s = add(s, terms[i]);
    return scale(s, T(1) / static_cast<T>(terms.size()));
  }

  static double value_of(Var<T> v) { return static_cast<double>(v.value().data[0]); }

  void check_stage_entry() {
    if (step_ == 0) {
      require(speech_.n_items > 0, "trainer: speech stream is empty at stage 1 entry");
      if (paired_active())
        require(paired_.n_items > 0, "trainer: paired stream is empty at stage 2 entry");
      if (text_active())
        require(text_.n_items > 0, "trainer: text stream is empty at stage 3 entry");
      return;
    }
    if (cfg_.stage_override > 0) return;  // pinned mix never crosses a boundary
    if (step_ == cfg_.curriculum.stage2_start())
      require(paired_.n_items > 0, "trainer: paired stream is empty at stage 2 entry");
    if (step_ == cfg_.curriculum.stage3_start())
      require(text_.n_items > 0, "trainer: text stream is empty at stage 3 entry");
  }

  void restore_cursor(StreamCursor& c, const Checkpoint<T>& ck, const std::string& name) {
    const StreamCursorState& s = ck.cursors.at(name);
    c.epoch = s.epoch;
    c.pos = s.pos;
    if (c.n_items > 0) {
      c.reshuffle(cfg_.seed);
      require(c.pos <= c.order.size(), "restore: cursor " + name + " beyond stream size");
    }
  }

  [[noreturn]] void abort_non_finite(const LossBundle& bundle, const std::vector<i64>& speech_ids,
                                     const std::vector<i64>& text_ids,
                                     const std::vector<i64>& paired_ids) const {
    std::ostringstream os;
    os << "training aborted: non-finite loss at step " << step_;
    os << "; components mm_mse:" << bundle.mm_mse << " rnnt_paired:" << bundle.rnnt_paired
       << " a_mlm:" << bundle.a_mlm << " contrastive:" << bundle.contrastive
       << " speech_mlm:" << bundle.speech_mlm << " duration:" << bundle.duration;
    auto ids = [&os](const char* name, const std::vector<i64>& v) {
      os << "; " << name << " items [";
      for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
      os << "]";
    };
    ids("speech", speech_ids);
    ids("text", text_ids);
    ids("paired", paired_ids);
    fail(os.str());
  }

  void write_metrics(const LossBundle& bundle, double total, double grad_norm, double lr,
                     size_t n_speech, size_t n_text, size_t n_paired, double mm_eval) {
    if (!metrics_) return;
    std::ostringstream os;
    os << std::setprecision(std::numeric_limits<double>::max_digits10);
    os << "step:" << step_;
    os << " streams:speech";
    if (paired_active()) os << ",paired";
    if (text_active()) os << ",text";
    os << " mm_mse:" << bundle.mm_mse << " rnnt_paired:" << bundle.rnnt_paired
       << " a_mlm:" << bundle.a_mlm << " contrastive:" << bundle.contrastive
       << " speech_mlm:" << bundle.speech_mlm << " duration:" << bundle.duration
       << " total:" << total << " grad_norm:" << grad_norm << " lr:" << lr
       << " batch_speech:" << n_speech << " batch_text:" << n_text
       << " batch_paired:" << n_paired;
    if (mm_eval >= 0.0) os << " mm_mse_eval:" << mm_eval;
    (*metrics_) << os.str() << "\n";
    metrics_->flush();
  }

  RunConfig cfg_;
  Model<T> model_;
  Adam<T> opt_;
  EmaShadow<T> ema_;
  const LoadedCorpus* corpus_;
  std::ostream* metrics_;
  StreamCursor speech_, text_, paired_;
  i64 step_ = 0;
  i64 warmup_ = 1;
  i64 text_infeasible_ = 0;
  i64 speech_skipped_ = 0;
  std::vector<std::pair<i64, double>> eval_history_;
};

}  // namespace maestro
