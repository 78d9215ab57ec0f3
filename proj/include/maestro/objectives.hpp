#pragma once

#include <cmath>
#include <vector>

#include "maestro/masking.hpp"
#include "maestro/model.hpp"
#include "maestro/resample.hpp"
#include "maestro/transducer.hpp"

// Training objectives. Paired items contribute a modality-matching pair
// (prefix MSE between the speech encoding and the refined resampled text
// encoding, plus transducer loss on the speech path), a duration
// regression in log domain, and an aligned-MLM transducer loss on the
// masked text path. Speech-only items contribute a contrastive loss on
// encoder outputs at masked positions and a codebook cross-entropy on
// shared-encoder outputs. Targets that must not carry gradient (codebook
// ids, contrastive targets, teacher durations) are prepared as plain
// arrays before graph construction.

namespace maestro {

struct LossWeights {
  double mm_mse = 1.0;
  double rnnt_paired = 1.0;
  double a_mlm = 1.0;
  double contrastive = 1.0;
  double speech_mlm = 1.0;
  double duration = 1.0;
};

// Scalar snapshot of one step's components, for logging.
struct LossBundle {
  double mm_mse = 0, rnnt_paired = 0, a_mlm = 0, contrastive = 0, speech_mlm = 0, duration = 0;
  double total(const LossWeights& w) const {
    return w.mm_mse * mm_mse + w.rnnt_paired * rnnt_paired + w.a_mlm * a_mlm +
           w.contrastive * contrastive + w.speech_mlm * speech_mlm + w.duration * duration;
  }
};

// ---- teacher-side predictions (plain values, no tape) ----

// Durations from the teacher's best alignment of its own lattice.
template <typename T>
std::vector<i64> teacher_align_durations(const Model<T>& teacher, const Array<T>& frames,
                                         const std::vector<i64>& tokens) {
  Tape<T> tape;
  NoGradGuard<T> ng(tape);
  Bound<T> b = teacher.bind(tape, false);
  Var<T> enc = teacher.shared_encode(b, teacher.speech_encode(b, tape.constant(frames)));
  Var<T> pred = teacher.decoder_states(b, tokens);
  Var<T> lat = teacher.joint_lattice(b, enc, pred);
  i64 t_len = frames.rows();
  std::vector<i64> emit = forced_align(lat.value(), tokens, t_len);
  return durations_from_alignment(emit, t_len);
}

// Rounded positive frame counts from the teacher's duration head.
template <typename T>
std::vector<i64> teacher_text_durations(const Model<T>& teacher, const std::vector<i64>& tokens) {
  Tape<T> tape;
  NoGradGuard<T> ng(tape);
  Bound<T> b = teacher.bind(tape, false);
  std::vector<T> raw = teacher.predict_durations(b, teacher.text_embed(b, tokens));
  return round_durations(raw);
}

// ---- loss components ----

template <typename T>
Var<T> square_error_mean(Var<T> a, Var<T> b) {
  Var<T> d = sub(a, b);
  return reduce_mean(mul(d, d));
}

// Modality-matching MSE over the aligned prefix: first L rows of the
// speech encoding vs the refined resampled text encoding of length L.
template <typename T>
Var<T> loss_mm_mse(Var<T> e_s, Var<T> e_hat_t) {
  i64 t_len = e_s.value().rows();
  i64 l_len = e_hat_t.value().rows();
  require(l_len <= t_len, "loss_mm_mse: resampled length " + std::to_string(l_len) +
                              " exceeds frame count " + std::to_string(t_len));
  require(e_s.value().shape[1] == e_hat_t.value().shape[1],
          "loss_mm_mse: width mismatch " + e_s.value().shape_str() + " vs " +
              e_hat_t.value().shape_str());
  return square_error_mean(slice_rows(e_s, 0, l_len), e_hat_t);
}

// Log-domain duration regression against integer targets.
template <typename T>
Var<T> loss_duration(Var<T> d_log, const std::vector<i64>& targets) {
  require(d_log.value().rank() == 2 && d_log.value().shape[1] == 1 &&
              d_log.value().rows() == static_cast<i64>(targets.size()),
          "loss_duration: expected [" + std::to_string(targets.size()) + "x1], got " +
              d_log.value().shape_str());
  Array<T> tgt({static_cast<i64>(targets.size()), 1});
  for (size_t u = 0; u < targets.size(); ++u) {
    require(targets[u] >= 1, "loss_duration: target duration must be >= 1");
    tgt.data[u] = static_cast<T>(std::log(static_cast<double>(targets[u])));
  }
  return square_error_mean(d_log, d_log.tape->constant(tgt));
}

// InfoNCE over cosine similarities at temperature tau. Row i of anchors is
// matched against row i of targets; negatives are other target rows, all of
// them when there are at most n_negatives, otherwise a seeded sample.
template <typename T>
Var<T> info_nce(Var<T> anchors, Var<T> targets, T temperature, i64 n_negatives,
                CounterRng& rng) {
  i64 m = anchors.value().rows();
  require(m >= 2, "info_nce: need at least 2 rows, got " + std::to_string(m));
  require(targets.value().shape == anchors.value().shape,
          "info_nce: shape mismatch " + anchors.value().shape_str() + " vs " +
              targets.value().shape_str());
  require(temperature > T(0), "info_nce: temperature must be positive");
  Var<T> sims = scale(matmul(row_l2_normalize(anchors), transpose(row_l2_normalize(targets))),
                      T(1) / temperature);
  i64 k = std::min<i64>(n_negatives, m - 1);
  std::vector<Var<T>> rows;
  for (i64 i = 0; i < m; ++i) {
    Var<T> row = slice_rows(sims, i, i + 1);
    std::vector<i64> others;
    others.reserve(static_cast<size_t>(m - 1));
    for (i64 j = 0; j < m; ++j)
      if (j != i) others.push_back(j);
    for (i64 t = 0; t < k; ++t) {
      i64 pick = t + rng.next_int(0, static_cast<i64>(others.size()) - 1 - t);
      std::swap(others[static_cast<size_t>(t)], others[static_cast<size_t>(pick)]);
    }
    std::vector<Var<T>> cells;
    cells.push_back(slice_cols(row, i, i + 1));  // positive first
    for (i64 t = 0; t < k; ++t)
      cells.push_back(slice_cols(row, others[static_cast<size_t>(t)],
                                 others[static_cast<size_t>(t)] + 1));
    rows.push_back(concat_cols(cells));
  }
  Var<T> lsm = log_softmax(concat_rows(rows));
  Array<T> pick_pos({m, k + 1});
  for (i64 i = 0; i < m; ++i) pick_pos.at(i, 0) = T(1);
  return scale(reduce_sum(mul_const(lsm, pick_pos)), T(-1) / static_cast<T>(m));
}

// Mean cross-entropy of rows of logits against integer class ids.
template <typename T>
Var<T> codebook_cross_entropy(Var<T> logits, const std::vector<i64>& ids) {
  i64 m = logits.value().rows();
  i64 c = logits.value().shape[1];
  require(m == static_cast<i64>(ids.size()),
          "codebook_cross_entropy: " + std::to_string(ids.size()) + " ids for " +
              std::to_string(m) + " rows");
  Array<T> onehot({m, c});
  for (i64 i = 0; i < m; ++i) {
    require(ids[static_cast<size_t>(i)] >= 0 && ids[static_cast<size_t>(i)] < c,
            "codebook_cross_entropy: id out of range");
    onehot.at(i, ids[static_cast<size_t>(i)]) = T(1);
  }
  return scale(reduce_sum(mul_const(log_softmax(logits), onehot)),
               T(-1) / static_cast<T>(m));
}

// ---- composite objectives ----

template <typename T>
struct PairedLosses {
  Var<T> mm_mse;
  Var<T> rnnt_paired;
  Var<T> duration;
};

// Modality matching on one paired item. Durations come from the teacher
// (no gradient); everything else is on the student tape.
template <typename T>
PairedLosses<T> loss_mm(const Model<T>& m, const Bound<T>& b, const Array<T>& frames,
                        const std::vector<i64>& tokens, const std::vector<i64>& durations) {
  i64 t_len = frames.rows();
  Var<T> e_s = m.speech_encode(b, b.tape->constant(frames));
  Var<T> enc = m.shared_encode(b, e_s);
  Var<T> pred = m.decoder_states(b, tokens);
  Var<T> lat = m.joint_lattice(b, enc, pred);
  PairedLosses<T> out;
  out.rnnt_paired = rnnt_loss_op(lat, tokens, t_len);
  Var<T> e_t = m.text_embed(b, tokens);
  Var<T> e_hat = m.refine(b, resample(e_t, durations, b.buffer("pos.sin")));
  out.mm_mse = loss_mm_mse(e_s, e_hat);
  out.duration = loss_duration(m.duration_log(b, e_t), durations);
  return out;
}

// Aligned MLM: transducer loss on the masked refined resampled text path.
// The caller supplies durations (teacher alignment for paired items,
// rounded teacher predictions for text-only items).
template <typename T>
Var<T> loss_a_mlm(const Model<T>& m, const Bound<T>& b, const std::vector<i64>& tokens,
                  const std::vector<i64>& durations, const MaskSpec& spec, CounterRng& rng) {
  Var<T> e_t = m.text_embed(b, tokens);
  Var<T> e_hat = m.refine(b, resample(e_t, durations, b.buffer("pos.sin")));
  i64 l_len = e_hat.value().rows();
  MaskPlan plan = plan_mask(l_len, e_hat.value().shape[1], spec, rng);
  Var<T> enc = m.shared_encode(b, apply_mask(e_hat, plan, spec));
  Var<T> pred = m.decoder_states(b, tokens);
  return rnnt_loss_op(m.joint_lattice(b, enc, pred), tokens, l_len);
}

// Frozen targets for one speech-only item: the pre-mask latent rows at the
// masked positions and their codebook ids. Plain arrays so the losses
// treat them as constants.
template <typename T>
struct SpeechTargets {
  Array<T> latent_rows;      // [n_masked, d_model]
  std::vector<i64> code_ids;  // codebook id per masked position
};

template <typename T>
SpeechTargets<T> prepare_speech_targets(const Model<T>& m, const Array<T>& frames,
                                        const MaskPlan& plan) {
  SpeechTargets<T> out;
  if (plan.masked_time_positions.empty()) return out;  // item will be skipped
  const Array<T>& w = m.params.at("input_proj.w");
  const Array<T>& bias = m.params.at("input_proj.b");
  i64 t_len = frames.rows();
  Array<T> latents({t_len, m.cfg.d_model});
  matmul_acc(frames.data.data(), w.data.data(), latents.data.data(), t_len, m.cfg.frame_dim,
             m.cfg.d_model);
  for (i64 r = 0; r < t_len; ++r)
    for (i64 j = 0; j < m.cfg.d_model; ++j) latents.at(r, j) += bias.data[static_cast<size_t>(j)];
  const std::vector<i64>& pos = plan.masked_time_positions;
  out.latent_rows = Array<T>({static_cast<i64>(pos.size()), m.cfg.d_model});
  for (size_t i = 0; i < pos.size(); ++i)
    for (i64 j = 0; j < m.cfg.d_model; ++j)
      out.latent_rows.at(static_cast<i64>(i), j) = latents.at(pos[i], j);
  out.code_ids = m.quantize_latents(out.latent_rows);
  return out;
}

template <typename T>
struct SpeechOnlyLosses {
  bool skipped = false;  // fewer than 2 masked positions
  i64 n_masked = 0;
  Var<T> contrastive;
  Var<T> speech_mlm;
};

// Contrastive and codebook losses on one speech-only item. The mask plan
// and frozen targets are prepared by the caller so the same plan can be
// replayed (finite-difference checks, deterministic resume).
template <typename T>
SpeechOnlyLosses<T> loss_speech_only(const Model<T>& m, const Bound<T>& b,
                                     const Array<T>& frames, const MaskSpec& spec,
                                     const MaskPlan& plan, const SpeechTargets<T>& targets,
                                     T temperature, i64 n_negatives, CounterRng& neg_rng) {
  SpeechOnlyLosses<T> out;
  out.n_masked = static_cast<i64>(plan.masked_time_positions.size());
  if (out.n_masked < 2) {
    out.skipped = true;
    return out;
  }
  Var<T> latents = m.input_latents(b, b.tape->constant(frames));
  Var<T> masked = apply_mask(latents, plan, spec);
  Var<T> enc_s = m.speech_encode_latents(b, masked);
  Var<T> enc_shared = m.shared_encode(b, enc_s);
  const std::vector<i64>& pos = plan.masked_time_positions;
  Var<T> anchors = m.contrast_project(b, gather(enc_s, pos));
  out.contrastive = info_nce(anchors, b.tape->constant(targets.latent_rows), temperature,
                             n_negatives, neg_rng);
  out.speech_mlm =
      codebook_cross_entropy(m.mlm_logits(b, gather(enc_shared, pos)), targets.code_ids);
  return out;
}

}  // namespace maestro
