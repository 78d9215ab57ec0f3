#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "maestro/corpus.hpp"
#include "maestro/objectives.hpp"

// Held-out evaluation: token error rate on the speech path, token error
// rate on the cross-modal text path (text rendered into the frame domain
// with teacher-predicted durations, then decoded), duration MAE, and the
// modality gap (MSE between speech and refined text encodings under gold
// durations). Read-only and deterministic.

namespace maestro {

inline i64 levenshtein(const std::vector<i64>& a, const std::vector<i64>& b) {
  size_t n = a.size(), m = b.size();
  std::vector<i64> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<i64>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<i64>(i);
    for (size_t j = 1; j <= m; ++j) {
      i64 sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

inline double ter(const std::vector<i64>& hyp, const std::vector<i64>& ref) {
  require(!ref.empty(), "ter: empty reference");
  return static_cast<double>(levenshtein(hyp, ref)) / static_cast<double>(ref.size());
}

template <typename T>
Array<T> frames_to(const Array<float>& frames) {
  Array<T> out(frames.shape);
  for (size_t i = 0; i < frames.data.size(); ++i) out.data[i] = static_cast<T>(frames.data[i]);
  return out;
}

// Greedy transducer decode over a finished encoding, on plain arrays: the
// prediction network is advanced incrementally and its states cached per
// prefix length.
template <typename T>
GreedyResult decode_from_encoding(const Model<T>& m, const Array<T>& enc,
                                  i64 max_symbols_per_frame = 4) {
  const ModelConfig& cfg = m.cfg;
  i64 t_len = enc.rows();
  const Array<T>& jew = m.params.at("joint.enc.w");
  const Array<T>& jeb = m.params.at("joint.enc.b");
  Array<T> ep({t_len, cfg.joint_dim});
  matmul_acc(enc.data.data(), jew.data.data(), ep.data.data(), t_len, cfg.d_model, cfg.joint_dim);
  for (i64 t = 0; t < t_len; ++t)
    for (i64 j = 0; j < cfg.joint_dim; ++j) ep.at(t, j) += jeb.data[static_cast<size_t>(j)];

  const Array<T>& emb = m.params.at("dec.emb");
  const Array<T>& wx = m.params.at("dec.x.w");
  const Array<T>& bx = m.params.at("dec.x.b");
  const Array<T>& wh = m.params.at("dec.h.w");
  const Array<T>& jpw = m.params.at("joint.pred.w");
  const Array<T>& jpb = m.params.at("joint.pred.b");
  const Array<T>& jow = m.params.at("joint.out.w");
  const Array<T>& job = m.params.at("joint.out.b");
  i64 dh = cfg.decoder_hidden;

  std::vector<std::vector<T>> h_cache;   // recurrent state per prefix length
  std::vector<std::vector<T>> pp_cache;  // projected state per prefix length
  auto advance = [&](i64 token) {
    std::vector<T> h(static_cast<size_t>(dh));
    const std::vector<T>* prev = h_cache.empty() ? nullptr : &h_cache.back();
    for (i64 j = 0; j < dh; ++j) {
      double acc = static_cast<double>(bx.data[static_cast<size_t>(j)]);
      for (i64 k = 0; k < dh; ++k) {
        acc += static_cast<double>(emb.at(token, k)) * static_cast<double>(wx.at(k, j));
        if (prev) acc += static_cast<double>((*prev)[static_cast<size_t>(k)]) *
                         static_cast<double>(wh.at(k, j));
      }
      h[static_cast<size_t>(j)] = static_cast<T>(std::tanh(acc));
    }
    std::vector<T> pp(static_cast<size_t>(cfg.joint_dim));
    for (i64 j = 0; j < cfg.joint_dim; ++j) {
      double acc = static_cast<double>(jpb.data[static_cast<size_t>(j)]);
      for (i64 k = 0; k < dh; ++k)
        acc += static_cast<double>(h[static_cast<size_t>(k)]) * static_cast<double>(jpw.at(k, j));
      pp[static_cast<size_t>(j)] = static_cast<T>(acc);
    }
    h_cache.push_back(std::move(h));
    pp_cache.push_back(std::move(pp));
  };
  advance(0);  // start symbol

  auto row_fn = [&](i64 t, const std::vector<i64>& prefix) {
    while (h_cache.size() < prefix.size() + 1)
      advance(prefix[h_cache.size() - 1]);
    const std::vector<T>& pp = pp_cache[prefix.size()];
    std::vector<T> logits(static_cast<size_t>(cfg.vocab_size + 1));
    for (i64 c = 0; c < cfg.vocab_size + 1; ++c) {
      double acc = static_cast<double>(job.data[static_cast<size_t>(c)]);
      for (i64 j = 0; j < cfg.joint_dim; ++j) {
        double z = std::tanh(static_cast<double>(ep.at(t, j)) +
                             static_cast<double>(pp[static_cast<size_t>(j)]));
        acc += z * static_cast<double>(jow.at(j, c));
      }
      logits[static_cast<size_t>(c)] = static_cast<T>(acc);
    }
    return logits;
  };
  return greedy_decode<T>(t_len, row_fn, max_symbols_per_frame);
}

// Speech-path encoding and decode for one item.
template <typename T>
std::vector<i64> decode_speech(const Model<T>& m, const Array<T>& frames) {
  Tape<T> tape;
  NoGradGuard<T> ng(tape);
  Bound<T> b = m.bind(tape, false);
  Var<T> enc = m.shared_encode(b, m.speech_encode(b, tape.constant(frames)));
  return decode_from_encoding(m, enc.value()).tokens;
}

// Text-path encoding (resampled with the given durations) and decode.
template <typename T>
std::vector<i64> decode_text_path(const Model<T>& m, const std::vector<i64>& tokens,
                                  const std::vector<i64>& durations) {
  Tape<T> tape;
  NoGradGuard<T> ng(tape);
  Bound<T> b = m.bind(tape, false);
  Var<T> e_hat =
      m.refine(b, resample(m.text_embed(b, tokens), durations, b.buffer("pos.sin")));
  Var<T> enc = m.shared_encode(b, e_hat);
  return decode_from_encoding(m, enc.value()).tokens;
}

// Modality gap on one paired item under gold durations.
template <typename T>
double item_mm_mse(const Model<T>& m, const CorpusItem& item) {
  Tape<T> tape;
  NoGradGuard<T> ng(tape);
  Bound<T> b = m.bind(tape, false);
  Var<T> e_s = m.speech_encode(b, tape.constant(frames_to<T>(item.frames)));
  Var<T> e_hat =
      m.refine(b, resample(m.text_embed(b, item.tokens), item.durations, b.buffer("pos.sin")));
  return static_cast<double>(loss_mm_mse(e_s, e_hat).value().data[0]);
}

// Mean modality gap over the first n_items of a paired stream.
template <typename T>
double eval_mm_mse(const Model<T>& m, const std::vector<CorpusItem>& paired, i64 n_items) {
  require(!paired.empty(), "eval_mm_mse: empty paired stream");
  i64 n = std::min<i64>(n_items, static_cast<i64>(paired.size()));
  double sum = 0;
  for (i64 i = 0; i < n; ++i) sum += item_mm_mse(m, paired[static_cast<size_t>(i)]);
  return sum / static_cast<double>(n);
}

struct EvalReport {
  double ter_speech = 0;
  double ter_crossmodal = 0;
  double duration_mae = 0;
  double mm_mse_eval = 0;
  i64 n_items = 0;
  i64 n_text_items = 0;
  i64 n_crossmodal_excluded = 0;

  std::string summary() const {
    std::ostringstream os;
    os << std::setprecision(std::numeric_limits<double>::max_digits10);
    os << "ter_speech: " << ter_speech << "\n"
       << "ter_crossmodal: " << ter_crossmodal << "\n"
       << "duration_mae: " << duration_mae << "\n"
       << "mm_mse_eval: " << mm_mse_eval << "\n"
       << "n_items: " << n_items << "\n"
       << "n_text_items: " << n_text_items << "\n"
       << "n_crossmodal_excluded: " << n_crossmodal_excluded << "\n";
    return os.str();
  }
};

// Full held-out evaluation. Token error rates are corpus-level (total
// edits over total reference length). Speech-path TER, duration error and
// the modality gap come from paired items; cross-modal TER reconstructs
// text-only items through the text path and scores against the input
// tokens. The teacher supplies cross-modal durations; items whose
// predicted durations do not fit the positional table are excluded and
// counted.
template <typename T>
EvalReport evaluate(const Model<T>& student, const Model<T>& teacher,
                    const std::vector<CorpusItem>& eval_paired,
                    const std::vector<CorpusItem>& eval_text, i64 max_items = -1) {
  require(!eval_paired.empty(), "evaluate: empty paired eval stream");
  require(!eval_text.empty(), "evaluate: empty text eval stream");
  EvalReport rep;
  i64 n = (max_items < 0) ? static_cast<i64>(eval_paired.size())
                          : std::min<i64>(max_items, static_cast<i64>(eval_paired.size()));
  i64 n_text = (max_items < 0) ? static_cast<i64>(eval_text.size())
                               : std::min<i64>(max_items, static_cast<i64>(eval_text.size()));
  i64 edits_speech = 0, len_speech = 0;
  i64 edits_cross = 0, len_cross = 0;
  double abs_dur_err = 0;
  i64 n_dur = 0;
  double mm_sum = 0;
  for (i64 i = 0; i < n; ++i) {
    const CorpusItem& item = eval_paired[static_cast<size_t>(i)];
    require(!item.tokens.empty() && item.frames.numel() > 0 && !item.durations.empty(),
            "evaluate: item " + std::to_string(i) + " is not a paired item");
    Array<T> frames = frames_to<T>(item.frames);
    std::vector<i64> hyp = decode_speech(student, frames);
    edits_speech += levenshtein(hyp, item.tokens);
    len_speech += static_cast<i64>(item.tokens.size());

    // duration regression error, unrounded teacher predictions vs gold
    {
      Tape<T> tape;
      NoGradGuard<T> ng(tape);
      Bound<T> tb = teacher.bind(tape, false);
      std::vector<T> pred = teacher.predict_durations(tb, teacher.text_embed(tb, item.tokens));
      for (size_t u = 0; u < item.durations.size(); ++u) {
        abs_dur_err += std::abs(static_cast<double>(pred[u]) -
                                static_cast<double>(item.durations[u]));
        ++n_dur;
      }
    }

    mm_sum += item_mm_mse(student, item);
  }
  for (i64 i = 0; i < n_text; ++i) {
    const CorpusItem& item = eval_text[static_cast<size_t>(i)];
    require(!item.tokens.empty(), "evaluate: text item " + std::to_string(i) + " has no tokens");
    std::vector<i64> rounded = teacher_text_durations(teacher, item.tokens);
    i64 total = 0;
    for (i64 d : rounded) total += d;
    if (total > student.cfg.max_len) {
      ++rep.n_crossmodal_excluded;
      continue;
    }
    std::vector<i64> hyp_t = decode_text_path(student, item.tokens, rounded);
    edits_cross += levenshtein(hyp_t, item.tokens);
    len_cross += static_cast<i64>(item.tokens.size());
  }
  rep.n_items = n;
  rep.n_text_items = n_text;
  rep.ter_speech = static_cast<double>(edits_speech) / static_cast<double>(len_speech);
  rep.ter_crossmodal =
      (len_cross > 0) ? static_cast<double>(edits_cross) / static_cast<double>(len_cross) : 1.0;
  rep.duration_mae = abs_dur_err / static_cast<double>(n_dur);
  rep.mm_mse_eval = mm_sum / static_cast<double>(n);
  return rep;
}

}  // namespace maestro
