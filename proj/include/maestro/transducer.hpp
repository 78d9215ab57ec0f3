#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "maestro/ops.hpp"

// Transducer lattice routines. The lattice holds already-normalized
// log-probabilities with layout row = t*(U+1)+u, column = symbol id,
// id 0 reserved for blank. A complete path consumes every frame with a
// blank transition and every token with a label transition; labels after
// the final frame advance have no lattice cell and carry zero probability.

namespace maestro {

template <typename T>
inline T neg_inf() {
  return -std::numeric_limits<T>::infinity();
}

template <typename T>
inline void check_lattice(const Array<T>& lat, const std::vector<i64>& tokens, i64 t_len) {
  i64 u_len = static_cast<i64>(tokens.size());
  require(t_len >= 1, "transducer: need at least one frame");
  require(lat.rank() == 2 && lat.shape[0] == t_len * (u_len + 1),
          "transducer: lattice " + lat.shape_str() + " does not match T=" +
              std::to_string(t_len) + " U=" + std::to_string(u_len));
  i64 v_plus_1 = lat.shape[1];
  for (i64 tok : tokens)
    require(tok >= 1 && tok < v_plus_1,
            "transducer: token id " + std::to_string(tok) + " outside [1," +
                std::to_string(v_plus_1) + ")");
}

// ---- brute force reference ----

template <typename T>
struct OracleResult {
  T log_z = neg_inf<T>();
  i64 paths_enumerated = 0;  // all interleavings of T blanks and U labels
  i64 paths_valid = 0;       // interleavings that fit the lattice
};

// Enumerates every interleaving of t_len blank moves and tokens.size()
// label moves. Interleavings that try to emit a label after the final
// frame advance fall off the lattice and score -inf. Exponential; for
// reference checking on tiny shapes only.
template <typename T>
OracleResult<T> oracle_rnnt(const Array<T>& lat, const std::vector<i64>& tokens, i64 t_len) {
  check_lattice(lat, tokens, t_len);
  i64 u_len = static_cast<i64>(tokens.size());
  i64 cols = lat.shape[1];
  OracleResult<T> res;

  // moves: bit 1 = label, bit 0 = blank; iterate all C(T+U, U) placements.
  std::vector<int> moves(static_cast<size_t>(t_len + u_len), 0);
  std::fill(moves.begin(), moves.begin() + u_len, 1);
  std::sort(moves.begin(), moves.end());  // lowest permutation first

  auto score_path = [&](const std::vector<int>& mv) -> T {
    i64 t = 0, u = 0;
    T s = T(0);
    for (int m : mv) {
      if (t >= t_len) return neg_inf<T>();  // fell off the last frame
      i64 row = t * (u_len + 1) + u;
      if (m == 1) {
        s += lat.data[static_cast<size_t>(row * cols + tokens[static_cast<size_t>(u)])];
        ++u;
      } else {
        s += lat.data[static_cast<size_t>(row * cols)];
        ++t;
      }
    }
    return s;
  };

  while (true) {
    T s = score_path(moves);
    ++res.paths_enumerated;
    if (s != neg_inf<T>()) {
      ++res.paths_valid;
      res.log_z = log_add(res.log_z, s);
    }
    if (!std::next_permutation(moves.begin(), moves.end())) break;
  }
  return res;
}

// ---- forward/backward dynamic program ----

template <typename T>
Array<T> rnnt_alpha(const Array<T>& lat, const std::vector<i64>& tokens, i64 t_len) {
  i64 u_len = static_cast<i64>(tokens.size());
  i64 cols = lat.shape[1];
  Array<T> a({t_len, u_len + 1});
  auto lp = [&](i64 t, i64 u, i64 k) -> T {
    return lat.data[static_cast<size_t>((t * (u_len + 1) + u) * cols + k)];
  };
  for (i64 t = 0; t < t_len; ++t)
    for (i64 u = 0; u <= u_len; ++u) {
      if (t == 0 && u == 0) {
        a.at(0, 0) = T(0);
        continue;
      }
      T from_blank = t > 0 ? a.at(t - 1, u) + lp(t - 1, u, 0) : neg_inf<T>();
      T from_label =
          u > 0 ? a.at(t, u - 1) + lp(t, u - 1, tokens[static_cast<size_t>(u - 1)]) : neg_inf<T>();
      a.at(t, u) = log_add(from_blank, from_label);
    }
  return a;
}

template <typename T>
Array<T> rnnt_beta(const Array<T>& lat, const std::vector<i64>& tokens, i64 t_len) {
  i64 u_len = static_cast<i64>(tokens.size());
  i64 cols = lat.shape[1];
  Array<T> b({t_len, u_len + 1});
  auto lp = [&](i64 t, i64 u, i64 k) -> T {
    return lat.data[static_cast<size_t>((t * (u_len + 1) + u) * cols + k)];
  };
  for (i64 t = t_len - 1; t >= 0; --t)
    for (i64 u = u_len; u >= 0; --u) {
      if (t == t_len - 1 && u == u_len) {
        b.at(t, u) = lp(t, u, 0);  // terminal blank leaves the lattice
        continue;
      }
      T via_blank = t + 1 < t_len ? lp(t, u, 0) + b.at(t + 1, u) : neg_inf<T>();
      T via_label =
          u < u_len ? lp(t, u, tokens[static_cast<size_t>(u)]) + b.at(t, u + 1) : neg_inf<T>();
      b.at(t, u) = log_add(via_blank, via_label);
    }
  return b;
}

template <typename T>
T rnnt_log_z(const Array<T>& lat, const std::vector<i64>& tokens, i64 t_len) {
  check_lattice(lat, tokens, t_len);
  i64 u_len = static_cast<i64>(tokens.size());
  i64 cols = lat.shape[1];
  Array<T> a = rnnt_alpha(lat, tokens, t_len);
  return a.at(t_len - 1, u_len) +
         lat.data[static_cast<size_t>(((t_len - 1) * (u_len + 1) + u_len) * cols)];
}

// Negative log-likelihood of the token sequence under the lattice.
template <typename T>
T rnnt_loss(const Array<T>& lat, const std::vector<i64>& tokens, i64 t_len) {
  return -rnnt_log_z(lat, tokens, t_len);
}

// Loss plus d(loss)/d(lattice). grad must be zero-initialized with the
// lattice shape; entries off every path stay zero.
template <typename T>
T rnnt_loss_grad(const Array<T>& lat, const std::vector<i64>& tokens, i64 t_len,
                 Array<T>& grad) {
  check_lattice(lat, tokens, t_len);
  require(grad.same_shape(lat), "rnnt_loss_grad: grad shape " + grad.shape_str());
  i64 u_len = static_cast<i64>(tokens.size());
  i64 cols = lat.shape[1];
  Array<T> a = rnnt_alpha(lat, tokens, t_len);
  Array<T> b = rnnt_beta(lat, tokens, t_len);
  T log_z = b.at(0, 0);
  auto lp = [&](i64 t, i64 u, i64 k) -> T {
    return lat.data[static_cast<size_t>((t * (u_len + 1) + u) * cols + k)];
  };
  auto gref = [&](i64 t, i64 u, i64 k) -> T& {
    return grad.data[static_cast<size_t>((t * (u_len + 1) + u) * cols + k)];
  };
  for (i64 t = 0; t < t_len; ++t)
    for (i64 u = 0; u <= u_len; ++u) {
      // blank edge: internal advance, or the terminal exit at (T-1, U)
      if (t + 1 < t_len)
        gref(t, u, 0) -= std::exp(a.at(t, u) + lp(t, u, 0) + b.at(t + 1, u) - log_z);
      else if (u == u_len)
        gref(t, u, 0) -= std::exp(a.at(t, u) + lp(t, u, 0) - log_z);
      // label edge
      if (u < u_len) {
        i64 k = tokens[static_cast<size_t>(u)];
        gref(t, u, k) -= std::exp(a.at(t, u) + lp(t, u, k) + b.at(t, u + 1) - log_z);
      }
    }
  return -log_z;
}

// Autodiff binding: scalar loss with the analytic lattice gradient.
template <typename T>
Var<T> rnnt_loss_op(Var<T> lattice, std::vector<i64> tokens, i64 t_len) {
  Array<T> grad = zeros_like(lattice.value());
  T loss = rnnt_loss_grad(lattice.value(), tokens, t_len, grad);
  i64 il = lattice.id;
  return lattice.tape->record(
      Array<T>::scalar(loss), {il},
      [il, grad = std::move(grad)](Tape<T>& t, i64 out_id) {
        if (!t.needs_grad(il)) return;
        T g = t.grad(out_id).data[0];
        Array<T>& gl = t.grad(il);
        for (size_t i = 0; i < gl.data.size(); ++i) gl.data[i] += g * grad.data[i];
      });
}

// ---- Viterbi forced alignment ----

// emit_frames[u] = frame index where token u is emitted on the best path.
// Ties prefer the label edge, which together with the forward walk yields
// the earliest-emission alignment among maximizers.
template <typename T>
std::vector<i64> forced_align(const Array<T>& lat, const std::vector<i64>& tokens, i64 t_len) {
  check_lattice(lat, tokens, t_len);
  i64 u_len = static_cast<i64>(tokens.size());
  i64 cols = lat.shape[1];
  auto lp = [&](i64 t, i64 u, i64 k) -> T {
    return lat.data[static_cast<size_t>((t * (u_len + 1) + u) * cols + k)];
  };
  // best score from (t,u) to completion
  Array<T> d({t_len, u_len + 1});
  for (i64 t = t_len - 1; t >= 0; --t)
    for (i64 u = u_len; u >= 0; --u) {
      if (t == t_len - 1 && u == u_len) {
        d.at(t, u) = lp(t, u, 0);
        continue;
      }
      T via_blank = t + 1 < t_len ? lp(t, u, 0) + d.at(t + 1, u) : neg_inf<T>();
      T via_label =
          u < u_len ? lp(t, u, tokens[static_cast<size_t>(u)]) + d.at(t, u + 1) : neg_inf<T>();
      d.at(t, u) = std::max(via_blank, via_label);
    }
  std::vector<i64> emit(static_cast<size_t>(u_len), 0);
  i64 t = 0, u = 0;
  while (!(t == t_len - 1 && u == u_len)) {
    T via_blank = t + 1 < t_len ? lp(t, u, 0) + d.at(t + 1, u) : neg_inf<T>();
    T via_label =
        u < u_len ? lp(t, u, tokens[static_cast<size_t>(u)]) + d.at(t, u + 1) : neg_inf<T>();
    if (via_label >= via_blank) {
      emit[static_cast<size_t>(u)] = t;
      ++u;
    } else {
      ++t;
    }
  }
  return emit;
}

// Map emission frames to per-token durations: token u owns the span from
// the previous emission (exclusive) through its own frame (inclusive).
// Zero-length spans are lifted to one frame and the overshoot is taken
// back from the latest tokens that still have slack.
inline std::vector<i64> durations_from_alignment(const std::vector<i64>& emit_frames,
                                                 i64 t_len) {
  i64 u_len = static_cast<i64>(emit_frames.size());
  require(u_len <= t_len, "durations_from_alignment: " + std::to_string(u_len) +
                              " tokens cannot each hold a frame in " + std::to_string(t_len) +
                              " frames");
  std::vector<i64> dur(static_cast<size_t>(u_len), 0);
  for (i64 u = 0; u < u_len; ++u) {
    i64 prev = u == 0 ? -1 : emit_frames[static_cast<size_t>(u - 1)];
    dur[static_cast<size_t>(u)] = emit_frames[static_cast<size_t>(u)] - prev;
  }
  i64 sum = 0;
  for (i64& v : dur) {
    if (v < 1) v = 1;
    sum += v;
  }
  for (i64 u = u_len - 1; u >= 0 && sum > t_len; --u) {
    i64 give = std::min(dur[static_cast<size_t>(u)] - 1, sum - t_len);
    dur[static_cast<size_t>(u)] -= give;
    sum -= give;
  }
  require(sum <= t_len, "durations_from_alignment: could not fit durations");
  return dur;
}

// ---- greedy decode ----

struct GreedyResult {
  std::vector<i64> tokens;
  i64 forced_advances = 0;  // frames that hit the per-frame symbol cap
};

// row_fn(t, prefix) returns the normalized log-prob row over V+1 symbols
// for frame t after the given emitted prefix. At most max_symbols labels
// are taken per frame before the decoder is forced to the next frame.
template <typename T, typename RowFn>
GreedyResult greedy_decode(i64 t_len, RowFn&& row_fn, i64 max_symbols = 4) {
  GreedyResult res;
  for (i64 t = 0; t < t_len; ++t) {
    i64 emitted_here = 0;
    while (true) {
      std::vector<T> row = row_fn(t, res.tokens);
      i64 best = 0;
      for (i64 k = 1; k < static_cast<i64>(row.size()); ++k)
        if (row[static_cast<size_t>(k)] > row[static_cast<size_t>(best)]) best = k;
      if (best == 0) break;
      res.tokens.push_back(best);
      if (++emitted_here >= max_symbols) {
        ++res.forced_advances;
        break;
      }
    }
  }
  return res;
}

}  // namespace maestro
