#pragma once

#include <cmath>
#include <vector>

#include "maestro/ops.hpp"

// Duration-driven length conversion between token space and frame space.
// Token u with duration d_u owns d_u consecutive output frames; each copy
// carries a within-token positional embedding for its offset inside the
// span, so the frame sequence keeps sub-token ordering information.

namespace maestro {

inline std::vector<i64> repeat_ids(const std::vector<i64>& durations) {
  std::vector<i64> ids;
  for (size_t u = 0; u < durations.size(); ++u) {
    require(durations[u] >= 1,
            "repeat_ids: duration must be >= 1, got " + std::to_string(durations[u]) +
                " at token " + std::to_string(u));
    for (i64 r = 0; r < durations[u]; ++r) ids.push_back(static_cast<i64>(u));
  }
  return ids;
}

inline std::vector<i64> offset_ids(const std::vector<i64>& durations) {
  std::vector<i64> ids;
  for (i64 d : durations)
    for (i64 r = 0; r < d; ++r) ids.push_back(r);
  return ids;
}

// [U, d] token sequence -> [sum(durations), d] frame sequence. Row for
// offset r of token u is e_t[u] + pos[r]; pos is a fixed table with at
// least max(durations) rows.
template <typename T>
Var<T> resample(Var<T> tokens, const std::vector<i64>& durations, Var<T> pos) {
  require(tokens.value().rank() == 2 &&
              tokens.value().shape[0] == static_cast<i64>(durations.size()),
          "resample: " + std::to_string(durations.size()) + " durations for " +
              tokens.value().shape_str());
  require(pos.value().rank() == 2 && pos.value().shape[1] == tokens.value().shape[1],
          "resample: positional table " + pos.value().shape_str() + " does not match " +
              tokens.value().shape_str());
  i64 max_d = 0;
  for (i64 d : durations) max_d = std::max(max_d, d);
  require(max_d <= pos.value().shape[0],
          "resample: duration " + std::to_string(max_d) + " exceeds positional table rows " +
              std::to_string(pos.value().shape[0]));
  return add(gather(tokens, repeat_ids(durations)), gather(pos, offset_ids(durations)));
}

// Real-valued duration predictions -> integer frame counts: round half up,
// then lift to at least one frame.
template <typename T>
std::vector<i64> round_durations(const std::vector<T>& raw) {
  std::vector<i64> out(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    require(raw[i] > T(0), "round_durations: non-positive duration " +
                               std::to_string(static_cast<double>(raw[i])) + " at token " +
                               std::to_string(i));
    i64 r = static_cast<i64>(std::floor(static_cast<double>(raw[i]) + 0.5));
    out[i] = r < 1 ? 1 : r;
  }
  return out;
}

}  // namespace maestro
