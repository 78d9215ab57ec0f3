#pragma once

#include <vector>

#include "maestro/ops.hpp"
#include "maestro/rng.hpp"

// Span masking over a [T, d] sequence: a few random time spans zero whole
// frames, a few feature spans zero whole channels. Per axis, at most half
// the positions may be masked; spans that would cross the cap are clipped
// position by position.

namespace maestro {

struct MaskSpec {
  i64 n_time_masks = 2;
  i64 max_time_width = 6;
  i64 n_feature_masks = 1;
  i64 max_feature_width = 4;
  double mask_value = 0.0;
};

struct MaskPlan {
  std::vector<u8> time_masked;     // size T
  std::vector<u8> feature_masked;  // size d
  std::vector<i64> masked_time_positions;
};

inline void mask_axis(std::vector<u8>& masked, i64 n_masks, i64 max_width, CounterRng& rng) {
  i64 n = static_cast<i64>(masked.size());
  i64 cap = n / 2;
  i64 total = 0;
  for (u8 m : masked) total += m;
  for (i64 i = 0; i < n_masks; ++i) {
    i64 w = rng.next_int(0, max_width);
    if (w > n) w = n;
    i64 start = rng.next_int(0, n - w);
    for (i64 p = start; p < start + w; ++p) {
      if (masked[static_cast<size_t>(p)]) continue;
      if (total >= cap) break;
      masked[static_cast<size_t>(p)] = 1;
      ++total;
    }
  }
}

inline MaskPlan plan_mask(i64 t_len, i64 d, const MaskSpec& spec, CounterRng& rng) {
  MaskPlan plan;
  plan.time_masked.assign(static_cast<size_t>(t_len), 0);
  plan.feature_masked.assign(static_cast<size_t>(d), 0);
  mask_axis(plan.time_masked, spec.n_time_masks, spec.max_time_width, rng);
  mask_axis(plan.feature_masked, spec.n_feature_masks, spec.max_feature_width, rng);
  for (i64 t = 0; t < t_len; ++t)
    if (plan.time_masked[static_cast<size_t>(t)]) plan.masked_time_positions.push_back(t);
  return plan;
}

// 1 where the cell is kept, 0 where either axis masks it.
template <typename T>
Array<T> keep_matrix(const MaskPlan& plan) {
  i64 t_len = static_cast<i64>(plan.time_masked.size());
  i64 d = static_cast<i64>(plan.feature_masked.size());
  Array<T> keep({t_len, d});
  for (i64 t = 0; t < t_len; ++t)
    for (i64 j = 0; j < d; ++j)
      keep.at(t, j) =
          (plan.time_masked[static_cast<size_t>(t)] || plan.feature_masked[static_cast<size_t>(j)])
              ? T(0)
              : T(1);
  return keep;
}

// Differentiable application: masked cells become mask_value, kept cells
// pass through.
template <typename T>
Var<T> apply_mask(Var<T> x, const MaskPlan& plan, const MaskSpec& spec) {
  require(x.value().rank() == 2 &&
              x.value().shape[0] == static_cast<i64>(plan.time_masked.size()) &&
              x.value().shape[1] == static_cast<i64>(plan.feature_masked.size()),
          "apply_mask: plan does not match " + x.value().shape_str());
  Array<T> keep = keep_matrix<T>(plan);
  Var<T> kept = mul_const(x, keep);
  if (spec.mask_value == 0.0) return kept;
  Array<T> fill = zeros_like(keep);
  for (size_t i = 0; i < fill.data.size(); ++i)
    fill.data[i] = (T(1) - keep.data[i]) * static_cast<T>(spec.mask_value);
  return add_const(kept, fill);
}

}  // namespace maestro
