#pragma once

#include <cmath>
#include <map>
#include <string>

#include "maestro/model.hpp"

// Adaptive-moment optimizer with global-norm clipping. The learning rate
// follows a linear warmup then inverse-square-root decay and is supplied
// per step by the caller, so the schedule lives in one place.

namespace maestro {

struct OptimizerConfig {
  double lr_peak = 2e-3;
  i64 warmup_steps = 0;  // 0: trainer derives 10% of total steps
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double weight_decay = 0.0;
  double clip_norm = 1.0;
};

// lr for 1-based step: peak*step/warmup while warming up, then
// peak*sqrt(warmup/step). Continuous at step == warmup.
inline double lr_schedule(double peak, i64 warmup, i64 step) {
  require(step >= 1 && warmup >= 1, "lr_schedule: step and warmup must be >= 1");
  if (step <= warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
  return peak * std::sqrt(static_cast<double>(warmup) / static_cast<double>(step));
}

template <typename T>
double global_grad_norm(const std::map<std::string, Array<T>>& grads) {
  double sq = 0;
  for (const auto& [name, g] : grads)
    for (T v : g.data) sq += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(sq);
}

template <typename T>
class Adam {
 public:
  OptimizerConfig cfg;
  std::map<std::string, Array<T>> m, v;
  i64 applied_steps = 0;
  i64 skipped_steps = 0;
  double last_grad_norm = 0.0;   // pre-clip
  double last_clip_scale = 1.0;  // 1 when clipping did not trigger

  Adam(OptimizerConfig config, const Parameters<T>& params) : cfg(config) {
    for (const auto& [name, arr] : params.values) {
      m.emplace(name, zeros_like(arr));
      v.emplace(name, zeros_like(arr));
    }
  }

  // Clips to cfg.clip_norm, then applies one update at learning rate lr.
  // Returns false (and changes nothing) if any gradient is non-finite.
  bool apply(Parameters<T>& params, const std::map<std::string, Array<T>>& grads, double lr) {
    for (const auto& [name, g] : grads) {
      require(params.values.count(name) == 1, "Adam: gradient for unknown parameter " + name);
      for (T val : g.data)
        if (!std::isfinite(static_cast<double>(val))) {
          ++skipped_steps;
          return false;
        }
    }
    double norm = global_grad_norm(grads);
    double scale = (cfg.clip_norm > 0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;
    last_grad_norm = norm;
    last_clip_scale = scale;
    ++applied_steps;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(applied_steps));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(applied_steps));
    for (auto& [name, p] : params.values) {
      auto git = grads.find(name);
      if (git == grads.end()) continue;  // unused parameter this step
      Array<T>& mm = m.at(name);
      Array<T>& vv = v.at(name);
      require(git->second.shape == p.shape, "Adam: gradient shape mismatch for " + name);
      for (size_t i = 0; i < p.data.size(); ++i) {
        double g = static_cast<double>(git->second.data[i]) * scale;
        double mi = cfg.beta1 * static_cast<double>(mm.data[i]) + (1.0 - cfg.beta1) * g;
        double vi = cfg.beta2 * static_cast<double>(vv.data[i]) + (1.0 - cfg.beta2) * g * g;
        mm.data[i] = static_cast<T>(mi);
        vv.data[i] = static_cast<T>(vi);
        double update = (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
        double decayed = static_cast<double>(p.data[i]) * (1.0 - lr * cfg.weight_decay);
        p.data[i] = static_cast<T>(decayed - lr * update);
      }
    }
    return true;
  }
};

}  // namespace maestro
