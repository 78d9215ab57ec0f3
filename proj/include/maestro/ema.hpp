#pragma once

#include <map>
#include <string>

#include "maestro/model.hpp"

// Exponential-moving-average shadow of every trainable parameter. The
// shadow is read as the teacher for alignment, duration prediction, and
// text resampling; it is never bound with gradients enabled.

namespace maestro {

template <typename T>
class EmaShadow {
 public:
  double decay;
  std::map<std::string, Array<T>> shadow;

  EmaShadow(double decay_rate, const Parameters<T>& params) : decay(decay_rate) {
    require(decay_rate > 0.0 && decay_rate < 1.0, "EmaShadow: decay must be in (0, 1)");
    for (const auto& [name, arr] : params.values) shadow.emplace(name, arr);
  }

  // shadow <- decay*shadow + (1-decay)*param, after each optimizer step.
  void update(const Parameters<T>& params) {
    require(params.values.size() == shadow.size(), "EmaShadow: parameter set changed");
    auto sit = shadow.begin();
    for (const auto& [name, arr] : params.values) {
      require(sit->first == name && sit->second.shape == arr.shape,
              "EmaShadow: shape drift for " + name);
      for (size_t i = 0; i < arr.data.size(); ++i)
        sit->second.data[i] = static_cast<T>(decay * static_cast<double>(sit->second.data[i]) +
                                             (1.0 - decay) * static_cast<double>(arr.data[i]));
      ++sit;
    }
  }
};

// Teacher view: the student's configuration and buffers with EMA values.
template <typename T>
Model<T> teacher_model(const Model<T>& student, const EmaShadow<T>& ema) {
  Model<T> t = student;
  for (auto& [name, arr] : t.params.values) arr = ema.shadow.at(name);
  return t;
}

}  // namespace maestro
