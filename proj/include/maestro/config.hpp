#pragma once

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>

#include "maestro/corpus.hpp"
#include "maestro/masking.hpp"
#include "maestro/model.hpp"
#include "maestro/objectives.hpp"
#include "maestro/optimizer.hpp"

// Flat `key = value` configuration with dotted keys. Every key has a
// default; unknown keys are errors. After a file is applied, environment
// variables override: key a.b maps to MAESTRO_a__b. dump() prints every
// key sorted, floats at full precision, so an echoed config reproduces
// the run bitwise.

namespace maestro {

struct CurriculumConfig {
  i64 stage1_steps = 5000;  // speech only
  i64 stage2_delay = 150;   // then speech + paired
  i64 stage3_delay = 3000;  // then speech + paired + text
  i64 total_steps = 8150;
  i64 batch_speech = 8;
  i64 batch_text = 16;
  i64 batch_paired = 8;
  double ema_decay = 0.99;

  i64 stage2_start() const { return stage1_steps; }
  i64 stage3_start() const { return stage1_steps + stage2_delay; }
  void validate() const {
    require(stage1_steps >= 1 && stage2_delay >= 1 && stage3_delay >= 1,
            "curriculum: stage boundaries must be strictly increasing");
    require(total_steps == stage1_steps + stage2_delay + stage3_delay,
            "curriculum: total_steps must equal stage1_steps + stage2_delay + stage3_delay");
    require(ema_decay > 0.0 && ema_decay < 1.0, "curriculum: ema_decay must be in (0, 1)");
    require(batch_speech >= 1 && batch_text >= 1 && batch_paired >= 1,
            "curriculum: batch sizes must be positive");
  }
};

struct RunConfig {
  ModelConfig model;
  CorpusConfig corpus;
  CurriculumConfig curriculum;
  OptimizerConfig optim;
  MaskSpec mask;
  LossWeights weights;
  double temperature = 0.1;
  i64 n_negatives = 7;
  u64 seed = 1;
  i64 checkpoint_every = 2000;
  i64 eval_every = 50;       // mm_mse_eval cadence during training
  i64 eval_items = 32;       // held-out paired items per in-training eval
  i64 stage_override = 0;    // 0 follows the curriculum; 1..3 pins the stream mix
  std::string corpus_dir = "corpus";
  std::string out_dir = "out";
};

class ConfigSchema {
 public:
  explicit ConfigSchema(RunConfig& cfg) : cfg_(cfg) {
    reg_i64("model.frame_dim", cfg.model.frame_dim);
    reg_i64("model.d_model", cfg.model.d_model);
    reg_i64("model.n_speech_layers", cfg.model.n_speech_layers);
    reg_i64("model.n_shared_layers", cfg.model.n_shared_layers);
    reg_i64("model.n_text_conv_layers", cfg.model.n_text_conv_layers);
    reg_i64("model.n_text_transformer_layers", cfg.model.n_text_transformer_layers);
    reg_i64("model.n_refiner_layers", cfg.model.n_refiner_layers);
    reg_i64("model.n_duration_blocks", cfg.model.n_duration_blocks);
    reg_i64("model.n_heads", cfg.model.n_heads);
    reg_i64("model.decoder_hidden", cfg.model.decoder_hidden);
    reg_i64("model.joint_dim", cfg.model.joint_dim);
    reg_i64("model.vocab_size", cfg.model.vocab_size);
    reg_i64("model.d_ff", cfg.model.d_ff);
    reg_i64("model.text_conv_kernel", cfg.model.text_conv_kernel);
    reg_i64("model.refiner_kernel", cfg.model.refiner_kernel);
    reg_i64("model.duration_kernel", cfg.model.duration_kernel);
    reg_i64("model.n_codes", cfg.model.n_codes);
    reg_i64("model.quant_dim", cfg.model.quant_dim);
    reg_i64("model.max_len", cfg.model.max_len);
    reg_i64("model.subsample_factor", cfg.model.subsample_factor);

    reg_u64("corpus.seed", cfg.corpus.seed);
    reg_i64("corpus.vocab", cfg.corpus.vocab);
    reg_i64("corpus.frame_dim", cfg.corpus.frame_dim);
    reg_i64("corpus.min_tokens", cfg.corpus.min_tokens);
    reg_i64("corpus.max_tokens", cfg.corpus.max_tokens);
    reg_i64("corpus.min_duration", cfg.corpus.min_duration);
    reg_i64("corpus.max_duration", cfg.corpus.max_duration);
    reg_f64("corpus.noise_sigma", cfg.corpus.noise_sigma);
    reg_bool("corpus.channel_transform", cfg.corpus.channel_transform);
    reg_i64("corpus.n_speech", cfg.corpus.n_speech);
    reg_i64("corpus.n_text", cfg.corpus.n_text);
    reg_i64("corpus.n_paired", cfg.corpus.n_paired);
    reg_i64("corpus.n_eval_paired", cfg.corpus.n_eval_paired);
    reg_i64("corpus.n_eval_text", cfg.corpus.n_eval_text);

    reg_i64("curriculum.stage1_steps", cfg.curriculum.stage1_steps);
    reg_i64("curriculum.stage2_delay", cfg.curriculum.stage2_delay);
    reg_i64("curriculum.stage3_delay", cfg.curriculum.stage3_delay);
    reg_i64("curriculum.total_steps", cfg.curriculum.total_steps);
    reg_i64("curriculum.batch_speech", cfg.curriculum.batch_speech);
    reg_i64("curriculum.batch_text", cfg.curriculum.batch_text);
    reg_i64("curriculum.batch_paired", cfg.curriculum.batch_paired);
    reg_f64("curriculum.ema_decay", cfg.curriculum.ema_decay);

    reg_f64("optim.lr_peak", cfg.optim.lr_peak);
    reg_i64("optim.warmup_steps", cfg.optim.warmup_steps);
    reg_f64("optim.beta1", cfg.optim.beta1);
    reg_f64("optim.beta2", cfg.optim.beta2);
    reg_f64("optim.eps", cfg.optim.eps);
    reg_f64("optim.weight_decay", cfg.optim.weight_decay);
    reg_f64("optim.clip_norm", cfg.optim.clip_norm);

    reg_i64("mask.n_time_masks", cfg.mask.n_time_masks);
    reg_i64("mask.max_time_width", cfg.mask.max_time_width);
    reg_i64("mask.n_feature_masks", cfg.mask.n_feature_masks);
    reg_i64("mask.max_feature_width", cfg.mask.max_feature_width);
    reg_f64("mask.mask_value", cfg.mask.mask_value);

    reg_f64("loss.w_mm_mse", cfg.weights.mm_mse);
    reg_f64("loss.w_rnnt_paired", cfg.weights.rnnt_paired);
    reg_f64("loss.w_a_mlm", cfg.weights.a_mlm);
    reg_f64("loss.w_contrastive", cfg.weights.contrastive);
    reg_f64("loss.w_speech_mlm", cfg.weights.speech_mlm);
    reg_f64("loss.w_duration", cfg.weights.duration);
    reg_f64("loss.temperature", cfg.temperature);
    reg_i64("loss.n_negatives", cfg.n_negatives);

    reg_u64("train.seed", cfg.seed);
    reg_i64("train.checkpoint_every", cfg.checkpoint_every);
    reg_i64("train.eval_every", cfg.eval_every);
    reg_i64("train.eval_items", cfg.eval_items);
    reg_i64("train.stage_override", cfg.stage_override);
    reg_str("train.corpus_dir", cfg.corpus_dir);
    reg_str("train.out_dir", cfg.out_dir);
  }

  void set(const std::string& key, const std::string& value) {
    auto it = setters_.find(key);
    require(it != setters_.end(), "config: unknown key '" + key + "'");
    it->second(value);
  }

  // Lines of `key = value`; '#' starts a comment; blank lines ignored.
  void load_file(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "config: cannot open " + path);
    std::string line;
    i64 lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      size_t eq = trimmed.find('=');
      require(eq != std::string::npos, "config: " + path + ":" + std::to_string(lineno) +
                                           ": expected 'key = value'");
      std::string key = trim(trimmed.substr(0, eq));
      std::string value = trim(trimmed.substr(eq + 1));
      require(!key.empty(), "config: " + path + ":" + std::to_string(lineno) + ": empty key");
      set(key, value);
    }
  }

  // MAESTRO_<key with '.' replaced by '__'> overrides the current value.
  void apply_env_overrides() {
    for (const auto& [key, setter] : setters_) {
      std::string env = "MAESTRO_";
      for (char c : key) env += (c == '.') ? std::string("__") : std::string(1, c);
      if (const char* v = std::getenv(env.c_str())) setter(v);
    }
  }

  // Every key, sorted, at full precision: echoing this file reproduces the
  // configuration bitwise.
  std::string dump() const {
    std::string out;
    for (const auto& [key, getter] : getters_) out += key + " = " + getter() + "\n";
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  template <typename V>
  static std::string format_value(V v) {
    std::ostringstream os;
    if constexpr (std::is_floating_point_v<V>) {
      os << std::setprecision(std::numeric_limits<V>::max_digits10) << v;
    } else {
      os << v;
    }
    return os.str();
  }

  void reg_i64(const std::string& key, i64& field) {
    setters_[key] = [&field, key](const std::string& v) {
      try {
        size_t used = 0;
        i64 parsed = std::stoll(v, &used);
        require(used == v.size(), "trailing characters");
        field = parsed;
      } catch (const std::exception&) {
        fail("config: key '" + key + "' expects an integer, got '" + v + "'");
      }
    };
    getters_[key] = [&field] { return format_value(field); };
  }

  void reg_u64(const std::string& key, u64& field) {
    setters_[key] = [&field, key](const std::string& v) {
      try {
        size_t used = 0;
        u64 parsed = std::stoull(v, &used);
        require(used == v.size(), "trailing characters");
        field = parsed;
      } catch (const std::exception&) {
        fail("config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
      }
    };
    getters_[key] = [&field] { return format_value(field); };
  }

  void reg_f64(const std::string& key, double& field) {
    setters_[key] = [&field, key](const std::string& v) {
      try {
        size_t used = 0;
        double parsed = std::stod(v, &used);
        require(used == v.size(), "trailing characters");
        field = parsed;
      } catch (const std::exception&) {
        fail("config: key '" + key + "' expects a number, got '" + v + "'");
      }
    };
    getters_[key] = [&field] { return format_value(field); };
  }

  void reg_bool(const std::string& key, bool& field) {
    setters_[key] = [&field, key](const std::string& v) {
      if (v == "true" || v == "1") {
        field = true;
      } else if (v == "false" || v == "0") {
        field = false;
      } else {
        fail("config: key '" + key + "' expects true/false, got '" + v + "'");
      }
    };
    getters_[key] = [&field] { return std::string(field ? "true" : "false"); };
  }

  void reg_str(const std::string& key, std::string& field) {
    setters_[key] = [&field](const std::string& v) { field = v; };
    getters_[key] = [&field] { return field; };
  }

  RunConfig& cfg_;
  std::map<std::string, std::function<void(const std::string&)>> setters_;
  std::map<std::string, std::function<std::string()>> getters_;
};

// File (optional) then environment, then validation.
inline RunConfig load_run_config(const std::string& path) {
  RunConfig cfg;
  ConfigSchema schema(cfg);
  if (!path.empty()) schema.load_file(path);
  schema.apply_env_overrides();
  cfg.model.validate();
  cfg.curriculum.validate();
  require(cfg.stage_override >= 0 && cfg.stage_override <= 3,
          "config: train.stage_override must be 0..3");
  return cfg;
}

inline std::string dump_run_config(RunConfig& cfg) {
  ConfigSchema schema(cfg);
  return schema.dump();
}

}  // namespace maestro
