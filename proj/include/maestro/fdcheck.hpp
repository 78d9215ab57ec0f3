#pragma once

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "maestro/grad_check.hpp"
#include "maestro/objectives.hpp"

// Finite-difference verification of every loss component on a tiny model.
// Each component is checked as its own scalar against every parameter
// coordinate. Randomness that feeds a component (masks, negative sampling)
// is re-derived from a fixed key inside the loss closure so both the taped
// and the perturbed evaluations see identical draws; detached targets are
// prepared once outside.

namespace maestro {

namespace detail {

inline ModelConfig fdcheck_config() {
  ModelConfig c;
  c.frame_dim = 4;
  c.d_model = 8;
  c.n_speech_layers = 1;
  c.n_shared_layers = 1;
  c.n_text_conv_layers = 1;
  c.n_text_transformer_layers = 1;
  c.n_refiner_layers = 1;
  c.n_duration_blocks = 1;
  c.n_heads = 1;
  c.decoder_hidden = 6;
  c.joint_dim = 6;
  c.vocab_size = 4;
  c.d_ff = 8;
  c.text_conv_kernel = 3;
  c.refiner_kernel = 3;
  c.duration_kernel = 3;
  c.n_codes = 8;
  c.quant_dim = 3;
  c.max_len = 16;
  return c;
}

inline Bound<double> fdcheck_bind(Tape<double>& tape, const Model<double>& m,
                                  const std::vector<std::string>& names,
                                  const std::vector<Var<double>>& vars) {
  Bound<double> b;
  b.tape = &tape;
  for (size_t i = 0; i < names.size(); ++i) b.vars.emplace(names[i], vars[i]);
  for (const auto& [name, arr] : m.params.buffers) b.bufs.emplace(name, tape.constant(arr));
  return b;
}

}  // namespace detail

struct ComponentGradCheck {
  std::string component;
  GradCheckReport<double> report;
};

struct GradCheckSuite {
  std::vector<ComponentGradCheck> components;
  double tolerance = 1e-4;

  double max_rel_err() const {
    double m = 0;
    for (const auto& c : components) m = std::max(m, c.report.max_rel_err);
    return m;
  }
  bool pass() const {
    for (const auto& c : components)
      if (!c.report.pass || !c.report.deterministic) return false;
    return true;
  }
  std::string summary() const {
    std::ostringstream os;
    os << std::scientific << std::setprecision(3);
    for (const auto& c : components)
      os << (c.report.pass ? "  ok   " : "  FAIL ") << c.component
         << "  max rel err " << c.report.max_rel_err << "  ("
         << c.report.coords_checked << " coords)\n";
    os << (pass() ? "PASS" : "FAIL") << " all components, max rel err "
       << max_rel_err() << (pass() ? " <= " : " > ") << tolerance << "\n";
    return os.str();
  }
};

// Runs one finite-difference sweep per loss component: the transducer
// loss through the speech path, the modality gap, the duration
// regression, aligned text reconstruction, and the two speech-only
// objectives. Every model parameter coordinate is perturbed.
inline GradCheckSuite run_gradient_checks(u64 seed = 7, double tol = 1e-4) {
  GradCheckSuite suite;
  suite.tolerance = tol;
  ModelConfig cfg = detail::fdcheck_config();
  Model<double> m(cfg, seed);

  std::vector<std::string> names;
  std::vector<Array<double>> arrays;
  for (const auto& [name, arr] : m.params.values) {
    names.push_back(name);
    arrays.push_back(arr);
  }

  CounterRng data_rng(CounterRng::derive_key(seed, 0xFD));
  Array<double> frames({4, cfg.frame_dim});
  for (double& v : frames.data) v = data_rng.next_normal();
  Array<double> frames_long({8, cfg.frame_dim});
  for (double& v : frames_long.data) v = data_rng.next_normal();
  std::vector<i64> tokens = {2, 3};
  std::vector<i64> durations = {2, 1};

  auto check = [&](const std::string& component,
                   const std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>& fn) {
    suite.components.push_back({component, grad_check<double>(fn, arrays, 1e-5, tol)});
  };

  check("rnnt", [&](Tape<double>& tape, std::vector<Var<double>>& vars) {
    Bound<double> b = detail::fdcheck_bind(tape, m, names, vars);
    Var<double> enc = m.shared_encode(b, m.speech_encode(b, tape.constant(frames)));
    Var<double> pred = m.decoder_states(b, tokens);
    return rnnt_loss_op(m.joint_lattice(b, enc, pred), tokens, frames.rows());
  });

  check("mm_mse", [&](Tape<double>& tape, std::vector<Var<double>>& vars) {
    Bound<double> b = detail::fdcheck_bind(tape, m, names, vars);
    return loss_mm(m, b, frames, tokens, durations).mm_mse;
  });

  check("duration_loss", [&](Tape<double>& tape, std::vector<Var<double>>& vars) {
    Bound<double> b = detail::fdcheck_bind(tape, m, names, vars);
    return loss_mm(m, b, frames, tokens, durations).duration;
  });

  MaskSpec mlm_spec;
  mlm_spec.max_time_width = 2;
  mlm_spec.max_feature_width = 2;
  check("a_mlm", [&](Tape<double>& tape, std::vector<Var<double>>& vars) {
    Bound<double> b = detail::fdcheck_bind(tape, m, names, vars);
    CounterRng mask_rng(CounterRng::derive_key(seed, 0xA1));  // same mask every evaluation
    return loss_a_mlm(m, b, tokens, durations, mlm_spec, mask_rng);
  });

  MaskSpec speech_spec;
  CounterRng mask_rng(CounterRng::derive_key(seed, 0xA2));
  MaskPlan plan = plan_mask(frames_long.rows(), cfg.d_model, speech_spec, mask_rng);
  require(plan.masked_time_positions.size() >= 2, "fdcheck: degenerate mask plan");
  SpeechTargets<double> targets = prepare_speech_targets(m, frames_long, plan);
  auto speech_losses = [&](Tape<double>& tape, std::vector<Var<double>>& vars) {
    Bound<double> b = detail::fdcheck_bind(tape, m, names, vars);
    CounterRng neg_rng(CounterRng::derive_key(seed, 0xA3));  // same negatives every evaluation
    return loss_speech_only(m, b, frames_long, speech_spec, plan, targets, 0.1, 7, neg_rng);
  };
  check("contrastive", [&](Tape<double>& tape, std::vector<Var<double>>& vars) {
    return speech_losses(tape, vars).contrastive;
  });
  check("speech_mlm", [&](Tape<double>& tape, std::vector<Var<double>>& vars) {
    return speech_losses(tape, vars).speech_mlm;
  });

  return suite;
}

}  // namespace maestro
