#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "maestro/ops.hpp"

// Finite-difference gradient verification. The function under test maps a
// set of leaf arrays to a scalar loss built on the given tape; the checker
// perturbs every coordinate with central differences and compares against
// the taped gradient.

namespace maestro {

template <typename T>
struct GradCheckReport {
  bool pass = true;
  bool deterministic = true;
  T max_rel_err = T(0);
  i64 worst_input = -1;
  i64 worst_coord = -1;
  T worst_analytic = T(0);
  T worst_numeric = T(0);
  i64 coords_checked = 0;

  std::string summary() const {
    std::string s = pass ? "PASS" : "FAIL";
    s += " max_rel_err=" + std::to_string(static_cast<double>(max_rel_err));
    s += " coords=" + std::to_string(coords_checked);
    if (!deterministic) s += " NONDETERMINISTIC";
    if (worst_input >= 0)
      s += " worst(input=" + std::to_string(worst_input) + ",coord=" +
           std::to_string(worst_coord) + ",ad=" + std::to_string(static_cast<double>(worst_analytic)) +
           ",fd=" + std::to_string(static_cast<double>(worst_numeric)) + ")";
    return s;
  }
};

// fn receives a fresh tape plus leaves for each input (requires_grad on) and
// returns the scalar loss Var. eps is the central-difference step; tol is on
// rel err |ad-fd| / max(|ad|,|fd|,floor).
template <typename T>
GradCheckReport<T> grad_check(
    const std::function<Var<T>(Tape<T>&, std::vector<Var<T>>&)>& fn,
    std::vector<Array<T>> inputs, T eps = T(1e-5), T tol = T(1e-6),
    T floor = T(1e-3)) {
  GradCheckReport<T> report;

  auto eval = [&](const std::vector<Array<T>>& xs) -> T {
    Tape<T> tape;
    std::vector<Var<T>> leaves;
    leaves.reserve(xs.size());
    for (const auto& x : xs) leaves.push_back(tape.leaf(x, true));
    Var<T> loss = fn(tape, leaves);
    require(loss.value().is_scalar(), "grad_check: loss must be scalar");
    return loss.value().item();
  };

  // Two forward passes must agree bitwise.
  T f0 = eval(inputs);
  T f1 = eval(inputs);
  if (std::memcmp(&f0, &f1, sizeof(T)) != 0) {
    report.deterministic = false;
    report.pass = false;
  }

  // Analytic gradients.
  std::vector<Array<T>> analytic;
  {
    Tape<T> tape;
    std::vector<Var<T>> leaves;
    for (const auto& x : inputs) leaves.push_back(tape.leaf(x, true));
    Var<T> loss = fn(tape, leaves);
    tape.backward(loss);
    for (const auto& l : leaves)
      analytic.push_back(tape.has_grad(l.id) ? tape.grad(l.id) : zeros_like(l.value()));
  }

  for (size_t i = 0; i < inputs.size(); ++i) {
    for (size_t j = 0; j < inputs[i].data.size(); ++j) {
      T saved = inputs[i].data[j];
      inputs[i].data[j] = saved + eps;
      T fp = eval(inputs);
      inputs[i].data[j] = saved - eps;
      T fm = eval(inputs);
      inputs[i].data[j] = saved;
      T fd = (fp - fm) / (T(2) * eps);
      T ad = analytic[i].data[j];
      T denom = std::max({std::abs(ad), std::abs(fd), floor});
      T rel = std::abs(ad - fd) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_input = static_cast<i64>(i);
        report.worst_coord = static_cast<i64>(j);
        report.worst_analytic = ad;
        report.worst_numeric = fd;
      }
    }
  }
  if (report.max_rel_err > tol) report.pass = false;
  return report;
}

}  // namespace maestro
