#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "maestro/array.hpp"
#include "maestro/common.hpp"

namespace maestro {

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  i64 id = -1;

  const Array<T>& value() const { return tape->value(id); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Records forward ops in topological order; backward() visits them exactly
/// once in reverse. Single-threaded by contract; distinct tapes are
/// independent.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, i64 out_id)>;

  struct Node {
    i64 out_id;
    BackwardFn backward;
  };

  Var<T> leaf(Array<T> value, bool requires_grad = false) {
    i64 id = push_value(std::move(value), requires_grad && grad_enabled_);
    return {this, id};
  }

  Var<T> constant(Array<T> value) { return leaf(std::move(value), false); }

  // Record a computed value. `backward` reads grad(out_id) and accumulates
  // into the inputs' grad buffers. The node is skipped entirely when no
  // input needs a gradient.
  Var<T> record(Array<T> value, const std::vector<i64>& inputs, BackwardFn backward) {
    bool needs = false;
    if (grad_enabled_) {
      for (i64 in : inputs)
        if (needs_grad_[static_cast<size_t>(in)]) {
          needs = true;
          break;
        }
    }
    i64 id = push_value(std::move(value), needs);
    if (needs) nodes_.push_back(Node{id, std::move(backward)});
    return {this, id};
  }

  const Array<T>& value(i64 id) const { return values_[static_cast<size_t>(id)]; }
  bool needs_grad(i64 id) const { return needs_grad_[static_cast<size_t>(id)]; }

  // Gradient accumulator for a value; allocated zero on first touch.
  Array<T>& grad(i64 id) {
    auto& g = grads_[static_cast<size_t>(id)];
    if (g.data.empty()) g = zeros_like(values_[static_cast<size_t>(id)]);
    return g;
  }

  bool has_grad(i64 id) const { return !grads_[static_cast<size_t>(id)].data.empty(); }

  // Adds `delta` into the grad buffer of `id` if that value wants gradients.
  void accumulate(i64 id, const Array<T>& delta) {
    if (!needs_grad(id)) return;
    Array<T>& g = grad(id);
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += delta.data[i];
  }

  // Reverse pass from a scalar loss. Leaves that never influenced the loss
  // keep zero gradients.
  void backward(const Var<T>& loss) {
    require(loss.tape == this, "backward: loss from another tape");
    const Array<T>& lv = value(loss.id);
    require(lv.is_scalar(), "backward: loss must be scalar, got " + lv.shape_str());
    require(needs_grad(loss.id),
            "backward: loss does not require gradients (empty tape or grad recording disabled)");
    grad(loss.id).data[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!has_grad(it->out_id)) continue;  // no downstream use
      it->backward(*this, it->out_id);
    }
  }

  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  i64 size() const { return static_cast<i64>(values_.size()); }
  i64 node_count() const { return static_cast<i64>(nodes_.size()); }

  void clear() {
    values_.clear();
    grads_.clear();
    needs_grad_.clear();
    nodes_.clear();
  }

 private:
  i64 push_value(Array<T> v, bool needs) {
    values_.push_back(std::move(v));
    grads_.emplace_back();
    needs_grad_.push_back(needs ? 1 : 0);
    return static_cast<i64>(values_.size()) - 1;
  }

  std::vector<Array<T>> values_;
  std::vector<Array<T>> grads_;
  std::vector<u8> needs_grad_;
  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

/// RAII guard that disables gradient recording, used for teacher-side and
/// evaluation forwards.
template <typename T>
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape<T>& tape) : tape_(tape), prev_(tape.grad_enabled()) {
    tape_.set_grad_enabled(false);
  }
  ~NoGradGuard() { tape_.set_grad_enabled(prev_); }

 private:
  Tape<T>& tape_;
  bool prev_;
};

}  // namespace maestro
