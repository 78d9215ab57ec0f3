#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "maestro/tape.hpp"

// Differentiable op set. Each op validates shapes, computes the forward
// value, and records a closure that maps the output gradient to input
// gradients. The whitelist covers exactly what the model stacks and losses
// need; there is no general graph compiler.

namespace maestro {
namespace detail {

template <typename T>
inline void check_same_shape(const char* op, const Array<T>& a, const Array<T>& b) {
  require(a.same_shape(b), std::string(op) + ": shape mismatch " + a.shape_str() +
                               " vs " + b.shape_str());
}

}  // namespace detail

// ---- elementwise binary ----

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::check_same_shape("add", a.value(), b.value());
  Array<T> out = a.value();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.value().data[i];
  i64 ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, i64 out_id) {
    const Array<T>& g = t.grad(out_id);
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::check_same_shape("sub", a.value(), b.value());
  Array<T> out = a.value();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.value().data[i];
  i64 ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, i64 out_id) {
    const Array<T>& g = t.grad(out_id);
    t.accumulate(ia, g);
    if (t.needs_grad(ib)) {
      Array<T>& gb = t.grad(ib);
      for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] -= g.data[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::check_same_shape("mul", a.value(), b.value());
  Array<T> out = a.value();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.value().data[i];
  i64 ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, i64 out_id) {
    const Array<T>& g = t.grad(out_id);
    if (t.needs_grad(ia)) {
      Array<T>& ga = t.grad(ia);
      const Array<T>& bv = t.value(ib);
      for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g.data[i] * bv.data[i];
    }
    if (t.needs_grad(ib)) {
      Array<T>& gb = t.grad(ib);
      const Array<T>& av = t.value(ia);
      for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += g.data[i] * av.data[i];
    }
  });
}

// ---- constants and scaling ----

template <typename T>
Var<T> scale(Var<T> a, T c) {
  Array<T> out = a.value();
  for (T& v : out.data) v *= c;
  i64 ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, c](Tape<T>& t, i64 out_id) {
    if (!t.needs_grad(ia)) return;
    const Array<T>& g = t.grad(out_id);
    Array<T>& ga = t.grad(ia);
    for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += c * g.data[i];
  });
}

template <typename T>
Var<T> add_const(Var<T> a, const Array<T>& c) {
  detail::check_same_shape("add_const", a.value(), c);
  Array<T> out = a.value();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += c.data[i];
  i64 ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia](Tape<T>& t, i64 out_id) {
    t.accumulate(ia, t.grad(out_id));
  });
}

template <typename T>
Var<T> mul_const(Var<T> a, Array<T> c) {
  detail::check_same_shape("mul_const", a.value(), c);
  Array<T> out = a.value();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= c.data[i];
  i64 ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, c = std::move(c)](Tape<T>& t, i64 out_id) {
    if (!t.needs_grad(ia)) return;
    const Array<T>& g = t.grad(out_id);
    Array<T>& ga = t.grad(ia);
    for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g.data[i] * c.data[i];
  });
}

// ---- elementwise unary ----

template <typename T, typename FwdFn, typename DerivFn>
Var<T> unary_op(const char* /*name*/, Var<T> a, FwdFn f, DerivFn dfdy) {
  Array<T> out = a.value();
  for (T& v : out.data) v = f(v);
  i64 ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, dfdy](Tape<T>& t, i64 out_id) {
    if (!t.needs_grad(ia)) return;
    const Array<T>& g = t.grad(out_id);
    const Array<T>& y = t.value(out_id);
    const Array<T>& x = t.value(ia);
    Array<T>& ga = t.grad(ia);
    for (size_t i = 0; i < ga.data.size(); ++i)
      ga.data[i] += g.data[i] * dfdy(x.data[i], y.data[i]);
  });
}

template <typename T>
Var<T> tanh_op(Var<T> a) {
  return unary_op(
      "tanh", a, [](T x) { return std::tanh(x); },
      [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return unary_op(
      "sigmoid", a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> relu(Var<T> a) {
  return unary_op(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> exp_op(Var<T> a) {
  return unary_op(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

// ---- matrix ops ----

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Array<T>& av = a.value();
  const Array<T>& bv = b.value();
  require(av.rank() == 2 && bv.rank() == 2 && av.shape[1] == bv.shape[0],
          "matmul: shapes do not conform: " + av.shape_str() + " * " + bv.shape_str());
  i64 m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  Array<T> out({m, n});
  matmul_acc(av.data.data(), bv.data.data(), out.data.data(), m, k, n);
  i64 ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape<T>& t, i64 out_id) {
    const Array<T>& g = t.grad(out_id);
    if (t.needs_grad(ia)) {
      // dA = dC * B^T
      matmul_nt_acc(g.data.data(), t.value(ib).data.data(), t.grad(ia).data.data(), m, n, k);
    }
    if (t.needs_grad(ib)) {
      // dB = A^T * dC
      matmul_tn_acc(t.value(ia).data.data(), g.data.data(), t.grad(ib).data.data(), m, k, n);
    }
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  const Array<T>& av = a.value();
  require(av.rank() == 2, "transpose: need 2-D, got " + av.shape_str());
  i64 m = av.shape[0], n = av.shape[1];
  Array<T> out({n, m});
  for (i64 i = 0; i < m; ++i)
    for (i64 j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
  i64 ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, m, n](Tape<T>& t, i64 out_id) {
    if (!t.needs_grad(ia)) return;
    const Array<T>& g = t.grad(out_id);
    Array<T>& ga = t.grad(ia);
    for (i64 i = 0; i < m; ++i)
      for (i64 j = 0; j < n; ++j) ga.at(i, j) += g.at(j, i);
  });
}

// Broadcast a length-n row vector over every row of a [m,n] matrix.
template <typename T>
Var<T> add_row(Var<T> mat, Var<T> row) {
  const Array<T>& mv = mat.value();
  const Array<T>& rv = row.value();
  require(mv.rank() == 2 && rv.numel() == mv.shape[1],
          "add_row: " + mv.shape_str() + " + " + rv.shape_str());
  Array<T> out = mv;
  i64 m = mv.shape[0], n = mv.shape[1];
  for (i64 i = 0; i < m; ++i)
    for (i64 j = 0; j < n; ++j) out.data[static_cast<size_t>(i * n + j)] += rv.data[static_cast<size_t>(j)];
  i64 im = mat.id, ir = row.id;
  return mat.tape->record(std::move(out), {im, ir}, [im, ir, m, n](Tape<T>& t, i64 out_id) {
    const Array<T>& g = t.grad(out_id);
    t.accumulate(im, g);
    if (t.needs_grad(ir)) {
      Array<T>& gr = t.grad(ir);
      for (i64 i = 0; i < m; ++i)
        for (i64 j = 0; j < n; ++j) gr.data[static_cast<size_t>(j)] += g.data[static_cast<size_t>(i * n + j)];
    }
  });
}

// ---- reductions ----

template <typename T>
Var<T> reduce_sum(Var<T> a) {
  T s = T(0);
  for (T v : a.value().data) s += v;
  i64 ia = a.id;
  return a.tape->record(Array<T>::scalar(s), {ia}, [ia](Tape<T>& t, i64 out_id) {
    if (!t.needs_grad(ia)) return;
    T g = t.grad(out_id).data[0];
    Array<T>& ga = t.grad(ia);
    for (T& v : ga.data) v += g;
  });
}

template <typename T>
Var<T> reduce_mean(Var<T> a) {
  i64 n = a.value().numel();
  return scale(reduce_sum(a), T(1) / static_cast<T>(n));
}

// logsumexp over the last axis: [.., n] -> [..] (vector in, scalar out;
// matrix in, one value per row). Max-subtracted for stability.
template <typename T>
Var<T> logsumexp(Var<T> a) {
  const Array<T>& av = a.value();
  i64 n = av.rank() >= 1 ? av.shape.back() : 1;
  i64 m = av.numel() / n;
  std::vector<i64> oshape(av.shape.begin(), av.shape.end() - 1);
  if (oshape.empty()) oshape = {1};
  Array<T> out(oshape);
  for (i64 i = 0; i < m; ++i) out.data[static_cast<size_t>(i)] = logsumexp_range(av.data.data() + i * n, n);
  i64 ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, m, n](Tape<T>& t, i64 out_id) {
    if (!t.needs_grad(ia)) return;
    const Array<T>& g = t.grad(out_id);
    const Array<T>& y = t.value(out_id);
    const Array<T>& x = t.value(ia);
    Array<T>& ga = t.grad(ia);
    for (i64 i = 0; i < m; ++i) {
      T gi = g.data[static_cast<size_t>(i)];
      T yi = y.data[static_cast<size_t>(i)];
      for (i64 j = 0; j < n; ++j) {
        size_t k = static_cast<size_t>(i * n + j);
        ga.data[k] += gi * std::exp(x.data[k] - yi);
      }
    }
  });
}

// softmax over the last axis.
template <typename T>
Var<T> softmax(Var<T> a) {
  const Array<T>& av = a.value();
  i64 n = av.shape.back();
  i64 m = av.numel() / n;
  Array<T> out = av;
  for (i64 i = 0; i < m; ++i) {
    T* row = out.data.data() + i * n;
    T mx = row[0];
    for (i64 j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T s = T(0);
    for (i64 j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (i64 j = 0; j < n; ++j) row[j] /= s;
  }
  i64 ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, m, n](Tape<T>& t, i64 out_id) {
    if (!t.needs_grad(ia)) return;
    const Array<T>& g = t.grad(out_id);
    const Array<T>& y = t.value(out_id);
    Array<T>& ga = t.grad(ia);
    for (i64 i = 0; i < m; ++i) {
      const T* yr = y.data.data() + i * n;
      const T* gr = g.data.data() + i * n;
      T dot = T(0);
      for (i64 j = 0; j < n; ++j) dot += yr[j] * gr[j];
      T* gar = ga.data.data() + i * n;
      for (i64 j = 0; j < n; ++j) gar[j] += yr[j] * (gr[j] - dot);
    }
  });
}

// log-softmax over the last axis.
template <typename T>
Var<T> log_softmax(Var<T> a) {
  const Array<T>& av = a.value();
  i64 n = av.shape.back();
  i64 m = av.numel() / n;
  Array<T> out = av;
  for (i64 i = 0; i < m; ++i) {
    T* row = out.data.data() + i * n;
    T lse = logsumexp_range(row, n);
    for (i64 j = 0; j < n; ++j) row[j] -= lse;
  }
  i64 ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, m, n](Tape<T>& t, i64 out_id) {
    if (!t.needs_grad(ia)) return;
    const Array<T>& g = t.grad(out_id);
    const Array<T>& y = t.value(out_id);
    Array<T>& ga = t.grad(ia);
    for (i64 i = 0; i < m; ++i) {
      const T* yr = y.data.data() + i * n;
      const T* gr = g.data.data() + i * n;
      T gsum = T(0);
      for (i64 j = 0; j < n; ++j) gsum += gr[j];
      T* gar = ga.data.data() + i * n;
      for (i64 j = 0; j < n; ++j) gar[j] += gr[j] - std::exp(yr[j]) * gsum;
    }
  });
}

// ---- indexing / assembly ----

// Row gather: out[i] = table[ids[i]]. Backward scatter-adds.
template <typename T>
Var<T> gather(Var<T> table, std::vector<i64> ids) {
  const Array<T>& tv = table.value();
  require(tv.rank() == 2, "gather: table must be 2-D, got " + tv.shape_str());
  i64 rows = tv.shape[0], d = tv.shape[1];
  for (i64 id : ids)
    require(id >= 0 && id < rows,
            "gather: index " + std::to_string(id) + " out of range [0," + std::to_string(rows) + ")");
  Array<T> out({static_cast<i64>(ids.size()), d});
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.data.data() + ids[i] * d, d, out.data.data() + static_cast<i64>(i) * d);
  i64 it = table.id;
  return table.tape->record(std::move(out), {it}, [it, d, ids = std::move(ids)](Tape<T>& t, i64 out_id) {
    if (!t.needs_grad(it)) return;
    const Array<T>& g = t.grad(out_id);
    Array<T>& gt = t.grad(it);
    for (size_t i = 0; i < ids.size(); ++i) {
      const T* src = g.data.data() + static_cast<i64>(i) * d;
      T* dst = gt.data.data() + ids[i] * d;
      for (i64 j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

// Row slice [r0, r1) of a 2-D array.
template <typename T>
Var<T> slice_rows(Var<T> a, i64 r0, i64 r1) {
  const Array<T>& av = a.value();
  require(av.rank() == 2 && r0 >= 0 && r1 <= av.shape[0] && r0 < r1,
          "slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) + ") for " +
              av.shape_str());
  i64 d = av.shape[1];
  Array<T> out({r1 - r0, d});
  std::copy_n(av.data.data() + r0 * d, (r1 - r0) * d, out.data.data());
  i64 ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, r0, d](Tape<T>& t, i64 out_id) {
    if (!t.needs_grad(ia)) return;
    const Array<T>& g = t.grad(out_id);
    Array<T>& ga = t.grad(ia);
    T* dst = ga.data.data() + r0 * d;
    for (size_t i = 0; i < g.data.size(); ++i) dst[i] += g.data[i];
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  i64 d = parts[0].value().cols();
  i64 rows = 0;
  for (const auto& p : parts) {
    require(p.value().rank() == 2 && p.value().shape[1] == d,
            "concat_rows: column mismatch " + p.value().shape_str());
    rows += p.value().shape[0];
  }
  Array<T> out({rows, d});
  std::vector<i64> ids;
  std::vector<i64> offsets;
  i64 off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data.data(), p.value().numel(), out.data.data() + off);
    ids.push_back(p.id);
    offsets.push_back(off);
    off += p.value().numel();
  }
  return parts[0].tape->record(std::move(out), ids,
                               [ids, offsets](Tape<T>& t, i64 out_id) {
    const Array<T>& g = t.grad(out_id);
    for (size_t p = 0; p < ids.size(); ++p) {
      if (!t.needs_grad(ids[p])) continue;
      Array<T>& gp = t.grad(ids[p]);
      const T* src = g.data.data() + offsets[p];
      for (size_t i = 0; i < gp.data.size(); ++i) gp.data[i] += src[i];
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  i64 m = parts[0].value().rows();
  i64 total = 0;
  for (const auto& p : parts) {
    require(p.value().rank() == 2 && p.value().shape[0] == m,
            "concat_cols: row mismatch " + p.value().shape_str());
    total += p.value().shape[1];
  }
  Array<T> out({m, total});
  std::vector<i64> ids, widths;
  i64 off = 0;
  for (const auto& p : parts) {
    i64 w = p.value().shape[1];
    for (i64 i = 0; i < m; ++i)
      std::copy_n(p.value().data.data() + i * w, w, out.data.data() + i * total + off);
    ids.push_back(p.id);
    widths.push_back(w);
    off += w;
  }
  return parts[0].tape->record(std::move(out), ids,
                               [ids, widths, m, total](Tape<T>& t, i64 out_id) {
    const Array<T>& g = t.grad(out_id);
    i64 off = 0;
    for (size_t p = 0; p < ids.size(); ++p) {
      i64 w = widths[p];
      if (t.needs_grad(ids[p])) {
        Array<T>& gp = t.grad(ids[p]);
        for (i64 i = 0; i < m; ++i) {
          const T* src = g.data.data() + i * total + off;
          T* dst = gp.data.data() + i * w;
          for (i64 j = 0; j < w; ++j) dst[j] += src[j];
        }
      }
      off += w;
    }
  });
}

// Column slice [c0, c1) of a 2-D array.
template <typename T>
Var<T> slice_cols(Var<T> a, i64 c0, i64 c1) {
  const Array<T>& av = a.value();
  require(av.rank() == 2 && c0 >= 0 && c1 <= av.shape[1] && c0 < c1,
          "slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) + ") for " +
              av.shape_str());
  i64 m = av.shape[0], n = av.shape[1], w = c1 - c0;
  Array<T> out({m, w});
  for (i64 i = 0; i < m; ++i)
    std::copy_n(av.data.data() + i * n + c0, w, out.data.data() + i * w);
  i64 ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, c0, m, n, w](Tape<T>& t, i64 out_id) {
    if (!t.needs_grad(ia)) return;
    const Array<T>& g = t.grad(out_id);
    Array<T>& ga = t.grad(ia);
    for (i64 i = 0; i < m; ++i) {
      const T* src = g.data.data() + i * w;
      T* dst = ga.data.data() + i * n + c0;
      for (i64 j = 0; j < w; ++j) dst[j] += src[j];
    }
  });
}

// ---- normalization ----

// Per-row layer norm with learned gain and bias (both length-n vectors).
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  const Array<T>& xv = x.value();
  require(xv.rank() == 2, "layer_norm: need 2-D, got " + xv.shape_str());
  i64 m = xv.shape[0], n = xv.shape[1];
  require(gain.value().numel() == n && bias.value().numel() == n,
          "layer_norm: gain/bias must be length " + std::to_string(n));
  Array<T> out({m, n});
  Array<T> inv_std({m});
  Array<T> xhat({m, n});
  const T* g = gain.value().data.data();
  const T* b = bias.value().data.data();
  for (i64 i = 0; i < m; ++i) {
    const T* row = xv.data.data() + i * n;
    T mean = T(0);
    for (i64 j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<T>(n);
    T var = T(0);
    for (i64 j = 0; j < n; ++j) {
      T d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(n);
    T is = T(1) / std::sqrt(var + eps);
    inv_std.data[static_cast<size_t>(i)] = is;
    for (i64 j = 0; j < n; ++j) {
      T xh = (row[j] - mean) * is;
      xhat.data[static_cast<size_t>(i * n + j)] = xh;
      out.data[static_cast<size_t>(i * n + j)] = xh * g[j] + b[j];
    }
  }
  i64 ix = x.id, ig = gain.id, ib = bias.id;
  return x.tape->record(std::move(out), {ix, ig, ib},
                        [ix, ig, ib, m, n, inv_std = std::move(inv_std),
                         xhat = std::move(xhat)](Tape<T>& t, i64 out_id) {
    const Array<T>& go = t.grad(out_id);
    const T* gainv = t.value(ig).data.data();
    if (t.needs_grad(ig)) {
      Array<T>& gg = t.grad(ig);
      for (i64 i = 0; i < m; ++i)
        for (i64 j = 0; j < n; ++j)
          gg.data[static_cast<size_t>(j)] +=
              go.data[static_cast<size_t>(i * n + j)] * xhat.data[static_cast<size_t>(i * n + j)];
    }
    if (t.needs_grad(ib)) {
      Array<T>& gb = t.grad(ib);
      for (i64 i = 0; i < m; ++i)
        for (i64 j = 0; j < n; ++j)
          gb.data[static_cast<size_t>(j)] += go.data[static_cast<size_t>(i * n + j)];
    }
    if (t.needs_grad(ix)) {
      Array<T>& gx = t.grad(ix);
      for (i64 i = 0; i < m; ++i) {
        const T* gor = go.data.data() + i * n;
        const T* xh = xhat.data.data() + i * n;
        T is = inv_std.data[static_cast<size_t>(i)];
        // dxhat_j = go_j * gain_j; dx = is*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
        T mean_dxh = T(0), mean_dxh_xh = T(0);
        for (i64 j = 0; j < n; ++j) {
          T dxh = gor[j] * gainv[j];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xh[j];
        }
        mean_dxh /= static_cast<T>(n);
        mean_dxh_xh /= static_cast<T>(n);
        T* gxr = gx.data.data() + i * n;
        for (i64 j = 0; j < n; ++j) {
          T dxh = gor[j] * gainv[j];
          gxr[j] += is * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
      }
    }
  });
}

// L2-normalize each row: y_i = x_i / max(||x_i||, eps).
template <typename T>
Var<T> row_l2_normalize(Var<T> x, T eps = T(1e-8)) {
  const Array<T>& xv = x.value();
  require(xv.rank() == 2, "row_l2_normalize: need 2-D, got " + xv.shape_str());
  i64 m = xv.shape[0], n = xv.shape[1];
  Array<T> out({m, n});
  Array<T> inv_norm({m});
  for (i64 i = 0; i < m; ++i) {
    const T* row = xv.data.data() + i * n;
    T s = T(0);
    for (i64 j = 0; j < n; ++j) s += row[j] * row[j];
    T inv = T(1) / std::max(std::sqrt(s), eps);
    inv_norm.data[static_cast<size_t>(i)] = inv;
    for (i64 j = 0; j < n; ++j) out.data[static_cast<size_t>(i * n + j)] = row[j] * inv;
  }
  i64 ix = x.id;
  return x.tape->record(std::move(out), {ix},
                        [ix, m, n, inv_norm = std::move(inv_norm)](Tape<T>& t, i64 out_id) {
    if (!t.needs_grad(ix)) return;
    const Array<T>& g = t.grad(out_id);
    const Array<T>& y = t.value(out_id);
    Array<T>& gx = t.grad(ix);
    for (i64 i = 0; i < m; ++i) {
      const T* gr = g.data.data() + i * n;
      const T* yr = y.data.data() + i * n;
      T inv = inv_norm.data[static_cast<size_t>(i)];
      T dot = T(0);
      for (i64 j = 0; j < n; ++j) dot += gr[j] * yr[j];
      T* gxr = gx.data.data() + i * n;
      for (i64 j = 0; j < n; ++j) gxr[j] += inv * (gr[j] - yr[j] * dot);
    }
  });
}

// ---- convolutions (same padding, stride 1) ----

// x: [t, c_in], w: [k, c_in, c_out] flattened as rank-3, bias handled
// separately. Centered window; odd or even k both allowed (even k skews
// left).
template <typename T>
Var<T> conv1d(Var<T> x, Var<T> w, i64 kernel) {
  const Array<T>& xv = x.value();
  const Array<T>& wv = w.value();
  require(xv.rank() == 2, "conv1d: input must be 2-D, got " + xv.shape_str());
  require(wv.rank() == 3 && wv.shape[0] == kernel && wv.shape[1] == xv.shape[1],
          "conv1d: weight " + wv.shape_str() + " does not match input " + xv.shape_str() +
              " with kernel " + std::to_string(kernel));
  i64 t_len = xv.shape[0], cin = xv.shape[1], cout = wv.shape[2];
  i64 lpad = (kernel - 1) / 2;
  Array<T> out({t_len, cout});
  for (i64 t = 0; t < t_len; ++t) {
    T* orow = out.data.data() + t * cout;
    for (i64 kk = 0; kk < kernel; ++kk) {
      i64 src = t + kk - lpad;
      if (src < 0 || src >= t_len) continue;
      const T* xrow = xv.data.data() + src * cin;
      const T* wmat = wv.data.data() + kk * cin * cout;
      matmul_acc(xrow, wmat, orow, 1, cin, cout);
    }
  }
  i64 ix = x.id, iw = w.id;
  return x.tape->record(std::move(out), {ix, iw},
                        [ix, iw, t_len, cin, cout, kernel, lpad](Tape<T>& t, i64 out_id) {
    const Array<T>& g = t.grad(out_id);
    const Array<T>& xv = t.value(ix);
    const Array<T>& wv = t.value(iw);
    for (i64 tt = 0; tt < t_len; ++tt) {
      const T* grow = g.data.data() + tt * cout;
      for (i64 kk = 0; kk < kernel; ++kk) {
        i64 src = tt + kk - lpad;
        if (src < 0 || src >= t_len) continue;
        if (t.needs_grad(ix)) {
          // dx[src] += g[t] * w[kk]^T
          matmul_nt_acc(grow, wv.data.data() + kk * cin * cout,
                        t.grad(ix).data.data() + src * cin, 1, cout, cin);
        }
        if (t.needs_grad(iw)) {
          // dw[kk] += x[src]^T * g[t]
          matmul_tn_acc(xv.data.data() + src * cin, grow,
                        t.grad(iw).data.data() + kk * cin * cout, 1, cin, cout);
        }
      }
    }
  });
}

// Depthwise conv over time: x [t, c], w [c, k]; each channel convolved with
// its own length-k kernel, same padding.
template <typename T>
Var<T> depthwise_conv1d(Var<T> x, Var<T> w) {
  const Array<T>& xv = x.value();
  const Array<T>& wv = w.value();
  require(xv.rank() == 2 && wv.rank() == 2 && wv.shape[0] == xv.shape[1],
          "depthwise_conv1d: weight " + wv.shape_str() + " does not match input " + xv.shape_str());
  i64 t_len = xv.shape[0], c = xv.shape[1], k = wv.shape[1];
  i64 lpad = (k - 1) / 2;
  Array<T> out({t_len, c});
  for (i64 t = 0; t < t_len; ++t)
    for (i64 kk = 0; kk < k; ++kk) {
      i64 src = t + kk - lpad;
      if (src < 0 || src >= t_len) continue;
      const T* xrow = xv.data.data() + src * c;
      T* orow = out.data.data() + t * c;
      for (i64 j = 0; j < c; ++j) orow[j] += xrow[j] * wv.data[static_cast<size_t>(j * k + kk)];
    }
  i64 ix = x.id, iw = w.id;
  return x.tape->record(std::move(out), {ix, iw},
                        [ix, iw, t_len, c, k, lpad](Tape<T>& t, i64 out_id) {
    const Array<T>& g = t.grad(out_id);
    const Array<T>& xv = t.value(ix);
    const Array<T>& wv = t.value(iw);
    for (i64 tt = 0; tt < t_len; ++tt) {
      const T* grow = g.data.data() + tt * c;
      for (i64 kk = 0; kk < k; ++kk) {
        i64 src = tt + kk - lpad;
        if (src < 0 || src >= t_len) continue;
        if (t.needs_grad(ix)) {
          T* dst = t.grad(ix).data.data() + src * c;
          for (i64 j = 0; j < c; ++j) dst[j] += grow[j] * wv.data[static_cast<size_t>(j * k + kk)];
        }
        if (t.needs_grad(iw)) {
          const T* xrow = xv.data.data() + src * c;
          Array<T>& gw = t.grad(iw);
          for (i64 j = 0; j < c; ++j) gw.data[static_cast<size_t>(j * k + kk)] += grow[j] * xrow[j];
        }
      }
    }
  });
}

}  // namespace maestro
