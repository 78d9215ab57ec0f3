#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "maestro/common.hpp"

namespace maestro {

// Counter-based 64-bit generator. Output i of stream `key` is
// splitmix64(key ^ golden*(i+1)) where golden is the 64-bit golden-ratio
// constant and splitmix64 is the finalizer from Steele et al. Identical
// sequences on every platform; state is (key, counter) and serializes to
// two integers.
class CounterRng {
 public:
  CounterRng() = default;
  explicit CounterRng(u64 key, u64 counter = 0) : key_(key), counter_(counter) {}

  static u64 mix(u64 x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  }

  // Derive an independent stream from a parent key and a label.
  static u64 derive_key(u64 parent, u64 label) {
    return mix(parent ^ mix(label ^ 0xA5A5A5A55A5A5A5Aull));
  }

  u64 next_u64() {
    ++counter_;
    return mix(key_ ^ (0x9E3779B97F4A7C15ull * counter_));
  }

  // Uniform in [0, 1) with 53 random mantissa bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Uniform integer in [lo, hi] inclusive.
  i64 next_int(i64 lo, i64 hi) {
    require(hi >= lo, "CounterRng::next_int: empty range");
    u64 span = static_cast<u64>(hi - lo) + 1;
    return lo + static_cast<i64>(next_u64() % span);
  }

  // Standard normal via Box-Muller (deterministic, no platform RNG).
  // The sine branch is discarded so the state stays exactly (key, counter).
  double next_normal() {
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Fisher-Yates shuffle of indices [0, n).
  std::vector<i64> permutation(i64 n) {
    std::vector<i64> p(static_cast<size_t>(n));
    for (i64 i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
    for (i64 i = n - 1; i > 0; --i) {
      i64 j = next_int(0, i);
      std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
    }
    return p;
  }

  u64 key() const { return key_; }
  u64 counter() const { return counter_; }
  void set_state(u64 key, u64 counter) {
    key_ = key;
    counter_ = counter;
  }

 private:
  u64 key_ = 0;
  u64 counter_ = 0;
};

}  // namespace maestro
