#pragma once

#include <fstream>
#include <map>
#include <string>

#include "maestro/corpus.hpp"
#include "maestro/ema.hpp"
#include "maestro/optimizer.hpp"

// Training checkpoint (MSTP): parameters, optimizer moments, EMA shadow,
// stream cursors and counters. Everything a resumed run needs to continue
// bitwise-identically; per-step randomness is derived from (seed, step) so
// no generator state is stored beyond the cursors.
//
// Layout, little-endian:
//   magic "MSTP" | version u32 | dtype u8 (bytes per scalar) | step u64
//   | params | opt.m | opt.v | applied u64 | skipped u64
//   | ema_decay f64 | ema shadow
//   | cursor count u32, each: name, epoch u64, pos u64
//   | counter count u32, each: name, value u64
// A named array table is: count u32, then per entry: name, rank u32,
// dims i64[rank], data scalar[numel]. Strings are u32 length + bytes.

namespace maestro {

inline constexpr u32 kCheckpointVersion = 1;

struct StreamCursorState {
  u64 epoch = 0;
  u64 pos = 0;
};

template <typename T>
struct Checkpoint {
  u64 step = 0;
  std::map<std::string, Array<T>> params;
  std::map<std::string, Array<T>> opt_m, opt_v;
  u64 applied_steps = 0;
  u64 skipped_steps = 0;
  double ema_decay = 0.99;
  std::map<std::string, Array<T>> ema;
  std::map<std::string, StreamCursorState> cursors;
  std::map<std::string, u64> counters;
};

namespace io {

inline void put_f64(std::string& out, double v) {
  u64 bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<u32>(s.size()));
  out.append(s);
}

template <typename T>
void put_scalar(std::string& out, T v) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8, "unsupported scalar width");
  if constexpr (sizeof(T) == 4) {
    put_f32(out, static_cast<float>(v));
  } else {
    put_f64(out, static_cast<double>(v));
  }
}

template <typename T>
void put_named_arrays(std::string& out, const std::map<std::string, Array<T>>& table) {
  put_u32(out, static_cast<u32>(table.size()));
  for (const auto& [name, arr] : table) {
    put_str(out, name);
    put_u32(out, static_cast<u32>(arr.shape.size()));
    for (i64 d : arr.shape) put_u64(out, static_cast<u64>(d));
    for (T v : arr.data) put_scalar(out, v);
  }
}

inline double get_f64(Reader& r, const char* what) {
  u64 bits = r.get_u64(what);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline std::string get_str(Reader& r, const char* what) {
  u32 n = r.get_u32(what);
  r.need(n, what);
  std::string s = r.buf.substr(r.pos, n);
  r.pos += n;
  return s;
}

template <typename T>
T get_scalar(Reader& r, const char* what) {
  if constexpr (sizeof(T) == 4) {
    return static_cast<T>(r.get_f32(what));
  } else {
    return static_cast<T>(get_f64(r, what));
  }
}

template <typename T>
std::map<std::string, Array<T>> get_named_arrays(Reader& r, const char* what) {
  std::map<std::string, Array<T>> table;
  u32 count = r.get_u32(what);
  for (u32 i = 0; i < count; ++i) {
    std::string name = get_str(r, what);
    u32 rank = r.get_u32(what);
    require(rank >= 1 && rank <= 4, std::string("checkpoint: bad rank in ") + what +
                                        " at byte offset " + std::to_string(r.pos));
    std::vector<i64> shape(rank);
    for (u32 d = 0; d < rank; ++d) shape[d] = static_cast<i64>(r.get_u64(what));
    Array<T> arr(shape);
    for (T& v : arr.data) v = get_scalar<T>(r, what);
    table.emplace(std::move(name), std::move(arr));
  }
  return table;
}

}  // namespace io

template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ck) {
  std::string out;
  out.append("MSTP");
  io::put_u32(out, kCheckpointVersion);
  out.push_back(static_cast<char>(sizeof(T)));
  io::put_u64(out, ck.step);
  io::put_named_arrays(out, ck.params);
  io::put_named_arrays(out, ck.opt_m);
  io::put_named_arrays(out, ck.opt_v);
  io::put_u64(out, ck.applied_steps);
  io::put_u64(out, ck.skipped_steps);
  io::put_f64(out, ck.ema_decay);
  io::put_named_arrays(out, ck.ema);
  io::put_u32(out, static_cast<u32>(ck.cursors.size()));
  for (const auto& [name, c] : ck.cursors) {
    io::put_str(out, name);
    io::put_u64(out, c.epoch);
    io::put_u64(out, c.pos);
  }
  io::put_u32(out, static_cast<u32>(ck.counters.size()));
  for (const auto& [name, v] : ck.counters) {
    io::put_str(out, name);
    io::put_u64(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "save_checkpoint: cannot open " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  require(f.good(), "save_checkpoint: write failed for " + path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "load_checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  io::Reader r{buf};
  r.need(4, "magic");
  require(buf.substr(0, 4) == "MSTP", "load_checkpoint: bad magic in " + path);
  r.pos = 4;
  u32 version = r.get_u32("version");
  require(version == kCheckpointVersion,
          "load_checkpoint: unsupported version " + std::to_string(version));
  r.need(1, "dtype");
  u8 dtype = static_cast<u8>(buf[r.pos++]);
  require(dtype == sizeof(T), "load_checkpoint: scalar width " + std::to_string(dtype) +
                                  " does not match build (" + std::to_string(sizeof(T)) + ")");
  Checkpoint<T> ck;
  ck.step = r.get_u64("step");
  ck.params = io::get_named_arrays<T>(r, "params");
  ck.opt_m = io::get_named_arrays<T>(r, "opt.m");
  ck.opt_v = io::get_named_arrays<T>(r, "opt.v");
  ck.applied_steps = r.get_u64("applied");
  ck.skipped_steps = r.get_u64("skipped");
  ck.ema_decay = io::get_f64(r, "ema_decay");
  ck.ema = io::get_named_arrays<T>(r, "ema");
  u32 nc = r.get_u32("cursors");
  for (u32 i = 0; i < nc; ++i) {
    std::string name = io::get_str(r, "cursor name");
    StreamCursorState c;
    c.epoch = r.get_u64("cursor epoch");
    c.pos = r.get_u64("cursor pos");
    ck.cursors.emplace(std::move(name), c);
  }
  u32 nk = r.get_u32("counters");
  for (u32 i = 0; i < nk; ++i) {
    std::string name = io::get_str(r, "counter name");
    ck.counters[name] = r.get_u64("counter value");
  }
  require(r.pos == buf.size(), "load_checkpoint: trailing bytes at offset " +
                                   std::to_string(r.pos) + " in " + path);
  return ck;
}

}  // namespace maestro
