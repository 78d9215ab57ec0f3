#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "maestro/array.hpp"
#include "maestro/rng.hpp"

// Synthetic corpus: each vocabulary token owns a Gaussian prototype vector;
// an utterance realizes its token sequence as duration-many noisy copies of
// each prototype. Gold durations are stored next to paired items for
// evaluation; training never reads them.
//
// Container format (MSTC): little-endian throughout.
//   magic "MSTC" | version u32 | kind u8
//   | vocab u32 | frame_dim u32 | seed u64 | min_tokens u32 | max_tokens u32
//   | min_duration u32 | max_duration u32 | noise_sigma f32 | channel u8
//   | count u32
//   then `count` records, each: payload_len u32 | payload
//   payload by kind: 0 speech  -> varint T, then T*frame_dim f32
//                    1 text    -> varint U, then U varint token ids
//                    2 paired  -> varint U, U ids, U durations, varint T,
//                                 then T*frame_dim f32
// Varints are LEB128. A payload length that runs past end of file or does
// not match its decoded content is reported with the byte offset.

namespace maestro {

enum class StreamKind : u8 { speech = 0, text = 1, paired = 2 };

struct CorpusConfig {
  u64 seed = 1234;
  i64 vocab = 16;
  i64 frame_dim = 16;
  i64 min_tokens = 2;
  i64 max_tokens = 12;
  i64 min_duration = 2;
  i64 max_duration = 6;
  double noise_sigma = 0.1;
  bool channel_transform = false;
  i64 n_speech = 1024;
  i64 n_text = 2048;
  i64 n_paired = 1024;
  i64 n_eval_paired = 128;
  i64 n_eval_text = 128;
};

struct CorpusItem {
  std::vector<i64> tokens;     // empty for speech-only
  std::vector<i64> durations;  // paired only; gold, evaluation use
  Array<float> frames;         // numel 0 for text-only
};

// ---- low-level encoding ----

namespace io {

inline void put_u32(std::string& out, u32 v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, u64 v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float v) {
  u32 bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline void put_varint(std::string& out, u64 v) {
  while (v >= 0x80) {
    out.push_back(static_cast<char>((v & 0x7F) | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<char>(v));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n, const char* what) const {
    require(pos + n <= buf.size(), std::string("corpus read: truncated ") + what +
                                       " at byte offset " + std::to_string(pos));
  }
  u32 get_u32(const char* what) {
    need(4, what);
    u32 v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<u32>(static_cast<u8>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
    pos += 4;
    return v;
  }
  u64 get_u64(const char* what) {
    need(8, what);
    u64 v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<u64>(static_cast<u8>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
    pos += 8;
    return v;
  }
  float get_f32(const char* what) {
    u32 bits = get_u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  u64 get_varint(const char* what) {
    u64 v = 0;
    int shift = 0;
    while (true) {
      need(1, what);
      u8 b = static_cast<u8>(buf[pos++]);
      v |= static_cast<u64>(b & 0x7F) << shift;
      if (!(b & 0x80)) break;
      shift += 7;
      require(shift < 64, std::string("corpus read: varint overflow in ") + what +
                              " at byte offset " + std::to_string(pos));
    }
    return v;
  }
};

}  // namespace io

inline constexpr u32 kCorpusVersion = 1;

inline void write_stream(const std::string& path, StreamKind kind, const CorpusConfig& cfg,
                         const std::vector<CorpusItem>& items) {
  i64 vocab = cfg.vocab, frame_dim = cfg.frame_dim;
  std::string out;
  out += "MSTC";
  io::put_u32(out, kCorpusVersion);
  out.push_back(static_cast<char>(kind));
  io::put_u32(out, static_cast<u32>(cfg.vocab));
  io::put_u32(out, static_cast<u32>(cfg.frame_dim));
  io::put_u64(out, cfg.seed);
  io::put_u32(out, static_cast<u32>(cfg.min_tokens));
  io::put_u32(out, static_cast<u32>(cfg.max_tokens));
  io::put_u32(out, static_cast<u32>(cfg.min_duration));
  io::put_u32(out, static_cast<u32>(cfg.max_duration));
  io::put_f32(out, static_cast<float>(cfg.noise_sigma));
  out.push_back(static_cast<char>(cfg.channel_transform ? 1 : 0));
  io::put_u32(out, static_cast<u32>(items.size()));
  for (const auto& it : items) {
    std::string payload;
    if (kind == StreamKind::text || kind == StreamKind::paired) {
      io::put_varint(payload, static_cast<u64>(it.tokens.size()));
      for (i64 t : it.tokens) io::put_varint(payload, static_cast<u64>(t));
    }
    if (kind == StreamKind::paired) {
      require(it.durations.size() == it.tokens.size(), "write_stream: durations/token mismatch");
      for (i64 d : it.durations) io::put_varint(payload, static_cast<u64>(d));
    }
    if (kind == StreamKind::speech || kind == StreamKind::paired) {
      i64 t_len = it.frames.shape[0];
      require(it.frames.rank() == 2 && it.frames.shape[1] == frame_dim,
              "write_stream: frames " + it.frames.shape_str());
      io::put_varint(payload, static_cast<u64>(t_len));
      for (float v : it.frames.data) io::put_f32(payload, v);
    }
    io::put_u32(out, static_cast<u32>(payload.size()));
    out += payload;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "write_stream: cannot open " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  require(f.good(), "write_stream: short write to " + path);
}

struct StreamData {
  StreamKind kind;
  CorpusConfig echo;  // generation settings echoed by the writer
  std::vector<CorpusItem> items;
};

inline StreamData read_stream(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "read_stream: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  std::string buf = ss.str();
  io::Reader r{buf};
  r.need(4, "magic");
  require(buf.compare(0, 4, "MSTC") == 0, "read_stream: bad magic in " + path);
  r.pos = 4;
  u32 version = r.get_u32("version");
  require(version == kCorpusVersion,
          "read_stream: unsupported version " + std::to_string(version));
  r.need(1, "kind");
  u8 kind_raw = static_cast<u8>(buf[r.pos++]);
  require(kind_raw <= 2, "read_stream: bad stream kind " + std::to_string(kind_raw));
  StreamData data;
  data.kind = static_cast<StreamKind>(kind_raw);
  data.echo.vocab = r.get_u32("vocab");
  data.echo.frame_dim = r.get_u32("frame_dim");
  data.echo.seed = r.get_u64("seed");
  data.echo.min_tokens = r.get_u32("min_tokens");
  data.echo.max_tokens = r.get_u32("max_tokens");
  data.echo.min_duration = r.get_u32("min_duration");
  data.echo.max_duration = r.get_u32("max_duration");
  data.echo.noise_sigma = r.get_f32("noise_sigma");
  r.need(1, "channel flag");
  data.echo.channel_transform = buf[r.pos++] != 0;
  u32 count = r.get_u32("count");
  data.items.reserve(count);
  for (u32 i = 0; i < count; ++i) {
    size_t len_offset = r.pos;
    u32 payload_len = r.get_u32("record length");
    require(r.pos + payload_len <= buf.size(),
            "read_stream: record " + std::to_string(i) + " length " +
                std::to_string(payload_len) + " at byte offset " + std::to_string(len_offset) +
                " runs past end of file");
    size_t payload_end = r.pos + payload_len;
    CorpusItem item;
    if (data.kind == StreamKind::text || data.kind == StreamKind::paired) {
      u64 n_tok = r.get_varint("token count");
      for (u64 t = 0; t < n_tok; ++t) {
        i64 id = static_cast<i64>(r.get_varint("token id"));
        require(id >= 1 && id <= data.echo.vocab,
                "read_stream: token id " + std::to_string(id) + " outside [1," +
                    std::to_string(data.echo.vocab) + "] at byte offset " + std::to_string(r.pos));
        item.tokens.push_back(id);
      }
      if (data.kind == StreamKind::paired)
        for (u64 t = 0; t < n_tok; ++t)
          item.durations.push_back(static_cast<i64>(r.get_varint("duration")));
    }
    if (data.kind == StreamKind::speech || data.kind == StreamKind::paired) {
      u64 t_len = r.get_varint("frame count");
      item.frames = Array<float>({static_cast<i64>(t_len), data.echo.frame_dim});
      for (size_t j = 0; j < item.frames.data.size(); ++j)
        item.frames.data[j] = r.get_f32("frame data");
    }
    require(r.pos == payload_end,
            "read_stream: record " + std::to_string(i) + " decoded " +
                std::to_string(r.pos - (len_offset + 4)) + " bytes but header said " +
                std::to_string(payload_len) + " at byte offset " + std::to_string(len_offset));
    data.items.push_back(std::move(item));
  }
  return data;
}

// ---- generation ----

// Token prototypes, row k-1 for token id k. Rejects draws until every pair
// is at least 2*sigma*sqrt(D) apart so tokens stay separable under noise.
inline Array<float> make_prototypes(const CorpusConfig& cfg, CounterRng& rng) {
  double min_dist = 2.0 * cfg.noise_sigma * std::sqrt(static_cast<double>(cfg.frame_dim));
  for (int attempt = 0; attempt < 100; ++attempt) {
    Array<float> protos({cfg.vocab, cfg.frame_dim});
    for (float& v : protos.data) v = static_cast<float>(rng.next_normal());
    bool ok = true;
    for (i64 a = 0; a < cfg.vocab && ok; ++a)
      for (i64 b = a + 1; b < cfg.vocab && ok; ++b) {
        double d2 = 0;
        for (i64 j = 0; j < cfg.frame_dim; ++j) {
          double diff = protos.at(a, j) - protos.at(b, j);
          d2 += diff * diff;
        }
        if (std::sqrt(d2) < min_dist) ok = false;
      }
    if (ok) return protos;
  }
  fail("make_prototypes: could not separate prototypes after 100 attempts");
}

namespace detail {

inline std::vector<i64> sample_tokens(const CorpusConfig& cfg, CounterRng& rng) {
  i64 u_len = rng.next_int(cfg.min_tokens, cfg.max_tokens);
  std::vector<i64> toks(static_cast<size_t>(u_len));
  for (auto& t : toks) t = rng.next_int(1, cfg.vocab);
  return toks;
}

inline std::vector<i64> sample_durations(size_t n, const CorpusConfig& cfg, CounterRng& rng) {
  std::vector<i64> durs(n);
  for (auto& d : durs) d = rng.next_int(cfg.min_duration, cfg.max_duration);
  return durs;
}

// Random orthogonal matrix: Gram-Schmidt on a Gaussian draw. Plays the
// role of per-utterance speaker/channel variation.
inline Array<double> random_orthogonal(i64 dim, CounterRng& rng) {
  Array<double> q({dim, dim});
  for (double& v : q.data) v = rng.next_normal();
  for (i64 i = 0; i < dim; ++i) {
    double* row = q.data.data() + i * dim;
    for (i64 p = 0; p < i; ++p) {
      const double* prev = q.data.data() + p * dim;
      double dot = 0;
      for (i64 j = 0; j < dim; ++j) dot += row[j] * prev[j];
      for (i64 j = 0; j < dim; ++j) row[j] -= dot * prev[j];
    }
    double norm = 0;
    for (i64 j = 0; j < dim; ++j) norm += row[j] * row[j];
    norm = std::sqrt(norm);
    require(norm > 1e-8, "random_orthogonal: degenerate draw");
    for (i64 j = 0; j < dim; ++j) row[j] /= norm;
  }
  return q;
}

// Frames for a token sequence: prototype per token, repeated for its
// duration, plus isotropic noise, then an optional per-utterance
// orthogonal channel transform.
inline Array<float> render_frames(const std::vector<i64>& tokens, const std::vector<i64>& durs,
                                  const Array<float>& protos, const CorpusConfig& cfg,
                                  CounterRng& rng) {
  i64 t_total = 0;
  for (i64 d : durs) t_total += d;
  i64 dim = cfg.frame_dim;
  Array<float> frames({t_total, dim});
  i64 t = 0;
  for (size_t u = 0; u < tokens.size(); ++u) {
    const float* proto = protos.data.data() + (tokens[u] - 1) * dim;
    for (i64 r = 0; r < durs[u]; ++r, ++t) {
      float* row = frames.data.data() + t * dim;
      for (i64 j = 0; j < dim; ++j)
        row[j] = proto[j] + static_cast<float>(cfg.noise_sigma * rng.next_normal());
    }
  }
  if (cfg.channel_transform) {
    // Child generator keyed off the stream position: the flag changes
    // nothing about token, duration, or noise draws.
    CounterRng ch_rng(CounterRng::derive_key(rng.key(), 0x4348414E00000000ull | rng.counter()));
    Array<double> q = random_orthogonal(dim, ch_rng);
    Array<float> mixed({t_total, dim});
    for (i64 r = 0; r < t_total; ++r)
      for (i64 j = 0; j < dim; ++j) {
        double acc = 0;
        for (i64 k = 0; k < dim; ++k) acc += frames.at(r, k) * q.at(k, j);
        mixed.at(r, j) = static_cast<float>(acc);
      }
    return mixed;
  }
  return frames;
}

}  // namespace detail

struct Corpus {
  CorpusConfig config;
  Array<float> prototypes;
  std::vector<CorpusItem> speech;
  std::vector<CorpusItem> text;
  std::vector<CorpusItem> paired;
  std::vector<CorpusItem> eval_paired;
  std::vector<CorpusItem> eval_text;
};

inline Corpus generate_corpus(const CorpusConfig& cfg) {
  require(cfg.vocab >= 2 && cfg.frame_dim >= 1, "generate_corpus: bad config");
  require(cfg.min_tokens >= 1 && cfg.max_tokens >= cfg.min_tokens, "generate_corpus: bad token range");
  require(cfg.min_duration >= 1 && cfg.max_duration >= cfg.min_duration,
          "generate_corpus: bad duration range");
  Corpus c;
  c.config = cfg;
  CounterRng proto_rng(CounterRng::derive_key(cfg.seed, 1));
  c.prototypes = make_prototypes(cfg, proto_rng);

  auto gen_stream = [&](u64 label, StreamKind kind, i64 n) {
    CounterRng rng(CounterRng::derive_key(cfg.seed, label));
    std::vector<CorpusItem> items;
    items.reserve(static_cast<size_t>(n));
    for (i64 i = 0; i < n; ++i) {
      CorpusItem item;
      auto toks = detail::sample_tokens(cfg, rng);
      auto durs = detail::sample_durations(toks.size(), cfg, rng);
      if (kind != StreamKind::speech) item.tokens = toks;
      if (kind == StreamKind::paired) item.durations = durs;
      if (kind != StreamKind::text)
        item.frames = detail::render_frames(toks, durs, c.prototypes, cfg, rng);
      items.push_back(std::move(item));
    }
    return items;
  };

  c.speech = gen_stream(10, StreamKind::speech, cfg.n_speech);
  c.text = gen_stream(11, StreamKind::text, cfg.n_text);
  c.paired = gen_stream(12, StreamKind::paired, cfg.n_paired);
  c.eval_paired = gen_stream(13, StreamKind::paired, cfg.n_eval_paired);
  c.eval_text = gen_stream(14, StreamKind::text, cfg.n_eval_text);
  return c;
}

// ---- on-disk corpus directory ----

inline void save_corpus(const Corpus& c, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto& cfg = c.config;
  write_stream(dir + "/speech.mstc", StreamKind::speech, cfg, c.speech);
  write_stream(dir + "/text.mstc", StreamKind::text, cfg, c.text);
  write_stream(dir + "/paired.mstc", StreamKind::paired, cfg, c.paired);
  write_stream(dir + "/eval_paired.mstc", StreamKind::paired, cfg, c.eval_paired);
  write_stream(dir + "/eval_text.mstc", StreamKind::text, cfg, c.eval_text);
  std::ofstream m(dir + "/manifest.txt", std::ios::trunc);
  require(m.good(), "save_corpus: cannot write manifest");
  m << "speech speech.mstc " << c.speech.size() << "\n";
  m << "text text.mstc " << c.text.size() << "\n";
  m << "paired paired.mstc " << c.paired.size() << "\n";
  m << "eval_paired eval_paired.mstc " << c.eval_paired.size() << "\n";
  m << "eval_text eval_text.mstc " << c.eval_text.size() << "\n";
}

struct LoadedCorpus {
  i64 vocab = 0;
  i64 frame_dim = 0;
  std::vector<CorpusItem> speech;
  std::vector<CorpusItem> text;
  std::vector<CorpusItem> paired;
  std::vector<CorpusItem> eval_paired;
  std::vector<CorpusItem> eval_text;
};

// In-memory adapter: a generated corpus viewed as loaded streams.
inline LoadedCorpus to_loaded(const Corpus& c) {
  LoadedCorpus out;
  out.vocab = c.config.vocab;
  out.frame_dim = c.config.frame_dim;
  out.speech = c.speech;
  out.text = c.text;
  out.paired = c.paired;
  out.eval_paired = c.eval_paired;
  out.eval_text = c.eval_text;
  return out;
}

inline LoadedCorpus load_corpus(const std::string& dir) {
  std::ifstream m(dir + "/manifest.txt");
  require(m.good(), "load_corpus: cannot open " + dir + "/manifest.txt");
  LoadedCorpus out;
  std::string name, file;
  i64 count;
  while (m >> name >> file >> count) {
    StreamData s = read_stream(dir + "/" + file);
    require(static_cast<i64>(s.items.size()) == count,
            "load_corpus: manifest says " + std::to_string(count) + " items for " + name +
                " but file has " + std::to_string(s.items.size()));
    if (out.vocab == 0) {
      out.vocab = s.echo.vocab;
      out.frame_dim = s.echo.frame_dim;
    } else {
      require(out.vocab == s.echo.vocab && out.frame_dim == s.echo.frame_dim,
              "load_corpus: stream " + name + " disagrees on vocab/frame_dim");
    }
    if (name == "speech") out.speech = std::move(s.items);
    else if (name == "text") out.text = std::move(s.items);
    else if (name == "paired") out.paired = std::move(s.items);
    else if (name == "eval_paired") out.eval_paired = std::move(s.items);
    else if (name == "eval_text") out.eval_text = std::move(s.items);
    else fail("load_corpus: unknown stream name " + name);
  }
  require(!out.speech.empty() && !out.text.empty() && !out.paired.empty(),
          "load_corpus: manifest missing required streams");
  return out;
}

}  // namespace maestro
