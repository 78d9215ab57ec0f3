#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "maestro/masking.hpp"
#include "maestro/ops.hpp"
#include "maestro/resample.hpp"
#include "maestro/rng.hpp"

// The parametric stacks: speech encoder, text embedding extractor, shared
// encoder, refiner, duration predictor, and the transducer decoder
// (prediction network + joint). All stacks are length-preserving; the
// shared latent space has width d_model everywhere.

namespace maestro {

struct ModelConfig {
  i64 frame_dim = 16;
  i64 d_model = 24;
  i64 n_speech_layers = 2;
  i64 n_shared_layers = 6;
  i64 n_text_conv_layers = 2;
  i64 n_text_transformer_layers = 2;
  i64 n_refiner_layers = 2;
  i64 n_duration_blocks = 2;
  i64 n_heads = 2;
  i64 decoder_hidden = 48;
  i64 joint_dim = 24;
  i64 vocab_size = 16;
  i64 d_ff = 48;
  i64 text_conv_kernel = 5;
  i64 refiner_kernel = 7;
  i64 duration_kernel = 3;
  i64 n_codes = 64;    // speech-MLM codebook entries
  i64 quant_dim = 8;   // random-projection width for MLM targets
  i64 max_len = 128;   // positional table rows; longest supported sequence
  i64 subsample_factor = 1;  // reserved; only 1 is implemented

  void validate() const {
    require(d_model > 0 && n_heads > 0 && d_model % n_heads == 0,
            "ModelConfig: d_model must be divisible by n_heads");
    require(vocab_size >= 1 && frame_dim >= 1 && joint_dim >= 1 && decoder_hidden >= 1,
            "ModelConfig: dimensions must be positive");
    require(subsample_factor == 1, "ModelConfig: subsampling is reserved, factor must be 1");
  }
};

// Named parameter store. Enumeration order is the map's key order, which
// is stable across runs; checkpoints and EMA rely on it.
template <typename T>
struct Parameters {
  std::map<std::string, Array<T>> values;   // trainable
  std::map<std::string, Array<T>> buffers;  // fixed (positions, quantizer)

  Array<T>& at(const std::string& name) {
    auto it = values.find(name);
    require(it != values.end(), "Parameters: no parameter named " + name);
    return it->second;
  }
  const Array<T>& at(const std::string& name) const {
    auto it = values.find(name);
    require(it != values.end(), "Parameters: no parameter named " + name);
    return it->second;
  }
  const Array<T>& buffer(const std::string& name) const {
    auto it = buffers.find(name);
    require(it != buffers.end(), "Parameters: no buffer named " + name);
    return it->second;
  }
  i64 count() const {
    i64 n = 0;
    for (const auto& [k, v] : values) n += v.numel();
    return n;
  }
};

// Parameters bound to a tape: trainable values as gradient leaves, buffers
// as constants. Rebuilt per step; teacher binds with grads disabled.
template <typename T>
struct Bound {
  Tape<T>* tape = nullptr;
  std::map<std::string, Var<T>> vars;
  std::map<std::string, Var<T>> bufs;

  Var<T> operator()(const std::string& name) const {
    auto it = vars.find(name);
    require(it != vars.end(), "Bound: no parameter named " + name);
    return it->second;
  }
  Var<T> buffer(const std::string& name) const {
    auto it = bufs.find(name);
    require(it != bufs.end(), "Bound: no buffer named " + name);
    return it->second;
  }
};

namespace detail {

template <typename T>
Array<T> uniform_init(std::vector<i64> shape, T bound, CounterRng& rng) {
  Array<T> a(std::move(shape));
  for (T& v : a.data) v = static_cast<T>(rng.next_uniform(-static_cast<double>(bound),
                                                          static_cast<double>(bound)));
  return a;
}

template <typename T>
Array<T> sinusoid_table(i64 rows, i64 d) {
  Array<T> p({rows, d});
  for (i64 r = 0; r < rows; ++r)
    for (i64 j = 0; j < d; ++j) {
      double angle = static_cast<double>(r) /
                     std::pow(10000.0, static_cast<double>(2 * (j / 2)) / static_cast<double>(d));
      p.at(r, j) = static_cast<T>((j % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  return p;
}

}  // namespace detail

template <typename T>
class Model {
 public:
  ModelConfig cfg;
  Parameters<T> params;

  explicit Model(ModelConfig config, u64 seed = 1) : cfg(config) {
    cfg.validate();
    CounterRng rng(CounterRng::derive_key(seed, 0xB0D));
    auto lin = [&](const std::string& prefix, i64 in, i64 out) {
      params.values[prefix + ".w"] =
          detail::uniform_init<T>({in, out}, static_cast<T>(std::sqrt(3.0 / in)), rng);
      params.values[prefix + ".b"] = Array<T>({out});
    };
    auto norm = [&](const std::string& prefix, i64 d) {
      Array<T> g({d});
      for (T& v : g.data) v = T(1);
      params.values[prefix + ".g"] = std::move(g);
      params.values[prefix + ".b"] = Array<T>({d});
    };
    auto attention_stack = [&](const std::string& name, i64 layers) {
      i64 d = cfg.d_model, dh = cfg.d_model / cfg.n_heads;
      for (i64 l = 0; l < layers; ++l) {
        std::string p = name + ".l" + std::to_string(l);
        norm(p + ".ln1", d);
        for (i64 h = 0; h < cfg.n_heads; ++h) {
          std::string hp = p + ".h" + std::to_string(h);
          T bound = static_cast<T>(std::sqrt(3.0 / d));
          params.values[hp + ".wq"] = detail::uniform_init<T>({d, dh}, bound, rng);
          params.values[hp + ".wk"] = detail::uniform_init<T>({d, dh}, bound, rng);
          params.values[hp + ".wv"] = detail::uniform_init<T>({d, dh}, bound, rng);
        }
        lin(p + ".wo", d, d);
        norm(p + ".ln2", d);
        lin(p + ".ff1", d, cfg.d_ff);
        lin(p + ".ff2", cfg.d_ff, d);
      }
      norm(name + ".final_ln", d);
    };
    auto conv_stack = [&](const std::string& name, i64 layers, i64 kernel) {
      i64 d = cfg.d_model;
      for (i64 l = 0; l < layers; ++l) {
        std::string p = name + ".l" + std::to_string(l);
        norm(p + ".ln", d);
        params.values[p + ".w"] = detail::uniform_init<T>(
            {kernel, d, d}, static_cast<T>(std::sqrt(3.0 / (kernel * d))), rng);
        params.values[p + ".b"] = Array<T>({d});
      }
    };

    lin("input_proj", cfg.frame_dim, cfg.d_model);
    attention_stack("speech", cfg.n_speech_layers);
    attention_stack("shared", cfg.n_shared_layers);

    params.values["text.emb"] =
        detail::uniform_init<T>({cfg.vocab_size + 1, cfg.d_model},
                                static_cast<T>(std::sqrt(3.0)), rng);
    conv_stack("text.conv", cfg.n_text_conv_layers, cfg.text_conv_kernel);
    attention_stack("text.tr", cfg.n_text_transformer_layers);

    // Refiner: depthwise kernels start at zero so softmax gives a uniform
    // moving average; pointwise map starts near identity scale.
    for (i64 l = 0; l < cfg.n_refiner_layers; ++l) {
      std::string p = "refiner.l" + std::to_string(l);
      norm(p + ".ln", cfg.d_model);
      params.values[p + ".dw"] = Array<T>({cfg.d_model, cfg.refiner_kernel});
      lin(p + ".pw", cfg.d_model, cfg.d_model);
    }

    conv_stack("dur", cfg.n_duration_blocks, cfg.duration_kernel);
    lin("dur.out", cfg.d_model, 1);

    params.values["dec.emb"] =
        detail::uniform_init<T>({cfg.vocab_size + 1, cfg.decoder_hidden},
                                static_cast<T>(std::sqrt(3.0)), rng);
    lin("dec.x", cfg.decoder_hidden, cfg.decoder_hidden);
    params.values["dec.h.w"] = detail::uniform_init<T>(
        {cfg.decoder_hidden, cfg.decoder_hidden},
        static_cast<T>(std::sqrt(3.0 / cfg.decoder_hidden)), rng);
    lin("joint.enc", cfg.d_model, cfg.joint_dim);
    lin("joint.pred", cfg.decoder_hidden, cfg.joint_dim);
    lin("joint.out", cfg.joint_dim, cfg.vocab_size + 1);

    lin("mlm", cfg.d_model, cfg.n_codes);
    lin("contrast", cfg.d_model, cfg.d_model);

    params.buffers["pos.sin"] = detail::sinusoid_table<T>(cfg.max_len, cfg.d_model);
    Array<T> qproj({cfg.d_model, cfg.quant_dim});
    for (T& v : qproj.data)
      v = static_cast<T>(rng.next_normal() / std::sqrt(static_cast<double>(cfg.d_model)));
    params.buffers["quant.proj"] = std::move(qproj);
    Array<T> codes({cfg.n_codes, cfg.quant_dim});
    for (T& v : codes.data) v = static_cast<T>(rng.next_normal());
    params.buffers["quant.codes"] = std::move(codes);
  }

  Bound<T> bind(Tape<T>& tape, bool requires_grad) const {
    Bound<T> b;
    b.tape = &tape;
    for (const auto& [name, value] : params.values)
      b.vars.emplace(name, tape.leaf(value, requires_grad));
    for (const auto& [name, value] : params.buffers) b.bufs.emplace(name, tape.constant(value));
    return b;
  }

  // ---- building blocks ----

  Var<T> linear(const Bound<T>& b, const std::string& prefix, Var<T> x) const {
    return add_row(matmul(x, b(prefix + ".w")), b(prefix + ".b"));
  }

  Var<T> attention_block(const Bound<T>& b, const std::string& p, Var<T> x) const {
    i64 dh = cfg.d_model / cfg.n_heads;
    Var<T> h = layer_norm(x, b(p + ".ln1.g"), b(p + ".ln1.b"));
    std::vector<Var<T>> heads;
    for (i64 i = 0; i < cfg.n_heads; ++i) {
      std::string hp = p + ".h" + std::to_string(i);
      Var<T> q = matmul(h, b(hp + ".wq"));
      Var<T> k = matmul(h, b(hp + ".wk"));
      Var<T> v = matmul(h, b(hp + ".wv"));
      Var<T> scores = scale(matmul(q, transpose(k)), static_cast<T>(1.0 / std::sqrt(double(dh))));
      heads.push_back(matmul(softmax(scores), v));
    }
    x = add(x, linear(b, p + ".wo", concat_cols(heads)));
    Var<T> h2 = layer_norm(x, b(p + ".ln2.g"), b(p + ".ln2.b"));
    return add(x, linear(b, p + ".ff2", relu(linear(b, p + ".ff1", h2))));
  }

  Var<T> attention_stack(const Bound<T>& b, const std::string& name, Var<T> x,
                         i64 layers) const {
    i64 len = x.value().rows();
    require(len >= 1, name + ": zero-length input");
    require(len <= cfg.max_len, name + ": length " + std::to_string(len) +
                                    " exceeds max_len " + std::to_string(cfg.max_len));
    x = add(x, slice_rows(b.buffer("pos.sin"), 0, len));
    for (i64 l = 0; l < layers; ++l) x = attention_block(b, name + ".l" + std::to_string(l), x);
    return layer_norm(x, b(name + ".final_ln.g"), b(name + ".final_ln.b"));
  }

  Var<T> conv_block(const Bound<T>& b, const std::string& p, Var<T> x, i64 kernel) const {
    Var<T> h = layer_norm(x, b(p + ".ln.g"), b(p + ".ln.b"));
    return add(x, relu(add_row(conv1d(h, b(p + ".w"), kernel), b(p + ".b"))));
  }

  Var<T> lightconv_block(const Bound<T>& b, const std::string& p, Var<T> x) const {
    Var<T> h = layer_norm(x, b(p + ".ln.g"), b(p + ".ln.b"));
    Var<T> c = depthwise_conv1d(h, softmax(b(p + ".dw")));
    return add(x, linear(b, p + ".pw", c));
  }

  // ---- stacks ----

  Var<T> input_latents(const Bound<T>& b, Var<T> frames) const {
    require(frames.value().rank() == 2 && frames.value().shape[1] == cfg.frame_dim,
            "input_latents: frames " + frames.value().shape_str());
    require(frames.value().rows() >= 1, "input_latents: zero-length input");
    return linear(b, "input_proj", frames);
  }

  Var<T> speech_encode_latents(const Bound<T>& b, Var<T> latents) const {
    return attention_stack(b, "speech", latents, cfg.n_speech_layers);
  }

  Var<T> speech_encode(const Bound<T>& b, Var<T> frames) const {
    return speech_encode_latents(b, input_latents(b, frames));
  }

  Var<T> shared_encode(const Bound<T>& b, Var<T> x) const {
    return attention_stack(b, "shared", x, cfg.n_shared_layers);
  }

  Var<T> text_embed(const Bound<T>& b, const std::vector<i64>& tokens) const {
    require(!tokens.empty(), "text_embed: empty token sequence");
    for (i64 t : tokens)
      require(t >= 1 && t <= cfg.vocab_size,
              "text_embed: token id " + std::to_string(t) + " outside [1," +
                  std::to_string(cfg.vocab_size) + "]");
    Var<T> x = gather(b("text.emb"), tokens);
    for (i64 l = 0; l < cfg.n_text_conv_layers; ++l)
      x = conv_block(b, "text.conv.l" + std::to_string(l), x, cfg.text_conv_kernel);
    return attention_stack(b, "text.tr", x, cfg.n_text_transformer_layers);
  }

  Var<T> refine(const Bound<T>& b, Var<T> x) const {
    require(x.value().rows() >= 1, "refine: zero-length input");
    for (i64 l = 0; l < cfg.n_refiner_layers; ++l)
      x = lightconv_block(b, "refiner.l" + std::to_string(l), x);
    return x;
  }

  // Log-domain duration predictions, one per token row.
  Var<T> duration_log(const Bound<T>& b, Var<T> e_t) const {
    Var<T> x = e_t;
    for (i64 l = 0; l < cfg.n_duration_blocks; ++l)
      x = conv_block(b, "dur.l" + std::to_string(l), x, cfg.duration_kernel);
    return linear(b, "dur.out", x);
  }

  // exp of the log-domain head: strictly positive frame counts.
  std::vector<T> predict_durations(const Bound<T>& b, Var<T> e_t) const {
    Var<T> lg = duration_log(b, e_t);
    std::vector<T> out(lg.value().data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(lg.value().data[i]);
    return out;
  }

  // Prediction-network states h_0..h_U; h_0 encodes the start symbol
  // (blank id 0), h_u has consumed tokens[0..u).
  Var<T> decoder_states(const Bound<T>& b, const std::vector<i64>& tokens) const {
    for (i64 t : tokens)
      require(t >= 1 && t <= cfg.vocab_size,
              "decoder_states: token id " + std::to_string(t) + " outside [1," +
                  std::to_string(cfg.vocab_size) + "]");
    std::vector<i64> inputs = {0};
    inputs.insert(inputs.end(), tokens.begin(), tokens.end());
    Var<T> emb = gather(b("dec.emb"), inputs);
    Var<T> h = b.tape->constant(Array<T>({1, cfg.decoder_hidden}));
    std::vector<Var<T>> states;
    for (size_t i = 0; i < inputs.size(); ++i) {
      Var<T> x = slice_rows(emb, static_cast<i64>(i), static_cast<i64>(i) + 1);
      h = tanh_op(add(linear(b, "dec.x", x), matmul(h, b("dec.h.w"))));
      states.push_back(h);
    }
    return concat_rows(states);
  }

  // Normalized log-prob lattice (T*(U+1)) x (V+1) from encoder rows and
  // prediction states.
  Var<T> joint_lattice(const Bound<T>& b, Var<T> enc, Var<T> pred) const {
    i64 t_len = enc.value().rows();
    i64 u_plus_1 = pred.value().rows();
    Var<T> ep = linear(b, "joint.enc", enc);
    Var<T> pp = linear(b, "joint.pred", pred);
    std::vector<i64> rep_t, tile_u;
    rep_t.reserve(static_cast<size_t>(t_len * u_plus_1));
    tile_u.reserve(static_cast<size_t>(t_len * u_plus_1));
    for (i64 t = 0; t < t_len; ++t)
      for (i64 u = 0; u < u_plus_1; ++u) {
        rep_t.push_back(t);
        tile_u.push_back(u);
      }
    Var<T> z = tanh_op(add(gather(ep, rep_t), gather(pp, tile_u)));
    return log_softmax(linear(b, "joint.out", z));
  }

  // ---- speech-only target machinery (no gradients) ----

  // Codebook id per latent row: nearest code after random projection.
  std::vector<i64> quantize_latents(const Array<T>& latents) const {
    const Array<T>& proj = params.buffer("quant.proj");
    const Array<T>& codes = params.buffer("quant.codes");
    i64 m = latents.rows();
    Array<T> z({m, cfg.quant_dim});
    matmul_acc(latents.data.data(), proj.data.data(), z.data.data(), m, cfg.d_model,
               cfg.quant_dim);
    std::vector<i64> ids(static_cast<size_t>(m));
    for (i64 r = 0; r < m; ++r) {
      T best = std::numeric_limits<T>::max();
      i64 best_k = 0;
      for (i64 k = 0; k < cfg.n_codes; ++k) {
        T d2 = T(0);
        for (i64 j = 0; j < cfg.quant_dim; ++j) {
          T diff = z.at(r, j) - codes.at(k, j);
          d2 += diff * diff;
        }
        if (d2 < best) {
          best = d2;
          best_k = k;
        }
      }
      ids[static_cast<size_t>(r)] = best_k;
    }
    return ids;
  }

  Var<T> mlm_logits(const Bound<T>& b, Var<T> x) const { return linear(b, "mlm", x); }

  Var<T> contrast_project(const Bound<T>& b, Var<T> x) const { return linear(b, "contrast", x); }
};

}  // namespace maestro
