#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "actc/autodiff.hpp"
#include "actc/rng.hpp"
#include "actc/tensor.hpp"

namespace actc {

struct ModelConfig {
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t heads = 4;
  std::size_t d_model = 32;
  std::size_t d_ff = 64;
  std::size_t vocab_size = 16;  // includes blank, sos, eos
  std::size_t feature_dim = 16;
  std::size_t downsample = 1;  // keep every k-th encoder input frame
  std::size_t max_frames = 512;
  std::size_t max_tokens = 64;

  void validate() const {
    if (d_model == 0 || heads == 0 || d_model % heads != 0)
      throw std::invalid_argument("ModelConfig: d_model must divide by heads");
    if (vocab_size < 2)
      throw std::invalid_argument("ModelConfig: vocab_size must be >= 2");
    if (downsample == 0)
      throw std::invalid_argument("ModelConfig: downsample must be >= 1");
  }
};

struct EncoderOutput {
  Tensor h;  // T×D
};

// Source-target attention weights for every (decoder layer, head); each
// entry is L_out×T and rows sum to one.
struct AttentionRecord {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::vector<Tensor> weights;  // layer-major

  const Tensor& at(std::size_t layer, std::size_t head) const {
    return weights.at(layer * heads + head);
  }
};

struct ForwardOutput {
  Tensor decoder_logits;  // L_out×C
  AttentionRecord attention;
  EncoderOutput encoder_out;
};

namespace detail {

inline Tensor sinusoidal_positions(std::size_t len, std::size_t d) {
  Tensor pe = Tensor::matrix(len, d);
  for (std::size_t pos = 0; pos < len; ++pos)
    for (std::size_t i = 0; i < d; ++i) {
      double angle = static_cast<double>(pos) /
                     std::pow(10000.0, 2.0 * static_cast<double>(i / 2) /
                                           static_cast<double>(d));
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

}  // namespace detail

// Pre-norm transformer encoder-decoder at desk scale. Every forward pass
// retains all source-target attention weights.
class Model {
public:
  ModelConfig cfg;
  std::map<std::string, Parameter> params;  // sorted: deterministic iteration

  Model(ModelConfig config, SeededRng init_rng) : cfg(config) {
    cfg.validate();
    std::size_t D = cfg.d_model;
    add_linear("enc.in_proj", cfg.feature_dim, D, init_rng);
    for (std::size_t l = 0; l < cfg.enc_layers; ++l) {
      std::string p = "enc." + std::to_string(l) + ".";
      add_ln(p + "ln1", D);
      add_attn(p + "attn", D, init_rng);
      add_ln(p + "ln2", D);
      add_linear(p + "ff.1", D, cfg.d_ff, init_rng);
      add_linear(p + "ff.2", cfg.d_ff, D, init_rng);
    }
    add_ln("enc.final_ln", D);
    add_matrix("dec.embed", cfg.vocab_size, D, init_rng);
    for (std::size_t l = 0; l < cfg.dec_layers; ++l) {
      std::string p = "dec." + std::to_string(l) + ".";
      add_ln(p + "ln1", D);
      add_attn(p + "self", D, init_rng);
      add_ln(p + "ln2", D);
      add_attn(p + "src", D, init_rng);
      add_ln(p + "ln3", D);
      add_linear(p + "ff.1", D, cfg.d_ff, init_rng);
      add_linear(p + "ff.2", cfg.d_ff, D, init_rng);
    }
    add_ln("dec.final_ln", D);
    add_linear("dec.out_proj", D, cfg.vocab_size, init_rng);
  }

  Parameter& param(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end())
      throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
  }

  // -- graph construction -------------------------------------------------

  Value build_encoder(Tape& t, const Tensor& features) {
    if (features.rank() != 2 || features.rows() == 0)
      throw std::invalid_argument("encode: empty or non-matrix input");
    if (features.cols() != cfg.feature_dim)
      throw std::invalid_argument("encode: feature width mismatch");
    Tensor in = features;
    if (cfg.downsample > 1) {
      Tensor kept = Tensor::matrix(
          (features.rows() + cfg.downsample - 1) / cfg.downsample,
          features.cols());
      for (std::size_t i = 0; i < kept.rows(); ++i)
        for (std::size_t j = 0; j < kept.cols(); ++j)
          kept(i, j) = features(i * cfg.downsample, j);
      in = std::move(kept);
    }
    Value x = linear(t, "enc.in_proj", t.constant(in));
    x = t.add(x, t.constant(detail::sinusoidal_positions(t.val(x).rows(),
                                                         cfg.d_model)));
    for (std::size_t l = 0; l < cfg.enc_layers; ++l) {
      std::string p = "enc." + std::to_string(l) + ".";
      Value n1 = ln(t, p + "ln1", x);
      Value a = attention(t, p + "attn", n1, n1, n1, false, nullptr);
      x = t.add(x, a);
      x = t.add(x, feed_forward(t, p + "ff", ln(t, p + "ln2", x)));
    }
    return ln(t, "enc.final_ln", x);
  }

  // shifted_targets must start with <sos>. st_weights (if given) receives
  // the source-target softmax weights per (layer, head), each L_out×T.
  Value build_decoder(Tape& t, Value encoder_out,
                      const std::vector<std::size_t>& shifted_targets,
                      std::vector<Value>* st_weights = nullptr) {
    if (shifted_targets.empty())
      throw std::invalid_argument("decode: empty target prefix");
    if (shifted_targets.size() > cfg.max_tokens)
      throw std::invalid_argument("decode: target length exceeds max_tokens");
    Value x = t.scale(
        t.gather_rows(t.leaf(param("dec.embed"), kGradFromAttention),
                      shifted_targets),
        std::sqrt(static_cast<double>(cfg.d_model)));
    x = t.add(x, t.constant(detail::sinusoidal_positions(
                     shifted_targets.size(), cfg.d_model)));
    for (std::size_t l = 0; l < cfg.dec_layers; ++l) {
      std::string p = "dec." + std::to_string(l) + ".";
      Value n1 = ln(t, p + "ln1", x);
      Value a = attention(t, p + "self", n1, n1, n1, true, nullptr);
      x = t.add(x, a);
      Value c = attention(t, p + "src", ln(t, p + "ln2", x), encoder_out,
                          encoder_out, false, st_weights);
      x = t.add(x, c);
      x = t.add(x, feed_forward(t, p + "ff", ln(t, p + "ln3", x)));
    }
    return linear(t, "dec.out_proj", ln(t, "dec.final_ln", x));
  }

  // -- plain (tensor-in, tensor-out) API ----------------------------------

  EncoderOutput encode(const Tensor& features) {
    Tape t;
    return EncoderOutput{t.val(build_encoder(t, features))};
  }

  ForwardOutput decode_teacher_forced(
      const Tensor& features, const std::vector<std::size_t>& shifted_targets) {
    Tape t;
    Value enc = build_encoder(t, features);
    std::vector<Value> w;
    Value logits = build_decoder(t, enc, shifted_targets, &w);
    ForwardOutput out;
    out.decoder_logits = t.val(logits);
    out.encoder_out.h = t.val(enc);
    out.attention.layers = cfg.dec_layers;
    out.attention.heads = cfg.heads;
    for (Value v : w) out.attention.weights.push_back(t.val(v));
    return out;
  }

  std::vector<std::size_t> decode_greedy(const Tensor& features,
                                         std::size_t max_len, std::size_t sos,
                                         std::size_t eos) {
    if (max_len == 0) throw std::invalid_argument("decode_greedy: max_len 0");
    Tape t;
    Value enc = build_encoder(t, features);
    std::vector<std::size_t> prefix = {sos};
    std::vector<std::size_t> out;
    for (std::size_t step = 0; step < max_len; ++step) {
      Value logits = build_decoder(t, enc, prefix);
      const Tensor& L = t.val(logits);
      std::size_t last = L.rows() - 1, best = 0;
      for (std::size_t c = 1; c < L.cols(); ++c)
        if (L(last, c) > L(last, best)) best = c;
      if (best == eos) break;
      out.push_back(best);
      prefix.push_back(best);
    }
    return out;
  }

private:
  void add_matrix(const std::string& name, std::size_t r, std::size_t c,
                  SeededRng& rng) {
    Parameter p(Tensor::matrix(r, c));
    double s = 1.0 / std::sqrt(static_cast<double>(c));
    for (double& v : p.value.data) v = rng.normal(0.0, s);
    params.emplace(name, std::move(p));
  }
  void add_linear(const std::string& name, std::size_t in, std::size_t out,
                  SeededRng& rng) {
    Parameter w(Tensor::matrix(in, out));
    double s = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : w.value.data) v = rng.normal(0.0, s);
    params.emplace(name + ".w", std::move(w));
    params.emplace(name + ".b", Parameter(Tensor::vec(out)));
  }
  void add_ln(const std::string& name, std::size_t d) {
    params.emplace(name + ".g", Parameter(Tensor::vec(d, 1.0)));
    params.emplace(name + ".b", Parameter(Tensor::vec(d)));
  }
  void add_attn(const std::string& name, std::size_t d, SeededRng& rng) {
    for (const char* part : {".wq", ".wk", ".wv", ".wo"}) {
      Parameter p(Tensor::matrix(d, d));
      double s = 1.0 / std::sqrt(static_cast<double>(d));
      for (double& v : p.value.data) v = rng.normal(0.0, s);
      params.emplace(name + part, std::move(p));
    }
  }

  Value linear(Tape& t, const std::string& name, Value x) {
    return t.add_rowwise(
        t.matmul(x, t.leaf(param(name + ".w"), kGradFromAttention)),
        t.leaf(param(name + ".b"), kGradFromAttention));
  }
  Value ln(Tape& t, const std::string& name, Value x) {
    return t.layer_norm_rows(x, t.leaf(param(name + ".g"), kGradFromAttention),
                             t.leaf(param(name + ".b"), kGradFromAttention),
                             1e-6);
  }
  Value feed_forward(Tape& t, const std::string& name, Value x) {
    return linear(t, name + ".2", t.tanh_(linear(t, name + ".1", x)));
  }

  Value attention(Tape& t, const std::string& name, Value q_in, Value k_in,
                  Value v_in, bool causal, std::vector<Value>* weights_out) {
    std::size_t dk = cfg.d_model / cfg.heads;
    Value q = t.matmul(q_in, t.leaf(param(name + ".wq"), kGradFromAttention));
    Value k = t.matmul(k_in, t.leaf(param(name + ".wk"), kGradFromAttention));
    Value v = t.matmul(v_in, t.leaf(param(name + ".wv"), kGradFromAttention));
    std::vector<Value> heads;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      Value qh = t.slice_cols(q, h * dk, (h + 1) * dk);
      Value kh = t.slice_cols(k, h * dk, (h + 1) * dk);
      Value vh = t.slice_cols(v, h * dk, (h + 1) * dk);
      Value scores =
          t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(double(dk)));
      Value w = t.softmax_rows(scores, causal);
      if (weights_out) weights_out->push_back(w);
      heads.push_back(t.matmul(w, vh));
    }
    return t.matmul(t.concat_cols(heads),
                    t.leaf(param(name + ".wo"), kGradFromAttention));
  }
};

}  // namespace actc
