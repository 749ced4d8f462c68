#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "actc/io.hpp"
#include "actc/rng.hpp"
#include "actc/tensor.hpp"

namespace actc {

// Token ids: 0 = blank, 1 = <sos>, 2 = <eos>, real tokens from 3 up.
// Blank never appears in transcripts.
struct Vocab {
  std::size_t size = 0;

  static constexpr std::size_t kBlank = 0;
  static constexpr std::size_t kSos = 1;
  static constexpr std::size_t kEos = 2;
  static constexpr std::size_t kFirstReal = 3;

  explicit Vocab(std::size_t real_tokens = 0) : size(real_tokens + kFirstReal) {}

  std::size_t real_tokens() const { return size - kFirstReal; }

  std::string name(std::size_t id) const {
    if (id == kBlank) return "<eps>";
    if (id == kSos) return "<sos>";
    if (id == kEos) return "<eos>";
    return "t" + std::to_string(id);
  }
};

struct Utterance {
  std::string id;
  Tensor features;                  // T×F
  std::vector<std::size_t> tokens;  // real tokens only
};

struct Dataset {
  Vocab vocab;
  std::size_t feature_dim = 0;
  std::vector<Utterance> utterances;
};

struct SyntheticTaskConfig {
  std::size_t real_tokens = 12;
  std::size_t utterance_count = 200;
  std::size_t min_tokens = 3;
  std::size_t max_tokens = 8;
  std::size_t min_frames_per_token = 2;  // >= 2 keeps repeats CTC-feasible
  std::size_t max_frames_per_token = 5;
  double noise_std = 0.1;
  std::size_t feature_dim = 16;
  std::uint64_t seed = 0;

  void validate() const {
    if (real_tokens == 0 || utterance_count == 0 || feature_dim == 0)
      throw std::invalid_argument("SyntheticTaskConfig: zero-sized field");
    if (min_tokens == 0 || min_tokens > max_tokens)
      throw std::invalid_argument("SyntheticTaskConfig: bad token range");
    if (min_frames_per_token < 2 ||
        min_frames_per_token > max_frames_per_token)
      throw std::invalid_argument("SyntheticTaskConfig: bad frame range");
    if (noise_std < 0.0)
      throw std::invalid_argument("SyntheticTaskConfig: negative noise");
  }
};

// Each real token gets a fixed random prototype vector; utterances emit
// each token's prototype for a random number of frames plus noise.
inline Dataset generate_synthetic(const SyntheticTaskConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.vocab = Vocab(cfg.real_tokens);
  ds.feature_dim = cfg.feature_dim;

  SeededRng proto_rng = SeededRng(cfg.seed).split(kStreamInit);
  std::vector<std::vector<double>> prototypes(cfg.real_tokens);
  for (auto& p : prototypes) {
    p.resize(cfg.feature_dim);
    for (double& v : p) v = proto_rng.normal();
  }

  SeededRng rng = SeededRng(cfg.seed).split(kStreamData);
  for (std::size_t u = 0; u < cfg.utterance_count; ++u) {
    Utterance utt;
    utt.id = "utt" + std::to_string(u);
    std::size_t len = rng.uniform_int(cfg.min_tokens, cfg.max_tokens);
    std::vector<std::vector<double>> frames;
    for (std::size_t k = 0; k < len; ++k) {
      std::size_t tok = rng.uniform_int(0, cfg.real_tokens - 1);
      utt.tokens.push_back(Vocab::kFirstReal + tok);
      std::size_t reps =
          rng.uniform_int(cfg.min_frames_per_token, cfg.max_frames_per_token);
      for (std::size_t r = 0; r < reps; ++r) {
        std::vector<double> f = prototypes[tok];
        if (cfg.noise_std > 0.0)
          for (double& v : f) v += rng.normal(0.0, cfg.noise_std);
        frames.push_back(std::move(f));
      }
    }
    utt.features = Tensor::matrix(frames.size(), cfg.feature_dim);
    for (std::size_t t = 0; t < frames.size(); ++t)
      for (std::size_t j = 0; j < cfg.feature_dim; ++j)
        utt.features(t, j) = frames[t][j];
    ds.utterances.push_back(std::move(utt));
  }
  return ds;
}

// Cut an utterance into per-token frame segments. Boundaries are detected
// where adjacent frames jump by more than `threshold` (squared distance);
// runs of equal adjacent tokens share one detected segment and get split
// evenly. Returns an empty vector when the detected boundaries do not line
// up with the transcript.
inline std::vector<Tensor> token_segments(const Utterance& u,
                                          double threshold = 4.0) {
  if (u.tokens.empty() || u.features.rows() == 0) return {};
  std::vector<std::size_t> cuts = {0};
  for (std::size_t t = 1; t < u.features.rows(); ++t) {
    double d2 = 0.0;
    for (std::size_t j = 0; j < u.features.cols(); ++j) {
      double d = u.features(t, j) - u.features(t - 1, j);
      d2 += d * d;
    }
    if (d2 > threshold) cuts.push_back(t);
  }
  cuts.push_back(u.features.rows());

  std::vector<std::pair<std::size_t, std::size_t>> runs;  // token, length
  for (std::size_t tok : u.tokens)
    if (!runs.empty() && runs.back().first == tok)
      runs.back().second++;
    else
      runs.push_back({tok, 1});
  if (runs.size() + 1 != cuts.size()) return {};

  std::vector<Tensor> segs;
  for (std::size_t s = 0; s < runs.size(); ++s) {
    std::size_t lo = cuts[s], hi = cuts[s + 1], r = runs[s].second;
    if (hi - lo < r) return {};
    for (std::size_t part = 0; part < r; ++part) {
      std::size_t a = lo + (hi - lo) * part / r;
      std::size_t b = lo + (hi - lo) * (part + 1) / r;
      Tensor seg = Tensor::matrix(b - a, u.features.cols());
      std::copy(u.features.data.begin() + a * u.features.cols(),
                u.features.data.begin() + b * u.features.cols(),
                seg.data.begin());
      segs.push_back(std::move(seg));
    }
  }
  return segs;
}

// Synthesize novel utterances by recombining per-token segments harvested
// from `base`. Transcripts are fresh uniform samples, so the augmented set
// breaks transcript memorization while reusing only observed acoustics.
inline std::vector<Utterance> splice_utterances(const Dataset& base,
                                                std::size_t count,
                                                SeededRng& rng,
                                                std::size_t min_tokens = 3,
                                                std::size_t max_tokens = 8,
                                                double threshold = 4.0) {
  std::map<std::size_t, std::vector<Tensor>> pool;
  for (const Utterance& u : base.utterances) {
    std::vector<Tensor> segs = token_segments(u, threshold);
    for (std::size_t i = 0; i < segs.size(); ++i)
      pool[u.tokens[i]].push_back(std::move(segs[i]));
  }
  std::vector<std::size_t> toks;
  for (auto& [tok, segs] : pool) toks.push_back(tok);
  std::vector<Utterance> out;
  if (toks.empty()) return out;
  for (std::size_t i = 0; i < count; ++i) {
    Utterance u;
    u.id = "splice" + std::to_string(i);
    std::size_t n = rng.uniform_int(min_tokens, max_tokens);
    std::vector<const Tensor*> parts;
    std::size_t frames = 0;
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t tok = toks[rng.uniform_int(0, toks.size() - 1)];
      const auto& segs = pool[tok];
      const Tensor& seg = segs[rng.uniform_int(0, segs.size() - 1)];
      u.tokens.push_back(tok);
      parts.push_back(&seg);
      frames += seg.rows();
    }
    u.features = Tensor::matrix(frames, base.feature_dim);
    std::size_t off = 0;
    for (const Tensor* p : parts) {
      std::copy(p->data.begin(), p->data.end(), u.features.data.begin() + off);
      off += p->data.size();
    }
    out.push_back(std::move(u));
  }
  return out;
}

// Dataset container: magic "ACPD", version, manifest, then utterances.
inline void write_dataset(const Dataset& ds, const std::string& path) {
  io::Writer w(path);
  w.bytes("ACPD", 4);
  w.u32(1);
  std::string manifest = "vocab_size=" + std::to_string(ds.vocab.size) +
                         "\nfeature_dim=" + std::to_string(ds.feature_dim) +
                         "\nutterance_count=" +
                         std::to_string(ds.utterances.size()) + "\n";
  w.str(manifest);
  for (const Utterance& u : ds.utterances) {
    w.str(u.id);
    w.u32(static_cast<std::uint32_t>(u.tokens.size()));
    for (std::size_t tok : u.tokens) w.u32(static_cast<std::uint32_t>(tok));
    w.u32(static_cast<std::uint32_t>(u.features.rows()));
    w.u32(static_cast<std::uint32_t>(u.features.cols()));
    for (double v : u.features.data) w.f32(static_cast<float>(v));
  }
  w.close();
}

inline Dataset read_dataset(const std::string& path) {
  io::Reader r(path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::string(magic, 4) != "ACPD")
    throw ParseError("bad dataset magic", 0);
  std::uint32_t version = r.u32("version");
  if (version != 1)
    throw ParseError("unsupported dataset version " + std::to_string(version),
                     4);
  Dataset ds;
  std::size_t count = 0;
  for (auto& [k, v] : io::parse_kv(r.str("manifest"))) {
    if (k == "vocab_size") ds.vocab.size = std::stoul(v);
    else if (k == "feature_dim") ds.feature_dim = std::stoul(v);
    else if (k == "utterance_count") count = std::stoul(v);
  }
  if (ds.vocab.size < Vocab::kFirstReal)
    throw ParseError("manifest vocab_size too small", r.offset());
  for (std::size_t u = 0; u < count; ++u) {
    Utterance utt;
    utt.id = r.str("utterance id");
    std::uint32_t ntok = r.u32("token count");
    for (std::uint32_t i = 0; i < ntok; ++i) {
      std::uint32_t tok = r.u32("token id");
      if (tok >= ds.vocab.size || tok < Vocab::kFirstReal)
        throw ParseError("token id out of range", r.offset() - 4);
      utt.tokens.push_back(tok);
    }
    std::uint32_t T = r.u32("frame count");
    std::uint32_t F = r.u32("feature dim");
    if (F != ds.feature_dim)
      throw ParseError("utterance feature dim disagrees with manifest",
                       r.offset() - 4);
    utt.features = Tensor::matrix(T, F);
    for (double& v : utt.features.data) v = r.f32("feature value");
    ds.utterances.push_back(std::move(utt));
  }
  return ds;
}

// Edit distance with unit costs.
inline std::size_t edit_distance(const std::vector<std::size_t>& a,
                                 const std::vector<std::size_t>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double token_error_rate(const std::vector<std::size_t>& hyp,
                               const std::vector<std::size_t>& ref) {
  return static_cast<double>(edit_distance(hyp, ref)) /
         static_cast<double>(std::max<std::size_t>(1, ref.size()));
}

}  // namespace actc
