#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "actc/ctc.hpp"
#include "actc/data.hpp"
#include "actc/io.hpp"
#include "actc/model.hpp"
#include "actc/regularizer.hpp"
#include "actc/tensor.hpp"

namespace actc {

struct TrainConfig {
  double alpha = 0.3;   // CTC/attention interpolation weight
  double lambda = 0.0;  // attention regularization weight
  std::size_t epochs = 100;
  std::size_t batch_size = 8;
  double peak_lr = 2e-3;
  std::size_t warmup_steps = 200;
  // Probability of replacing a teacher-forcing input token with a random
  // real token. Targets are untouched; this discourages the decoder from
  // leaning on transcript memorization instead of the encoder.
  double input_dropout = 0.0;
  // Number of spliced utterances (recombined per-token segments of the
  // training data) appended for training only. Breaks transcript
  // memorization on small synthetic sets; see splice_utterances.
  std::size_t splice_augment = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (alpha < 0.0 || alpha > 1.0)
      throw std::invalid_argument("TrainConfig: alpha outside [0,1]");
    if (lambda < 0.0) throw std::invalid_argument("TrainConfig: lambda < 0");
    if (epochs == 0 || batch_size == 0)
      throw std::invalid_argument("TrainConfig: zero epochs or batch size");
    if (peak_lr <= 0.0) throw std::invalid_argument("TrainConfig: bad lr");
    if (input_dropout < 0.0 || input_dropout >= 1.0)
      throw std::invalid_argument("TrainConfig: input_dropout outside [0,1)");
  }
};

// Model plus its CTC head over a shared vocabulary and encoder width.
struct JointSystem {
  Model model;
  CtcClassifier ctc;

  JointSystem(const ModelConfig& cfg, std::uint64_t seed)
      : model(cfg, SeededRng(seed).split(kStreamInit)) {
    SeededRng r = SeededRng(seed).split(kStreamInit).split(1);
    ctc = CtcClassifier(cfg.vocab_size, cfg.d_model, r, Vocab::kBlank);
  }

  std::vector<std::pair<std::string, Parameter*>> named_params() {
    std::vector<std::pair<std::string, Parameter*>> out;
    for (auto& [name, p] : model.params) out.emplace_back(name, &p);
    out.emplace_back("ctc.W", &ctc.W);
    out.emplace_back("ctc.b", &ctc.b);
    return out;
  }

  void zero_grads() {
    for (auto& [name, p] : named_params()) p->zero_grad();
  }
};

struct LossBreakdown {
  double total = 0.0;  // mean over utterances of alpha*ctc+(1-alpha)*ce+reg
  double ctc = 0.0;
  double ce = 0.0;
  double reg = 0.0;
  std::size_t tokens = 0;   // gold tokens (incl. eos) over the batch
  std::size_t skipped = 0;  // infeasible utterances
};

// Forward+backward over a batch; gradients accumulate into the system's
// parameters with the CTC-parameter stop-gradient routing intact. The
// batch loss is the mean over utterances. reg_classifier substitutes a
// frozen classifier copy into the regularization branch, which is what a
// finite-difference check of the stop-gradient objective needs.
inline LossBreakdown joint_loss(const std::vector<const Utterance*>& batch,
                                JointSystem& sys, const TrainConfig& cfg,
                                bool backward = true,
                                CtcClassifier* reg_classifier = nullptr,
                                SeededRng* dropout_rng = nullptr) {
  cfg.validate();
  if (batch.empty()) throw std::invalid_argument("joint_loss: empty batch");

  // determine feasibility up front so the mean is over used utterances
  std::vector<const Utterance*> used;
  LossBreakdown out;
  for (const Utterance* u : batch) {
    std::size_t min_len = u->tokens.size();
    for (std::size_t i = 1; i < u->tokens.size(); ++i)
      if (u->tokens[i] == u->tokens[i - 1]) ++min_len;
    std::size_t frames =
        (u->features.rows() + sys.model.cfg.downsample - 1) /
        sys.model.cfg.downsample;
    if (frames < min_len || u->tokens.empty()) {
      std::cerr << "warning: skipping infeasible utterance " << u->id << " ("
                << frames << " frames for " << min_len << " states)\n";
      ++out.skipped;
      continue;
    }
    used.push_back(u);
  }
  if (used.empty()) throw std::invalid_argument("joint_loss: no usable utterance");

  double inv = 1.0 / static_cast<double>(used.size());
  for (const Utterance* u : used) {
    Tape t;
    Value enc = sys.model.build_encoder(t, u->features);

    Value ctc_lp = t.log_softmax_rows(t.add_rowwise(
        t.matmul(enc, t.transpose(t.leaf(sys.ctc.W, kGradFromCtc))),
        t.leaf(sys.ctc.b, kGradFromCtc)));
    Value l_ctc = ctc_loss_node(t, ctc_lp, u->tokens, sys.ctc.blank_id);

    std::vector<std::size_t> shifted = {Vocab::kSos};
    shifted.insert(shifted.end(), u->tokens.begin(), u->tokens.end());
    if (dropout_rng && cfg.input_dropout > 0.0)
      for (std::size_t i = 1; i < shifted.size(); ++i)
        if (dropout_rng->uniform() < cfg.input_dropout)
          shifted[i] = dropout_rng->uniform_int(
              Vocab::kFirstReal, sys.model.cfg.vocab_size - 1);
    std::vector<std::size_t> gold = u->tokens;
    gold.push_back(Vocab::kEos);
    std::vector<Value> st;
    Value logits = sys.model.build_decoder(t, enc, shifted, &st);
    Value l_ce = t.pick_neg_sum(t.log_softmax_rows(logits), gold);

    Value total =
        t.add(t.scale(l_ctc, cfg.alpha), t.scale(l_ce, 1.0 - cfg.alpha));
    double reg_val = 0.0;
    if (cfg.lambda > 0.0) {
      CtcClassifier& rc = reg_classifier ? *reg_classifier : sys.ctc;
      RegGraph rg = build_regularization(t, st, enc, rc, u->tokens, cfg.lambda);
      total = t.add(total, rg.loss);
      reg_val = t.scalar_val(rg.loss);
    }
    if (!std::isfinite(t.scalar_val(total)))
      throw std::runtime_error("joint_loss: non-finite loss on " + u->id);
    if (backward) t.backward(total, inv);

    out.total += inv * t.scalar_val(total);
    out.ctc += inv * t.scalar_val(l_ctc);
    out.ce += inv * t.scalar_val(l_ce);
    out.reg += inv * reg_val;
    out.tokens += gold.size();
  }
  return out;
}

// Adam with inverse-square-root warmup decay.
class AdamOptimizer {
public:
  AdamOptimizer(double peak_lr, std::size_t warmup_steps)
      : peak_lr_(peak_lr), warmup_(std::max<std::size_t>(1, warmup_steps)) {}

  std::size_t step_count() const { return step_; }
  void set_step_count(std::size_t s) { step_ = s; }

  void step(const std::vector<std::pair<std::string, Parameter*>>& params) {
    ++step_;
    double s = static_cast<double>(step_);
    double w = static_cast<double>(warmup_);
    double lr = peak_lr_ * std::min(s / w, std::sqrt(w / s));
    for (auto& [name, p] : params) {
      auto& st = state_[name];
      if (st.m.data.empty()) {
        st.m = Tensor(p->value.shape);
        st.v = Tensor(p->value.shape);
      }
      for (std::size_t i = 0; i < p->value.data.size(); ++i) {
        double g = p->grad.data[i];
        st.m.data[i] = beta1_ * st.m.data[i] + (1.0 - beta1_) * g;
        st.v.data[i] = beta2_ * st.v.data[i] + (1.0 - beta2_) * g * g;
        double mhat = st.m.data[i] / (1.0 - std::pow(beta1_, s));
        double vhat = st.v.data[i] / (1.0 - std::pow(beta2_, s));
        p->value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

private:
  struct State {
    Tensor m, v;
  };
  double peak_lr_;
  std::size_t warmup_;
  double beta1_ = 0.9, beta2_ = 0.98, eps_ = 1e-9;
  std::size_t step_ = 0;
  std::map<std::string, State> state_;
};

struct TrainResult {
  std::vector<double> loss_history;  // per epoch, nats per gold token
  std::size_t steps = 0;
  std::uint64_t shuffle_state = 0;
};

// Deterministic training loop: fixed shuffle stream, fixed batch order.
inline TrainResult train(const Dataset& data, JointSystem& sys,
                         const TrainConfig& cfg,
                         std::ostream* log = nullptr) {
  cfg.validate();
  if (data.utterances.empty())
    throw std::invalid_argument("train: empty dataset");
  AdamOptimizer opt(cfg.peak_lr, cfg.warmup_steps);
  auto params = sys.named_params();
  SeededRng shuffle = SeededRng(cfg.seed).split(kStreamShuffle);
  SeededRng dropout = SeededRng(cfg.seed).split(kStreamShuffle).split(1);
  TrainResult res;

  std::vector<const Utterance*> pool;
  for (const Utterance& u : data.utterances) pool.push_back(&u);
  std::vector<Utterance> spliced;
  if (cfg.splice_augment > 0) {
    SeededRng aug = SeededRng(cfg.seed).split(kStreamData).split(1);
    spliced = splice_utterances(data, cfg.splice_augment, aug);
    for (const Utterance& u : spliced) pool.push_back(&u);
  }

  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle.uniform_int(0, i - 1)]);
    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      std::vector<const Utterance*> batch;
      for (std::size_t i = start;
           i < std::min(order.size(), start + cfg.batch_size); ++i)
        batch.push_back(pool[order[i]]);
      sys.zero_grads();
      LossBreakdown lb = joint_loss(batch, sys, cfg, true, nullptr, &dropout);
      opt.step(params);
      epoch_loss += lb.total * static_cast<double>(batch.size() - lb.skipped);
      epoch_tokens += lb.tokens;
    }
    res.loss_history.push_back(epoch_loss /
                               static_cast<double>(epoch_tokens));
    if (log)
      *log << "epoch " << epoch << " loss/token "
           << res.loss_history.back() << "\n";
  }
  res.steps = opt.step_count();
  res.shuffle_state = shuffle.state();
  return res;
}

struct EvalResult {
  double mean_ter = 0.0;
  std::vector<double> per_utterance;
};

inline EvalResult evaluate(const Dataset& data, JointSystem& sys) {
  EvalResult res;
  for (const Utterance& u : data.utterances) {
    auto hyp = sys.model.decode_greedy(u.features, sys.model.cfg.max_tokens,
                                       Vocab::kSos, Vocab::kEos);
    res.per_utterance.push_back(token_error_rate(hyp, u.tokens));
    res.mean_ter += res.per_utterance.back();
  }
  if (!data.utterances.empty())
    res.mean_ter /= static_cast<double>(data.utterances.size());
  return res;
}

// -- checkpoint container -------------------------------------------------

constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, JointSystem& sys,
                            std::size_t step = 0,
                            std::uint64_t rng_state = 0) {
  io::Writer w(path);
  w.bytes("ACPR", 4);
  w.u32(kCheckpointVersion);
  const ModelConfig& c = sys.model.cfg;
  std::string conf;
  conf += "enc_layers=" + std::to_string(c.enc_layers) + "\n";
  conf += "dec_layers=" + std::to_string(c.dec_layers) + "\n";
  conf += "heads=" + std::to_string(c.heads) + "\n";
  conf += "d_model=" + std::to_string(c.d_model) + "\n";
  conf += "d_ff=" + std::to_string(c.d_ff) + "\n";
  conf += "vocab_size=" + std::to_string(c.vocab_size) + "\n";
  conf += "feature_dim=" + std::to_string(c.feature_dim) + "\n";
  conf += "downsample=" + std::to_string(c.downsample) + "\n";
  conf += "max_frames=" + std::to_string(c.max_frames) + "\n";
  conf += "max_tokens=" + std::to_string(c.max_tokens) + "\n";
  conf += "step=" + std::to_string(step) + "\n";
  conf += "rng_state=" + std::to_string(rng_state) + "\n";
  w.str(conf);
  auto params = sys.named_params();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (auto& [name, p] : params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(p->value.shape.size()));
    for (std::size_t d : p->value.shape)
      w.u32(static_cast<std::uint32_t>(d));
    for (double v : p->value.data) w.f32(static_cast<float>(v));
  }
  w.close();
}

struct LoadedCheckpoint {
  JointSystem system;
  std::size_t step = 0;
  std::uint64_t rng_state = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  io::Reader r(path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::string(magic, 4) != "ACPR")
    throw ParseError("bad checkpoint magic", 0);
  std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw ParseError("unsupported checkpoint version " +
                         std::to_string(version),
                     4);
  ModelConfig c;
  std::size_t step = 0;
  std::uint64_t rng_state = 0;
  for (auto& [k, v] : io::parse_kv(r.str("config block"))) {
    if (k == "enc_layers") c.enc_layers = std::stoul(v);
    else if (k == "dec_layers") c.dec_layers = std::stoul(v);
    else if (k == "heads") c.heads = std::stoul(v);
    else if (k == "d_model") c.d_model = std::stoul(v);
    else if (k == "d_ff") c.d_ff = std::stoul(v);
    else if (k == "vocab_size") c.vocab_size = std::stoul(v);
    else if (k == "feature_dim") c.feature_dim = std::stoul(v);
    else if (k == "downsample") c.downsample = std::stoul(v);
    else if (k == "max_frames") c.max_frames = std::stoul(v);
    else if (k == "max_tokens") c.max_tokens = std::stoul(v);
    else if (k == "step") step = std::stoul(v);
    else if (k == "rng_state") rng_state = std::stoull(v);
  }
  LoadedCheckpoint out{JointSystem(c, 0), step, rng_state};
  auto params = out.system.named_params();
  std::map<std::string, Parameter*> by_name(params.begin(), params.end());
  std::uint32_t count = r.u32("tensor count");
  if (count != params.size())
    throw ParseError("checkpoint holds " + std::to_string(count) +
                         " tensors, config implies " +
                         std::to_string(params.size()),
                     r.offset() - 4);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str("tensor name");
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw ParseError("unknown tensor '" + name + "'", r.offset());
    std::uint32_t rank = r.u32("tensor rank");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.u32("tensor dim");
    if (shape != it->second->value.shape)
      throw ParseError("shape mismatch for tensor '" + name + "'",
                       r.offset());
    for (double& v : it->second->value.data)
      v = static_cast<double>(r.f32(("tensor '" + name + "' data").c_str()));
  }
  return out;
}

}  // namespace actc
