#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "actc/autodiff.hpp"
#include "actc/ctc.hpp"
#include "actc/tensor.hpp"

namespace actc {

struct RegConfig {
  double lambda = 0.0;
  bool enabled = true;

  void validate() const {
    if (lambda < 0.0) throw std::invalid_argument("RegConfig: lambda < 0");
  }
};

// q_{i,y} floor before the log; the gradient is zeroed at the floor.
inline constexpr double kRegProbFloor = 1e-30;

// Per-head CTC logits: for every (layer, head), the context embeddings
// d_i = sum_t w_{i,t} h_t pushed through the CTC linear layer. The
// classifier enters as a constant so no gradient reaches it from here.
inline std::vector<Value> per_head_logits(Tape& t,
                                          const std::vector<Value>& st_weights,
                                          Value encoder_out,
                                          CtcClassifier& cls) {
  if (st_weights.empty())
    throw std::invalid_argument("per_head_logits: no attention records");
  Value w_t = t.transpose(t.leaf(cls.W, kGradFromRegularizer));
  Value b = t.leaf(cls.b, kGradFromRegularizer);
  std::vector<Value> out;
  out.reserve(st_weights.size());
  for (Value w : st_weights) {
    Value d = t.matmul(w, encoder_out);
    out.push_back(t.add_rowwise(t.matmul(d, w_t), b));
  }
  return out;
}

// Elementwise max over heads; ties and subgradient go to the lowest
// (layer, head) index.
inline Value focus_logits(Tape& t, const std::vector<Value>& head_logits,
                          std::vector<std::size_t>* provenance = nullptr) {
  return t.max_elementwise(head_logits, provenance);
}

// Softmax of focus logits over all tokens except the blank; the blank
// column is literal zero.
inline Value attention_probability(Tape& t, Value focus, std::size_t blank_id) {
  const Tensor& F = t.val(focus);
  if (F.cols() < 2)
    throw std::invalid_argument("attention_probability: need >= 2 tokens");
  if (blank_id >= F.cols())
    throw std::invalid_argument("attention_probability: blank out of range");
  Tensor q = Tensor::matrix(F.rows(), F.cols());
  for (std::size_t i = 0; i < F.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < F.cols(); ++c)
      if (c != blank_id) mx = std::max(mx, F(i, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < F.cols(); ++c) {
      if (c == blank_id) continue;
      q(i, c) = std::exp(F(i, c) - mx);
      sum += q(i, c);
    }
    for (std::size_t c = 0; c < F.cols(); ++c)
      if (c != blank_id) q(i, c) /= sum;
  }
  return t.custom(std::move(q), [focus, blank_id](Tape& tt, const Tensor& g) {
    // softmax jacobian restricted to the non-blank columns
    const Tensor& F = tt.val(focus);
    Tensor& dF = tt.grad(focus);
    for (std::size_t i = 0; i < F.rows(); ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < F.cols(); ++c)
        if (c != blank_id) mx = std::max(mx, F(i, c));
      double sum = 0.0;
      std::vector<double> qi(F.cols(), 0.0);
      for (std::size_t c = 0; c < F.cols(); ++c) {
        if (c == blank_id) continue;
        qi[c] = std::exp(F(i, c) - mx);
        sum += qi[c];
      }
      double dot = 0.0;
      for (std::size_t c = 0; c < F.cols(); ++c) {
        if (c == blank_id) continue;
        qi[c] /= sum;
        dot += g(i, c) * qi[c];
      }
      for (std::size_t c = 0; c < F.cols(); ++c)
        if (c != blank_id) dF(i, c) += qi[c] * (g(i, c) - dot);
    }
  });
}

// L_reg = -lambda * sum_i ln q_{i, y_i}
inline Value regularization_loss(Tape& t, Value q,
                                 const std::vector<std::size_t>& targets,
                                 double lambda, std::size_t blank_id) {
  const Tensor& Q = t.val(q);
  if (Q.rows() != targets.size())
    throw std::invalid_argument("regularization_loss: row/target mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == blank_id)
      throw std::invalid_argument("regularization_loss: blank in targets");
    acc -= lambda * std::log(std::max(Q(i, targets[i]), kRegProbFloor));
  }
  return t.custom(Tensor::from({1}, {acc}),
                  [q, targets, lambda](Tape& tt, const Tensor& g) {
                    const Tensor& Q = tt.val(q);
                    Tensor& dQ = tt.grad(q);
                    for (std::size_t i = 0; i < targets.size(); ++i) {
                      double qv = Q(i, targets[i]);
                      if (qv <= kRegProbFloor) continue;
                      dQ(i, targets[i]) -= g.data[0] * lambda / qv;
                    }
                  });
}

struct RegGraph {
  std::vector<Value> head_logits;
  Value focus;
  std::vector<std::size_t> provenance;  // flat (layer*heads+head) per cell
  Value q;
  Value loss;
};

// Full regularization term over one utterance. st_weights are the
// source-target attention softmax rows (one Value per layer/head, each
// L_out×T); only the rows matching the real target tokens participate.
inline RegGraph build_regularization(Tape& t,
                                     const std::vector<Value>& st_weights,
                                     Value encoder_out, CtcClassifier& cls,
                                     const std::vector<std::size_t>& targets,
                                     double lambda) {
  RegGraph rg;
  std::vector<Value> trimmed;
  for (Value w : st_weights) {
    if (t.val(w).rows() == targets.size())
      trimmed.push_back(w);
    else
      trimmed.push_back(t.slice_rows(w, 0, targets.size()));
  }
  rg.head_logits = per_head_logits(t, trimmed, encoder_out, cls);
  rg.focus = focus_logits(t, rg.head_logits, &rg.provenance);
  rg.q = attention_probability(t, rg.focus, cls.blank_id);
  rg.loss = regularization_loss(t, rg.q, targets, lambda, cls.blank_id);
  return rg;
}

}  // namespace actc
