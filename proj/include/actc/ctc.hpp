#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "actc/autodiff.hpp"
#include "actc/errors.hpp"
#include "actc/numeric.hpp"
#include "actc/rng.hpp"
#include "actc/tensor.hpp"

namespace actc {

// Single linear layer over encoder frames plus the blank token. The
// parameters only ever receive gradient from the CTC loss; the attention
// regularizer reads them through constants.
struct CtcClassifier {
  Parameter W;  // C×D
  Parameter b;  // C
  std::size_t blank_id = 0;

  CtcClassifier() = default;
  CtcClassifier(std::size_t vocab, std::size_t width, SeededRng& rng,
                std::size_t blank = 0)
      : W(Tensor::matrix(vocab, width), kGradFromCtc),
        b(Tensor::vec(vocab), kGradFromCtc),
        blank_id(blank) {
    if (blank >= vocab) throw std::invalid_argument("blank_id out of range");
    double s = 1.0 / std::sqrt(static_cast<double>(width));
    for (double& v : W.value.data) v = rng.normal(0.0, s);
  }

  std::size_t vocab() const { return W.value.rows(); }
  std::size_t width() const { return W.value.cols(); }
};

// Per-frame logits: row t = W h_t + b.
inline Tensor frame_logits(const CtcClassifier& cls, const Tensor& frames) {
  if (frames.rank() != 2 || frames.cols() != cls.width())
    throw std::invalid_argument("frame_logits: width mismatch");
  Tensor out = Tensor::matrix(frames.rows(), cls.vocab());
  for (std::size_t t = 0; t < frames.rows(); ++t) {
    std::vector<double> x(frames.data.begin() + t * frames.cols(),
                          frames.data.begin() + (t + 1) * frames.cols());
    auto row = linear_map(cls.W.value, cls.b.value, x);
    for (std::size_t c = 0; c < row.size(); ++c) out(t, c) = row[c];
  }
  return out;
}

struct CtcLossResult {
  double neg_log_likelihood = 0.0;
  Tensor grad;  // T×C, d NLL / d log_probs
};

namespace detail {

inline std::vector<std::size_t> extend_labels(
    const std::vector<std::size_t>& labels, std::size_t blank) {
  std::vector<std::size_t> ext;
  ext.reserve(2 * labels.size() + 1);
  ext.push_back(blank);
  for (std::size_t l : labels) {
    ext.push_back(l);
    ext.push_back(blank);
  }
  return ext;
}

inline void check_ctc_inputs(const Tensor& log_probs,
                             const std::vector<std::size_t>& labels,
                             std::size_t blank) {
  if (log_probs.rank() != 2)
    throw std::invalid_argument("ctc_loss: log_probs must be T×C");
  std::size_t C = log_probs.cols();
  std::size_t min_len = labels.size();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == blank)
      throw std::invalid_argument("ctc_loss: blank in label sequence");
    if (labels[i] >= C)
      throw std::invalid_argument("ctc_loss: label id out of range");
    if (i > 0 && labels[i] == labels[i - 1]) ++min_len;
  }
  if (log_probs.rows() < min_len)
    throw InfeasibleAlignmentError(
        "ctc_loss: " + std::to_string(labels.size()) + " labels need at least " +
        std::to_string(min_len) + " frames, got " +
        std::to_string(log_probs.rows()));
}

}  // namespace detail

// Log-space forward-backward CTC. Returns the negative log likelihood of
// the label sequence and its gradient with respect to the log
// probabilities.
inline CtcLossResult ctc_loss(const Tensor& log_probs,
                              const std::vector<std::size_t>& labels,
                              std::size_t blank) {
  detail::check_ctc_inputs(log_probs, labels, blank);
  const double ninf = -std::numeric_limits<double>::infinity();
  std::size_t T = log_probs.rows();
  auto ext = detail::extend_labels(labels, blank);
  std::size_t S = ext.size();

  auto allow_skip = [&](std::size_t s) {
    return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
  };

  std::vector<std::vector<double>> alpha(T, std::vector<double>(S, ninf));
  alpha[0][0] = log_probs(0, ext[0]);
  if (S > 1) alpha[0][1] = log_probs(0, ext[1]);
  for (std::size_t t = 1; t < T; ++t)
    for (std::size_t s = 0; s < S; ++s) {
      double acc = alpha[t - 1][s];
      if (s >= 1) acc = log_sum_exp(acc, alpha[t - 1][s - 1]);
      if (allow_skip(s)) acc = log_sum_exp(acc, alpha[t - 1][s - 2]);
      alpha[t][s] = acc + log_probs(t, ext[s]);
    }
  double log_z = alpha[T - 1][S - 1];
  if (S > 1) log_z = log_sum_exp(log_z, alpha[T - 1][S - 2]);

  std::vector<std::vector<double>> beta(T, std::vector<double>(S, ninf));
  beta[T - 1][S - 1] = log_probs(T - 1, ext[S - 1]);
  if (S > 1) beta[T - 1][S - 2] = log_probs(T - 1, ext[S - 2]);
  for (std::size_t t = T - 1; t-- > 0;)
    for (std::size_t s = 0; s < S; ++s) {
      double acc = beta[t + 1][s];
      if (s + 1 < S) acc = log_sum_exp(acc, beta[t + 1][s + 1]);
      if (s + 2 < S && allow_skip(s + 2)) acc = log_sum_exp(acc, beta[t + 1][s + 2]);
      beta[t][s] = acc + log_probs(t, ext[s]);
    }

  CtcLossResult res;
  res.neg_log_likelihood = -log_z;
  res.grad = Tensor::matrix(T, log_probs.cols());
  // alpha+beta double-count the emission at t; gamma is path mass through
  // (t, s), and d logZ / d logp(t,c) sums it over states labeled c.
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t s = 0; s < S; ++s) {
      double gamma = alpha[t][s] + beta[t][s] - log_probs(t, ext[s]);
      if (gamma == ninf) continue;
      res.grad(t, ext[s]) -= std::exp(gamma - log_z);
    }
  return res;
}

// Exhaustive oracle: enumerate every length-T token string, collapse
// repeats then drop blanks, and sum the probability of matches. Only for
// tiny instances.
inline double ctc_loss_brute_force(const Tensor& log_probs,
                                   const std::vector<std::size_t>& labels,
                                   std::size_t blank) {
  std::size_t T = log_probs.rows(), C = log_probs.cols();
  double paths = std::pow(static_cast<double>(C), static_cast<double>(T));
  if (paths > 1e7)
    throw std::invalid_argument("ctc_loss_brute_force: instance too large");
  for (std::size_t l : labels)
    if (l == blank)
      throw std::invalid_argument("ctc_loss_brute_force: blank in labels");

  const double ninf = -std::numeric_limits<double>::infinity();
  double log_total = ninf;
  std::vector<std::size_t> path(T, 0);
  for (std::size_t n = 0; n < static_cast<std::size_t>(paths); ++n) {
    std::size_t rem = n;
    for (std::size_t t = 0; t < T; ++t) {
      path[t] = rem % C;
      rem /= C;
    }
    std::vector<std::size_t> collapsed;
    for (std::size_t t = 0; t < T; ++t) {
      if (t > 0 && path[t] == path[t - 1]) continue;
      if (path[t] == blank) continue;
      collapsed.push_back(path[t]);
    }
    if (collapsed != labels) continue;
    double lp = 0.0;
    for (std::size_t t = 0; t < T; ++t) lp += log_probs(t, path[t]);
    log_total = log_sum_exp(log_total, lp);
  }
  return -log_total;  // +inf when no path produces the labels
}

// Best-path decode: per-frame argmax (ties to lowest index), collapse
// adjacent repeats, remove blanks.
inline std::vector<std::size_t> greedy_collapse_decode(const Tensor& log_probs,
                                                       std::size_t blank) {
  std::vector<std::size_t> out;
  std::size_t prev = static_cast<std::size_t>(-1);
  for (std::size_t t = 0; t < log_probs.rows(); ++t) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < log_probs.cols(); ++c)
      if (log_probs(t, c) > log_probs(t, best)) best = c;
    if (best != prev && best != blank) out.push_back(best);
    prev = best;
  }
  return out;
}

// Tape node wrapping ctc_loss so the NLL joins a larger graph.
inline Value ctc_loss_node(Tape& tape, Value log_probs,
                           const std::vector<std::size_t>& labels,
                           std::size_t blank) {
  CtcLossResult res = ctc_loss(tape.val(log_probs), labels, blank);
  return tape.custom(
      Tensor::from({1}, {res.neg_log_likelihood}),
      [log_probs, g = std::move(res.grad)](Tape& t, const Tensor& up) {
        Tensor& d = t.grad(log_probs);
        for (std::size_t i = 0; i < d.data.size(); ++i)
          d.data[i] += up.data[0] * g.data[i];
      });
}

}  // namespace actc
