#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "actc/tensor.hpp"

namespace actc {

// Stable softmax over a single row of logits (max-subtraction).
inline std::vector<double> softmax_row(const std::vector<double>& logits) {
  if (logits.empty())
    throw std::invalid_argument("softmax_row: empty input");
  double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

// out_c = sum_d W[c][d] * x[d] + b[c]
inline std::vector<double> linear_map(const Tensor& W, const Tensor& b,
                                      const std::vector<double>& x) {
  if (W.rank() != 2 || W.cols() != x.size() || b.numel() != W.rows())
    throw std::invalid_argument("linear_map: dimension mismatch");
  std::vector<double> out(W.rows());
  for (std::size_t c = 0; c < W.rows(); ++c) {
    double acc = b(c);
    for (std::size_t d = 0; d < W.cols(); ++d) acc += W(c, d) * x[d];
    out[c] = acc;
  }
  return out;
}

inline std::vector<double> layer_norm(const std::vector<double>& x,
                                      const std::vector<double>& gain,
                                      const std::vector<double>& bias,
                                      double eps) {
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be > 0");
  if (gain.size() != x.size() || bias.size() != x.size())
    throw std::invalid_argument("layer_norm: dimension mismatch");
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  double inv = 1.0 / std::sqrt(var + eps);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = gain[i] * ((x[i] - mean) * inv) + bias[i];
  return out;
}

// log(sum_i exp(x_i)) without overflow; -inf for an empty or all -inf set.
inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Argmax with deterministic lowest-index tie-break.
inline std::size_t argmax_lowest(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace actc
