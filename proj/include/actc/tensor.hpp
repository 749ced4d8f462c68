#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace actc {

// Dense row-major tensor of 64-bit floats. Serialization narrows to 32-bit.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
      : shape(std::move(s)),
        data(std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                             std::multiplies<>()),
             fill) {}

  static Tensor matrix(std::size_t r, std::size_t c, double fill = 0.0) {
    return Tensor({r, c}, fill);
  }
  static Tensor vec(std::size_t n, double fill = 0.0) {
    return Tensor({n}, fill);
  }
  static Tensor from(std::vector<std::size_t> s, std::vector<double> d) {
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(d);
    if (t.numel() != t.data.size())
      throw std::invalid_argument("Tensor::from: shape/data size mismatch");
    return t;
  }

  std::size_t numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }

  double& operator()(std::size_t i) { return data[i]; }
  double operator()(std::size_t i) const { return data[i]; }
  double& operator()(std::size_t i, std::size_t j) {
    return data[i * shape[1] + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data[i * shape[1] + j];
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i)
      s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
  }
};

// Trainable tensor with an accumulated gradient. The update mask controls
// which loss terms may write gradient into it.
enum GradSource : unsigned {
  kGradFromCtc = 1u,
  kGradFromAttention = 2u,
  kGradFromRegularizer = 4u,
  kGradFromAll = 7u,
};

struct Parameter {
  Tensor value;
  Tensor grad;
  unsigned update_mask = kGradFromAll;

  Parameter() = default;
  explicit Parameter(Tensor v, unsigned mask = kGradFromAll)
      : value(std::move(v)), grad(value.shape), update_mask(mask) {}

  void zero_grad() { grad.fill(0.0); }
};

}  // namespace actc
