#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "actc/numeric.hpp"
#include "actc/tensor.hpp"

namespace actc {

// Handle into a Tape.
struct Value {
  std::size_t idx = static_cast<std::size_t>(-1);
};

// Reverse-mode tape over dense tensors. Nodes are created in topological
// order, so the backward sweep is a single reverse pass. One tape per
// forward pass; parameters bind via leaf() and receive their gradients
// when backward() finishes, gated by the parameter's update mask.
class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value constant(Tensor t) { return push(std::move(t), {}); }

  Value scalar(double v) { return constant(Tensor::from({1}, {v})); }

  // Parameter leaf. grad_source tags which loss term this use of the
  // parameter belongs to; if the mask rejects it, the value enters the
  // graph as a constant and no gradient flows back.
  Value leaf(Parameter& p, unsigned grad_source) {
    if (!(p.update_mask & grad_source)) return constant(p.value);
    Value v = push(p.value, {});
    bindings_.push_back({&p, v.idx});
    return v;
  }

  const Tensor& val(Value v) const { return nodes_[v.idx].val; }
  Tensor& grad(Value v) { return nodes_[v.idx].grad; }
  double scalar_val(Value v) const { return nodes_[v.idx].val.data.at(0); }

  // Custom node: caller supplies the forward value and a backward hook
  // that receives this node's accumulated gradient.
  Value custom(Tensor val, std::function<void(Tape&, const Tensor&)> back) {
    return push(std::move(val), std::move(back));
  }

  // -- arithmetic ---------------------------------------------------------

  Value add(Value a, Value b) {
    const Tensor &A = val(a), &B = val(b);
    if (!A.same_shape(B)) throw std::invalid_argument("add: shape mismatch");
    Tensor out(A.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = A.data[i] + B.data[i];
    return push(std::move(out), [a, b](Tape& t, const Tensor& g) {
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        t.grad(a).data[i] += g.data[i];
        t.grad(b).data[i] += g.data[i];
      }
    });
  }

  Value mul(Value a, Value b) {
    const Tensor &A = val(a), &B = val(b);
    if (!A.same_shape(B)) throw std::invalid_argument("mul: shape mismatch");
    Tensor out(A.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = A.data[i] * B.data[i];
    return push(std::move(out), [a, b](Tape& t, const Tensor& g) {
      const Tensor &A = t.val(a), &B = t.val(b);
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        t.grad(a).data[i] += g.data[i] * B.data[i];
        t.grad(b).data[i] += g.data[i] * A.data[i];
      }
    });
  }

  Value scale(Value a, double s) {
    Tensor out = val(a);
    for (double& v : out.data) v *= s;
    return push(std::move(out), [a, s](Tape& t, const Tensor& g) {
      for (std::size_t i = 0; i < g.data.size(); ++i)
        t.grad(a).data[i] += s * g.data[i];
    });
  }

  Value matmul(Value a, Value b) {
    const Tensor &A = val(a), &B = val(b);
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
      throw std::invalid_argument("matmul: shape mismatch " + A.shape_str() +
                                  " x " + B.shape_str());
    std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor out = Tensor::matrix(m, n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        double av = A(i, p);
        if (av == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) out(i, j) += av * B(p, j);
      }
    return push(std::move(out), [a, b, m, k, n](Tape& t, const Tensor& g) {
      const Tensor &A = t.val(a), &B = t.val(b);
      Tensor &dA = t.grad(a), &dB = t.grad(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double gv = g(i, j);
          if (gv == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) {
            dA(i, p) += gv * B(p, j);
            dB(p, j) += gv * A(i, p);
          }
        }
    });
  }

  Value transpose(Value a) {
    const Tensor& A = val(a);
    Tensor out = Tensor::matrix(A.cols(), A.rows());
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < A.cols(); ++j) out(j, i) = A(i, j);
    return push(std::move(out), [a](Tape& t, const Tensor& g) {
      Tensor& dA = t.grad(a);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) dA(j, i) += g(i, j);
    });
  }

  // x (m×n) + row-broadcast b (n)
  Value add_rowwise(Value a, Value b) {
    const Tensor &A = val(a), &B = val(b);
    if (A.cols() != B.numel())
      throw std::invalid_argument("add_rowwise: shape mismatch");
    Tensor out = A;
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) += B(j);
    return push(std::move(out), [a, b](Tape& t, const Tensor& g) {
      Tensor &dA = t.grad(a), &dB = t.grad(b);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) {
          dA(i, j) += g(i, j);
          dB(j) += g(i, j);
        }
    });
  }

  Value tanh_(Value a) {
    Tensor out = val(a);
    for (double& v : out.data) v = std::tanh(v);
    return push(std::move(out), [a](Tape& t, const Tensor& g) {
      // needs own value; recompute is avoided by reading the stored output
      const Tensor& y = t.nodes_.at(t.last_back_idx_).val;
      for (std::size_t i = 0; i < g.data.size(); ++i)
        t.grad(a).data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
    });
  }

  // Row-wise softmax; causal=true masks columns j > i (square scores only).
  Value softmax_rows(Value a, bool causal = false) {
    const Tensor& A = val(a);
    Tensor out = Tensor::matrix(A.rows(), A.cols());
    for (std::size_t i = 0; i < A.rows(); ++i) {
      std::size_t lim = causal ? std::min(i + 1, A.cols()) : A.cols();
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < lim; ++j) mx = std::max(mx, A(i, j));
      double sum = 0.0;
      for (std::size_t j = 0; j < lim; ++j) {
        out(i, j) = std::exp(A(i, j) - mx);
        sum += out(i, j);
      }
      for (std::size_t j = 0; j < lim; ++j) out(i, j) /= sum;
    }
    return push(std::move(out), [a](Tape& t, const Tensor& g) {
      const Tensor& y = t.nodes_.at(t.last_back_idx_).val;
      Tensor& dA = t.grad(a);
      for (std::size_t i = 0; i < y.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
        for (std::size_t j = 0; j < y.cols(); ++j)
          dA(i, j) += y(i, j) * (g(i, j) - dot);
      }
    });
  }

  Value log_softmax_rows(Value a) {
    const Tensor& A = val(a);
    Tensor out = Tensor::matrix(A.rows(), A.cols());
    for (std::size_t i = 0; i < A.rows(); ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < A.cols(); ++j) mx = std::max(mx, A(i, j));
      double sum = 0.0;
      for (std::size_t j = 0; j < A.cols(); ++j) sum += std::exp(A(i, j) - mx);
      double lse = mx + std::log(sum);
      for (std::size_t j = 0; j < A.cols(); ++j) out(i, j) = A(i, j) - lse;
    }
    return push(std::move(out), [a](Tape& t, const Tensor& g) {
      const Tensor& y = t.nodes_.at(t.last_back_idx_).val;
      Tensor& dA = t.grad(a);
      for (std::size_t i = 0; i < y.rows(); ++i) {
        double gsum = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) gsum += g(i, j);
        for (std::size_t j = 0; j < y.cols(); ++j)
          dA(i, j) += g(i, j) - std::exp(y(i, j)) * gsum;
      }
    });
  }

  Value layer_norm_rows(Value x, Value gain, Value bias, double eps) {
    const Tensor& X = val(x);
    const Tensor &G = val(gain), &B = val(bias);
    std::size_t n = X.cols();
    if (G.numel() != n || B.numel() != n)
      throw std::invalid_argument("layer_norm_rows: shape mismatch");
    Tensor out = Tensor::matrix(X.rows(), n);
    for (std::size_t i = 0; i < X.rows(); ++i) {
      double mean = 0.0, var = 0.0;
      for (std::size_t j = 0; j < n; ++j) mean += X(i, j);
      mean /= static_cast<double>(n);
      for (std::size_t j = 0; j < n; ++j)
        var += (X(i, j) - mean) * (X(i, j) - mean);
      var /= static_cast<double>(n);
      double inv = 1.0 / std::sqrt(var + eps);
      for (std::size_t j = 0; j < n; ++j)
        out(i, j) = G(j) * ((X(i, j) - mean) * inv) + B(j);
    }
    return push(std::move(out), [x, gain, bias, eps](Tape& t, const Tensor& g) {
      const Tensor& X = t.val(x);
      const Tensor& G = t.val(gain);
      std::size_t n = X.cols();
      Tensor &dX = t.grad(x), &dG = t.grad(gain), &dB = t.grad(bias);
      for (std::size_t i = 0; i < X.rows(); ++i) {
        double mean = 0.0, var = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += X(i, j);
        mean /= static_cast<double>(n);
        for (std::size_t j = 0; j < n; ++j)
          var += (X(i, j) - mean) * (X(i, j) - mean);
        var /= static_cast<double>(n);
        double inv = 1.0 / std::sqrt(var + eps);
        double m1 = 0.0, m2 = 0.0;  // means of gain*g and gain*g*xhat
        for (std::size_t j = 0; j < n; ++j) {
          double xh = (X(i, j) - mean) * inv;
          double gg = G(j) * g(i, j);
          m1 += gg;
          m2 += gg * xh;
          dG(j) += g(i, j) * xh;
          dB(j) += g(i, j);
        }
        m1 /= static_cast<double>(n);
        m2 /= static_cast<double>(n);
        for (std::size_t j = 0; j < n; ++j) {
          double xh = (X(i, j) - mean) * inv;
          dX(i, j) += inv * (G(j) * g(i, j) - m1 - xh * m2);
        }
      }
    });
  }

  Value slice_cols(Value a, std::size_t c0, std::size_t c1) {
    const Tensor& A = val(a);
    if (c1 > A.cols() || c0 >= c1)
      throw std::invalid_argument("slice_cols: bad range");
    Tensor out = Tensor::matrix(A.rows(), c1 - c0);
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = c0; j < c1; ++j) out(i, j - c0) = A(i, j);
    return push(std::move(out), [a, c0](Tape& t, const Tensor& g) {
      Tensor& dA = t.grad(a);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) dA(i, c0 + j) += g(i, j);
    });
  }

  Value slice_rows(Value a, std::size_t r0, std::size_t r1) {
    const Tensor& A = val(a);
    if (r1 > A.rows() || r0 >= r1)
      throw std::invalid_argument("slice_rows: bad range");
    Tensor out = Tensor::matrix(r1 - r0, A.cols());
    for (std::size_t i = r0; i < r1; ++i)
      for (std::size_t j = 0; j < A.cols(); ++j) out(i - r0, j) = A(i, j);
    return push(std::move(out), [a, r0](Tape& t, const Tensor& g) {
      Tensor& dA = t.grad(a);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) dA(r0 + i, j) += g(i, j);
    });
  }

  Value concat_cols(const std::vector<Value>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    std::size_t rows = val(parts[0]).rows(), cols = 0;
    for (Value p : parts) cols += val(p).cols();
    Tensor out = Tensor::matrix(rows, cols);
    std::size_t off = 0;
    for (Value p : parts) {
      const Tensor& P = val(p);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < P.cols(); ++j) out(i, off + j) = P(i, j);
      off += P.cols();
    }
    return push(std::move(out), [parts](Tape& t, const Tensor& g) {
      std::size_t off = 0;
      for (Value p : parts) {
        Tensor& dP = t.grad(p);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < dP.cols(); ++j)
            dP(i, j) += g(i, off + j);
        off += dP.cols();
      }
    });
  }

  // Embedding lookup: rows of E selected by ids.
  Value gather_rows(Value e, std::vector<std::size_t> ids) {
    const Tensor& E = val(e);
    Tensor out = Tensor::matrix(ids.size(), E.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] >= E.rows())
        throw std::invalid_argument("gather_rows: id out of range");
      for (std::size_t j = 0; j < E.cols(); ++j) out(i, j) = E(ids[i], j);
    }
    return push(std::move(out),
                [e, ids = std::move(ids)](Tape& t, const Tensor& g) {
                  Tensor& dE = t.grad(e);
                  for (std::size_t i = 0; i < ids.size(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j)
                      dE(ids[i], j) += g(i, j);
                });
  }

  // Sum over rows of -logp[i, ids[i]]; logp must already be row log-probs.
  Value pick_neg_sum(Value logp, std::vector<std::size_t> ids) {
    const Tensor& L = val(logp);
    double acc = 0.0;
    for (std::size_t i = 0; i < ids.size(); ++i) acc -= L(i, ids[i]);
    return push(Tensor::from({1}, {acc}),
                [logp, ids = std::move(ids)](Tape& t, const Tensor& g) {
                  Tensor& dL = t.grad(logp);
                  for (std::size_t i = 0; i < ids.size(); ++i)
                    dL(i, ids[i]) -= g.data[0];
                });
  }

  // Elementwise max over equally-shaped tensors; ties go to the lowest
  // index, and the subgradient is routed only to the attaining input.
  Value max_elementwise(const std::vector<Value>& xs,
                        std::vector<std::size_t>* provenance = nullptr) {
    if (xs.empty()) throw std::invalid_argument("max_elementwise: empty");
    Tensor out = val(xs[0]);
    std::vector<std::size_t> arg(out.data.size(), 0);
    for (std::size_t h = 1; h < xs.size(); ++h) {
      const Tensor& X = val(xs[h]);
      for (std::size_t i = 0; i < out.data.size(); ++i)
        if (X.data[i] > out.data[i]) {
          out.data[i] = X.data[i];
          arg[i] = h;
        }
    }
    if (provenance) *provenance = arg;
    return push(std::move(out),
                [xs, arg = std::move(arg)](Tape& t, const Tensor& g) {
                  for (std::size_t i = 0; i < g.data.size(); ++i)
                    t.grad(xs[arg[i]]).data[i] += g.data[i];
                });
  }

  // -- backward -----------------------------------------------------------

  void backward(Value root, double seed = 1.0) {
    if (val(root).numel() != 1)
      throw std::invalid_argument("backward: root must be scalar");
    for (auto& n : nodes_) n.grad.fill(0.0);
    nodes_[root.idx].grad.data[0] = seed;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (!nodes_[i].back) continue;
      last_back_idx_ = i;
      nodes_[i].back(*this, nodes_[i].grad);
    }
    for (const auto& b : bindings_) {
      const Tensor& g = nodes_[b.idx].grad;
      for (std::size_t i = 0; i < g.data.size(); ++i)
        b.param->grad.data[i] += g.data[i];
    }
  }

private:
  struct Node {
    Tensor val;
    Tensor grad;
    std::function<void(Tape&, const Tensor&)> back;
  };
  struct Binding {
    Parameter* param;
    std::size_t idx;
  };

  Value push(Tensor v, std::function<void(Tape&, const Tensor&)> back) {
    Node n;
    n.val = std::move(v);
    n.grad = Tensor(n.val.shape);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Value{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::vector<Binding> bindings_;
  std::size_t last_back_idx_ = 0;
};

}  // namespace actc
