// Copyright 2026 The Preformer Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Dense 2-D tensors on a reverse-mode tape.
//
// A Tape records every op executed during one forward pass together with the
// closure that propagates gradients back to the op's inputs. Values are
// Eigen row-major matrices; vectors are 1 x n. Tapes are single-use and are
// neither copied nor moved, so BasicVar handles stay valid for their lifetime.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace preformer {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = MatrixX<double>;
using Index = Eigen::Index;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_string(Index rows, Index cols) {
  std::ostringstream os;
  os << "[" << rows << "x" << cols << "]";
  return os.str();
}

template <typename Derived>
std::string shape_string(const Eigen::EigenBase<Derived>& m) {
  return shape_string(m.rows(), m.cols());
}

template <typename Scalar>
class Tape;

template <typename Scalar>
class BasicVar {
 public:
  using Matrix = MatrixX<Scalar>;

  BasicVar() = default;
  BasicVar(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Matrix& value() const { return tape_->value(*this); }
  const Matrix& grad() const { return tape_->grad(*this); }
  bool requires_grad() const { return tape_->requires_grad(*this); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Scalar item() const {
    if (rows() != 1 || cols() != 1) {
      throw DimensionError("item() on non-scalar " + shape_string(value()));
    }
    return value()(0, 0);
  }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class Tape {
 public:
  using Matrix = MatrixX<Scalar>;
  using Var = BasicVar<Scalar>;
  using Backward = std::function<void(const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Matrix value, bool requires_grad = false) {
    check_finite(value, "leaf");
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, nullptr});
    return Var(this, nodes_.size() - 1);
  }

  Var constant(Matrix value) { return leaf(std::move(value), false); }

  // Appends an op result. The backward closure is kept only when at least one
  // input participates in differentiation.
  Var record(const char* op, Matrix value, std::initializer_list<Var> inputs,
             Backward backward) {
    return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  Var record(const char* op, Matrix value, std::span<const Var> inputs, Backward backward) {
    check_finite(value, op);
    bool needs_grad = false;
    for (const Var& in : inputs) needs_grad = needs_grad || requires_grad(in);
    nodes_.push_back(
        Node{std::move(value), Matrix(), needs_grad, needs_grad ? std::move(backward) : nullptr});
    return Var(this, nodes_.size() - 1);
  }

  void accumulate(const Var& v, const Matrix& g) {
    Node& node = nodes_[v.id()];
    if (!node.requires_grad) return;
    if (g.rows() != node.value.rows() || g.cols() != node.value.cols()) {
      throw DimensionError("gradient " + shape_string(g) + " does not match value " +
                           shape_string(node.value));
    }
    if (node.grad.size() == 0) {
      node.grad = g;
    } else {
      node.grad += g;
    }
  }

  // Reverse sweep from a scalar. Ops are visited in exact reverse execution order.
  void backward(const Var& loss) {
    if (loss.rows() != 1 || loss.cols() != 1) {
      throw DimensionError("backward() needs a scalar, got " + shape_string(loss.value()));
    }
    if (!requires_grad(loss)) return;
    accumulate(loss, Matrix::Ones(1, 1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (node.backward && node.grad.size() != 0) node.backward(node.grad);
    }
  }

  const Matrix& value(const Var& v) const { return nodes_[v.id()].value; }

  // Zero-filled when nothing flowed into this node.
  const Matrix& grad(const Var& v) const {
    const Node& node = nodes_[v.id()];
    if (node.grad.size() == 0) {
      node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
    }
    return node.grad;
  }

  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    mutable Matrix grad;
    bool requires_grad;
    Backward backward;
  };

  static void check_finite(const Matrix& m, const char* op) {
    if (!m.allFinite()) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }

  std::vector<Node> nodes_;
};

using Var = BasicVar<double>;
using DoubleTape = Tape<double>;

namespace detail {

template <typename Scalar>
void require_same_shape(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.value()) +
                         " vs " + shape_string(b.value()));
  }
}

}  // namespace detail

template <typename Scalar>
BasicVar<Scalar> matmul(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.value()) + " * " +
                         shape_string(b.value()));
  }
  MatrixX<Scalar> out = a.value() * b.value();
  return a.tape().record("matmul", std::move(out), {a, b}, [a, b](const MatrixX<Scalar>& g) {
    if (a.requires_grad()) a.tape().accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) b.tape().accumulate(b, a.value().transpose() * g);
  });
}

template <typename Scalar>
BasicVar<Scalar> transpose(const BasicVar<Scalar>& a) {
  MatrixX<Scalar> out = a.value().transpose();
  return a.tape().record("transpose", std::move(out), {a}, [a](const MatrixX<Scalar>& g) {
    a.tape().accumulate(a, g.transpose());
  });
}

template <typename Scalar>
BasicVar<Scalar> add(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  MatrixX<Scalar> out = a.value() + b.value();
  return a.tape().record("add", std::move(out), {a, b}, [a, b](const MatrixX<Scalar>& g) {
    a.tape().accumulate(a, g);
    b.tape().accumulate(b, g);
  });
}

template <typename Scalar>
BasicVar<Scalar> operator+(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  return add(a, b);
}

/// x[r, :] + bias for every row; the only broadcasting op.
template <typename Scalar>
BasicVar<Scalar> add_row(const BasicVar<Scalar>& x, const BasicVar<Scalar>& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw DimensionError("add_row: bias " + shape_string(bias.value()) + " vs input " +
                         shape_string(x.value()));
  }
  MatrixX<Scalar> out = x.value().rowwise() + bias.value().row(0);
  return x.tape().record("add_row", std::move(out), {x, bias},
                         [x, bias](const MatrixX<Scalar>& g) {
                           x.tape().accumulate(x, g);
                           if (bias.requires_grad()) {
                             bias.tape().accumulate(bias, g.colwise().sum());
                           }
                         });
}

template <typename Scalar>
BasicVar<Scalar> mul(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::require_same_shape(a, b, "mul");
  MatrixX<Scalar> out = a.value().cwiseProduct(b.value());
  return a.tape().record("mul", std::move(out), {a, b}, [a, b](const MatrixX<Scalar>& g) {
    if (a.requires_grad()) a.tape().accumulate(a, g.cwiseProduct(b.value()));
    if (b.requires_grad()) b.tape().accumulate(b, g.cwiseProduct(a.value()));
  });
}

template <typename Scalar>
BasicVar<Scalar> scale(const BasicVar<Scalar>& a, Scalar s) {
  MatrixX<Scalar> out = a.value() * s;
  return a.tape().record("scale", std::move(out), {a}, [a, s](const MatrixX<Scalar>& g) {
    a.tape().accumulate(a, g * s);
  });
}

template <typename Scalar>
BasicVar<Scalar> relu(const BasicVar<Scalar>& a) {
  MatrixX<Scalar> out = a.value().cwiseMax(Scalar(0));
  return a.tape().record("relu", std::move(out), {a}, [a](const MatrixX<Scalar>& g) {
    a.tape().accumulate(
        a, (a.value().array() > Scalar(0)).select(g, MatrixX<Scalar>::Zero(g.rows(), g.cols())));
  });
}

/// Exact (erf) GELU.
template <typename Scalar>
BasicVar<Scalar> gelu(const BasicVar<Scalar>& a) {
  const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
  const Scalar inv_sqrt_2pi = Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
  MatrixX<Scalar> out = a.value().unaryExpr(
      [&](Scalar x) { return Scalar(0.5) * x * (Scalar(1) + std::erf(x * inv_sqrt2)); });
  return a.tape().record("gelu", std::move(out), {a}, [a, inv_sqrt2, inv_sqrt_2pi](
                                                          const MatrixX<Scalar>& g) {
    MatrixX<Scalar> d = a.value().unaryExpr([&](Scalar x) {
      return Scalar(0.5) * (Scalar(1) + std::erf(x * inv_sqrt2)) +
             x * inv_sqrt_2pi * std::exp(Scalar(-0.5) * x * x);
    });
    a.tape().accumulate(a, g.cwiseProduct(d));
  });
}

enum class Mask { kNone, kCausal };

namespace detail {

// Row-wise softmax; under kCausal, entry (i, j) with j > i is excluded.
template <typename Scalar>
MatrixX<Scalar> softmax_rows(const MatrixX<Scalar>& x, Mask mask) {
  MatrixX<Scalar> out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Index width = mask == Mask::kCausal ? std::min<Index>(i + 1, x.cols()) : x.cols();
    auto row = x.row(i).head(width);
    const Scalar max = row.maxCoeff();
    out.row(i).head(width) = (row.array() - max).exp().matrix();
    out.row(i).head(width) /= out.row(i).head(width).sum();
    out.row(i).tail(x.cols() - width).setZero();
  }
  return out;
}

}  // namespace detail

/// Softmax along `axis` (0 = down columns, 1 = across rows), max-subtracted.
/// A causal mask requires a square input and axis 1.
template <typename Scalar>
BasicVar<Scalar> softmax(const BasicVar<Scalar>& x, int axis = 1, Mask mask = Mask::kNone) {
  if (axis != 0 && axis != 1) throw DimensionError("softmax: axis must be 0 or 1");
  if (mask == Mask::kCausal && (axis != 1 || x.rows() != x.cols())) {
    throw DimensionError("softmax: causal mask needs a square input on axis 1, got " +
                         shape_string(x.value()));
  }
  MatrixX<Scalar> y = axis == 1 ? detail::softmax_rows<Scalar>(x.value(), mask)
                                : MatrixX<Scalar>(detail::softmax_rows<Scalar>(
                                                      x.value().transpose(), mask)
                                                      .transpose());
  MatrixX<Scalar> out = y;
  return x.tape().record("softmax", std::move(out), {x}, [x, y, axis](const MatrixX<Scalar>& g) {
    // dx = y * (g - <g, y>) along the axis
    if (axis == 1) {
      auto dots = g.cwiseProduct(y).rowwise().sum();
      MatrixX<Scalar> dx = y.cwiseProduct(g - dots * MatrixX<Scalar>::Ones(1, g.cols()));
      x.tape().accumulate(x, dx);
    } else {
      auto dots = g.cwiseProduct(y).colwise().sum();
      MatrixX<Scalar> dx = y.cwiseProduct(g - MatrixX<Scalar>::Ones(g.rows(), 1) * dots);
      x.tape().accumulate(x, dx);
    }
  });
}

/// Row-wise log-softmax.
template <typename Scalar>
BasicVar<Scalar> log_softmax(const BasicVar<Scalar>& x) {
  const MatrixX<Scalar>& v = x.value();
  MatrixX<Scalar> out(v.rows(), v.cols());
  for (Index i = 0; i < v.rows(); ++i) {
    const Scalar max = v.row(i).maxCoeff();
    const Scalar lse = max + std::log((v.row(i).array() - max).exp().sum());
    out.row(i) = v.row(i).array() - lse;
  }
  MatrixX<Scalar> probs = out.array().exp();
  return x.tape().record("log_softmax", std::move(out), {x},
                         [x, probs](const MatrixX<Scalar>& g) {
                           MatrixX<Scalar> dx =
                               g - probs.cwiseProduct(g.rowwise().sum() *
                                                      MatrixX<Scalar>::Ones(1, g.cols()));
                           x.tape().accumulate(x, dx);
                         });
}

/// Normalizes each row to zero mean and unit variance, then applies gain and bias (1 x n).
template <typename Scalar>
BasicVar<Scalar> layer_norm(const BasicVar<Scalar>& x, const BasicVar<Scalar>& gain,
                            const BasicVar<Scalar>& bias, Scalar eps = Scalar(1e-5)) {
  const Index n = x.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw DimensionError("layer_norm: gain " + shape_string(gain.value()) + " / bias " +
                         shape_string(bias.value()) + " vs input " + shape_string(x.value()));
  }
  const MatrixX<Scalar>& v = x.value();
  MatrixX<Scalar> normed(v.rows(), n);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(v.rows());
  for (Index i = 0; i < v.rows(); ++i) {
    const Scalar mean = v.row(i).mean();
    const Scalar var = (v.row(i).array() - mean).square().mean();
    inv_std(i) = Scalar(1) / std::sqrt(var + eps);
    normed.row(i) = (v.row(i).array() - mean) * inv_std(i);
  }
  MatrixX<Scalar> out = (normed.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  return x.tape().record(
      "layer_norm", std::move(out), {x, gain, bias},
      [x, gain, bias, normed, inv_std, n](const MatrixX<Scalar>& g) {
        if (gain.requires_grad()) {
          gain.tape().accumulate(gain, g.cwiseProduct(normed).colwise().sum());
        }
        if (bias.requires_grad()) bias.tape().accumulate(bias, g.colwise().sum());
        if (x.requires_grad()) {
          MatrixX<Scalar> dn = (g.array().rowwise() * gain.value().row(0).array()).matrix();
          MatrixX<Scalar> dx(dn.rows(), n);
          for (Index i = 0; i < dn.rows(); ++i) {
            const Scalar mean_dn = dn.row(i).mean();
            const Scalar mean_dn_n = dn.row(i).cwiseProduct(normed.row(i)).mean();
            dx.row(i) =
                inv_std(i) * (dn.row(i).array() - mean_dn - normed.row(i).array() * mean_dn_n);
          }
          x.tape().accumulate(x, dx);
        }
      });
}

template <typename Scalar>
BasicVar<Scalar> slice_cols(const BasicVar<Scalar>& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of " + shape_string(x.value()));
  }
  MatrixX<Scalar> out = x.value().middleCols(start, count);
  return x.tape().record("slice_cols", std::move(out), {x},
                         [x, start, count](const MatrixX<Scalar>& g) {
                           MatrixX<Scalar> dx = MatrixX<Scalar>::Zero(x.rows(), x.cols());
                           dx.middleCols(start, count) = g;
                           x.tape().accumulate(x, dx);
                         });
}

template <typename Scalar>
BasicVar<Scalar> slice_rows(const BasicVar<Scalar>& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of " + shape_string(x.value()));
  }
  MatrixX<Scalar> out = x.value().middleRows(start, count);
  return x.tape().record("slice_rows", std::move(out), {x},
                         [x, start, count](const MatrixX<Scalar>& g) {
                           MatrixX<Scalar> dx = MatrixX<Scalar>::Zero(x.rows(), x.cols());
                           dx.middleRows(start, count) = g;
                           x.tape().accumulate(x, dx);
                         });
}

template <typename Scalar>
BasicVar<Scalar> concat_cols(const std::vector<BasicVar<Scalar>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row count " + std::to_string(p.rows()) + " vs " +
                           std::to_string(rows));
    }
    cols += p.cols();
  }
  MatrixX<Scalar> out(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return parts.front().tape().record(
      "concat_cols", std::move(out), std::span<const BasicVar<Scalar>>(parts),
      [parts](const MatrixX<Scalar>& g) {
        Index off = 0;
        for (const auto& p : parts) {
          if (p.requires_grad()) p.tape().accumulate(p, g.middleCols(off, p.cols()));
          off += p.cols();
        }
      });
}

/// Rows of `table` selected by `ids` (embedding lookup).
template <typename Scalar>
BasicVar<Scalar> gather_rows(const BasicVar<Scalar>& table, std::span<const int> ids) {
  MatrixX<Scalar> out(static_cast<Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[i]) + " outside table " +
                           shape_string(table.value()));
    }
    out.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return table.tape().record("gather_rows", std::move(out), {table},
                             [table, idx](const MatrixX<Scalar>& g) {
                               MatrixX<Scalar> dt =
                                   MatrixX<Scalar>::Zero(table.rows(), table.cols());
                               for (std::size_t i = 0; i < idx.size(); ++i) {
                                 dt.row(idx[i]) += g.row(static_cast<Index>(i));
                               }
                               table.tape().accumulate(table, dt);
                             });
}

template <typename Scalar>
BasicVar<Scalar> sum(const BasicVar<Scalar>& x) {
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape().record("sum", std::move(out), {x}, [x](const MatrixX<Scalar>& g) {
    x.tape().accumulate(x, MatrixX<Scalar>::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

template <typename Scalar>
BasicVar<Scalar> mean(const BasicVar<Scalar>& x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.value().size()));
}

/// Strided 1-D patch extraction over time (im2col). Row t of the result is the
/// concatenation of input rows t*stride - pad_left + j for j in [0, kernel),
/// with out-of-range rows read as zeros. Output length is ceil(T / stride).
template <typename Scalar>
BasicVar<Scalar> unfold_time(const BasicVar<Scalar>& x, Index kernel, Index stride,
                             Index pad_left) {
  if (kernel < 1 || stride < 1 || pad_left < 0) {
    throw DimensionError("unfold_time: kernel and stride must be positive");
  }
  const Index steps = x.rows();
  const Index channels = x.cols();
  const Index out_len = (steps + stride - 1) / stride;
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(out_len, kernel * channels);
  for (Index t = 0; t < out_len; ++t) {
    for (Index j = 0; j < kernel; ++j) {
      const Index src = t * stride - pad_left + j;
      if (src >= 0 && src < steps) out.block(t, j * channels, 1, channels) = x.value().row(src);
    }
  }
  return x.tape().record(
      "unfold_time", std::move(out), {x},
      [x, kernel, stride, pad_left, out_len, channels, steps](const MatrixX<Scalar>& g) {
        MatrixX<Scalar> dx = MatrixX<Scalar>::Zero(steps, channels);
        for (Index t = 0; t < out_len; ++t) {
          for (Index j = 0; j < kernel; ++j) {
            const Index src = t * stride - pad_left + j;
            if (src >= 0 && src < steps) dx.row(src) += g.block(t, j * channels, 1, channels);
          }
        }
        x.tape().accumulate(x, dx);
      });
}

}  // namespace preformer
