#pragma once

#include "choi/numerics/rng.hpp"
#include "choi/numerics/tensor.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace choi {

/// A learned block and its gradient accumulator (same shape).
struct Param {
  Tensor value;
  Tensor grad;

  Param() = default;
  explicit Param(Shape shape) : value(shape), grad(shape) {}

  void zero_grad() { grad.fill(0.0); }
};

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Vector sigmoid(const Vector& x) { return x.unaryExpr([](double v) { return sigmoid(v); }); }

enum class Activation { none, sigmoid };

/// Glorot-uniform bound sqrt(6 / (fan_in + fan_out)).
inline void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.values()) v = rng.uniform(-a, a);
}

/// y = act(W x + b), W stored [out x in].
struct FCLayer {
  Param weight;
  Param bias;
  Activation activation = Activation::none;

  FCLayer() = default;
  FCLayer(std::size_t in, std::size_t out, Activation act) : weight({out, in}), bias({out}), activation(act) {}

  static FCLayer glorot(std::size_t in, std::size_t out, Activation act, Rng& rng) {
    FCLayer l(in, out, act);
    glorot_uniform(l.weight.value, in, out, rng);
    return l;
  }

  std::size_t in_dim() const { return weight.value.dim(1); }
  std::size_t out_dim() const { return weight.value.dim(0); }
  auto W() const { return weight.value.matrix(); }
  auto b() const { return bias.value.flat(); }
};

inline void check_fc_input(const FCLayer& l, Eigen::Index rows) {
  if (static_cast<std::size_t>(rows) != l.in_dim())
    throw ShapeError("fc: input length " + std::to_string(rows) + " != in_dim " + std::to_string(l.in_dim()));
}

inline Vector fc_forward(const Vector& x, const FCLayer& l) {
  check_fc_input(l, x.size());
  Vector y = l.W() * x + l.b();
  if (l.activation == Activation::sigmoid) y = sigmoid(y);
  return y;
}

/// Batched forward: each column of X is one sample.
inline Matrix fc_forward_batch(const Matrix& X, const FCLayer& l) {
  check_fc_input(l, X.rows());
  Matrix Y = l.W() * X;
  Y.colwise() += l.b();
  if (l.activation == Activation::sigmoid) Y = Y.unaryExpr([](double v) { return sigmoid(v); });
  return Y;
}

/// Backward from the gradient w.r.t. the pre-activation W x + b.
inline Matrix fc_backward_pre(FCLayer& l, const Matrix& X, const Matrix& dpre, bool want_dx = true) {
  l.weight.grad.matrix().noalias() += dpre * X.transpose();
  l.bias.grad.flat() += dpre.rowwise().sum();
  if (!want_dx) return {};
  return l.W().transpose() * dpre;
}

/// Accumulates dW, db from (X, Y, dY) and returns dX (empty when not requested).
inline Matrix fc_backward_batch(FCLayer& l, const Matrix& X, const Matrix& Y, const Matrix& dY, bool want_dx = true) {
  if (l.activation == Activation::sigmoid)
    return fc_backward_pre(l, X, (dY.array() * Y.array() * (1.0 - Y.array())).matrix(), want_dx);
  return fc_backward_pre(l, X, dY, want_dx);
}

inline Vector fc_backward(FCLayer& l, const Vector& x, const Vector& y, const Vector& dy, bool want_dx = true) {
  Matrix dx = fc_backward_batch(l, x, y, dy, want_dx);
  if (!want_dx) return {};
  return dx.col(0);
}

/// Two stacked FC layers; the intermediate is kept for backward.
struct FCStack {
  FCLayer first;
  FCLayer second;

  static FCStack glorot(std::size_t in, std::size_t hidden, std::size_t out, Activation last, Rng& rng) {
    return {FCLayer::glorot(in, hidden, Activation::none, rng), FCLayer::glorot(hidden, out, last, rng)};
  }
  std::size_t in_dim() const { return first.in_dim(); }
  std::size_t out_dim() const { return second.out_dim(); }
};

struct FCStackTrace {
  Matrix input, hidden, output;
};

inline FCStackTrace fc_stack_forward(const Matrix& X, const FCStack& s) {
  FCStackTrace t;
  t.input = X;
  t.hidden = fc_forward_batch(X, s.first);
  t.output = fc_forward_batch(t.hidden, s.second);
  return t;
}

inline Matrix fc_stack_backward(FCStack& s, const FCStackTrace& t, const Matrix& dY, bool want_dx = true) {
  Matrix dh = fc_backward_batch(s.second, t.hidden, t.output, dY, true);
  return fc_backward_batch(s.first, t.input, t.hidden, dh, want_dx);
}

/// Row-wise softmax with row-max subtraction.
inline RowMatrix softmax_rows(const RowMatrix& m) {
  RowMatrix out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    out.row(r) = (m.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

}  // namespace choi
