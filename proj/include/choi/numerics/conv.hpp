#pragma once

#include "choi/numerics/layers.hpp"

#include <algorithm>
#include <limits>

namespace choi {

/// Zero-padded "same" 2D convolution, kernel [c_out x c_in x k x k].
struct ConvLayer {
  Param kernel;
  Param bias;

  ConvLayer() = default;
  ConvLayer(std::size_t c_in, std::size_t c_out, std::size_t k) : kernel({c_out, c_in, k, k}), bias({c_out}) {
    if (k % 2 == 0) throw ShapeError("conv kernel size must be odd, got " + std::to_string(k));
  }
  std::size_t in_channels() const { return kernel.value.dim(1); }
  std::size_t out_channels() const { return kernel.value.dim(0); }
  std::size_t ksize() const { return kernel.value.dim(2); }
};

namespace detail {

/// Patch matrix [(c_in*k*k) x (H*W)]; row (ci*k + ky)*k + kx holds the input
/// shifted by (ky - pad, kx - pad), zero outside.
inline Matrix im2col(const Tensor& x, std::size_t k) {
  const auto C = x.channels(), H = x.height(), W = x.width();
  const long pad = static_cast<long>(k / 2);
  Matrix cols = Matrix::Zero(Eigen::Index(C * k * k), Eigen::Index(H * W));
  for (std::size_t ci = 0; ci < C; ++ci)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const auto row = Eigen::Index((ci * k + ky) * k + kx);
        const long dy = long(ky) - pad, dx = long(kx) - pad;
        for (long r = std::max(0L, -dy); r < std::min(long(H), long(H) - dy); ++r)
          for (long c = std::max(0L, -dx); c < std::min(long(W), long(W) - dx); ++c)
            cols(row, r * long(W) + c) = x.at(ci, std::size_t(r + dy), std::size_t(c + dx));
      }
  return cols;
}

/// Adjoint of im2col: scatters patch gradients back onto a (C, H, W) tensor.
inline Tensor col2im(const Matrix& dcols, std::size_t C, std::size_t H, std::size_t W, std::size_t k) {
  const long pad = static_cast<long>(k / 2);
  Tensor dx = Tensor::grid(C, H, W);
  for (std::size_t ci = 0; ci < C; ++ci)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const auto row = Eigen::Index((ci * k + ky) * k + kx);
        const long dy = long(ky) - pad, dx_ = long(kx) - pad;
        for (long r = std::max(0L, -dy); r < std::min(long(H), long(H) - dy); ++r)
          for (long c = std::max(0L, -dx_); c < std::min(long(W), long(W) - dx_); ++c)
            dx.at(ci, std::size_t(r + dy), std::size_t(c + dx_)) += dcols(row, r * long(W) + c);
      }
  return dx;
}

inline Eigen::Map<const RowMatrix> kernel_matrix(const ConvLayer& l) {
  return {l.kernel.value.data(), Eigen::Index(l.out_channels()),
          Eigen::Index(l.in_channels() * l.ksize() * l.ksize())};
}

}  // namespace detail

inline Tensor conv_forward(const Tensor& x, const ConvLayer& l) {
  if (x.rank() != 3 || x.channels() != l.in_channels())
    throw ShapeError("conv: input " + shape_str(x.shape()) + " vs in_channels " + std::to_string(l.in_channels()));
  const auto co_n = Eigen::Index(l.out_channels()), hw = Eigen::Index(x.height() * x.width());
  Tensor y = Tensor::grid(l.out_channels(), x.height(), x.width());
  Eigen::Map<RowMatrix> ym(y.data(), co_n, hw);
  ym.noalias() = detail::kernel_matrix(l) * detail::im2col(x, l.ksize());
  ym.colwise() += l.bias.value.flat();
  return y;
}

/// Accumulates kernel/bias grads; returns dX when requested.
inline Tensor conv_backward(ConvLayer& l, const Tensor& x, const Tensor& dy, bool want_dx) {
  const auto co_n = Eigen::Index(l.out_channels()), hw = Eigen::Index(x.height() * x.width());
  const Eigen::Map<const RowMatrix> g(dy.data(), co_n, hw);
  const Matrix cols = detail::im2col(x, l.ksize());
  Eigen::Map<RowMatrix> dk(l.kernel.grad.data(), co_n, cols.rows());
  dk.noalias() += g * cols.transpose();
  l.bias.grad.flat() += g.rowwise().sum();
  if (!want_dx) return {};
  const Matrix dcols = detail::kernel_matrix(l).transpose() * g;
  return detail::col2im(dcols, x.channels(), x.height(), x.width(), l.ksize());
}

struct PoolTrace {
  Tensor output;
  std::vector<std::size_t> argmax;  // flat index into the input per output cell
};

/// 2x2 max-pool, stride 2; first maximum wins on ties.
inline PoolTrace maxpool2_forward(const Tensor& x) {
  if (x.rank() != 3 || x.height() % 2 || x.width() % 2)
    throw ShapeError("maxpool2: spatial dims must be even, got " + shape_str(x.shape()));
  const std::size_t C = x.channels(), H = x.height() / 2, W = x.width() / 2;
  PoolTrace t{Tensor::grid(C, H, W), std::vector<std::size_t>(C * H * W)};
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (c * x.height() + 2 * y + dy) * x.width() + 2 * xx + dx;
            if (x[idx] > best) best = x[idx], arg = idx;
          }
        const std::size_t o = (c * H + y) * W + xx;
        t.output[o] = best;
        t.argmax[o] = arg;
      }
  return t;
}

inline Tensor maxpool2_backward(const PoolTrace& t, const Shape& in_shape, const Tensor& dy) {
  Tensor dx(in_shape);
  for (std::size_t o = 0; o < t.argmax.size(); ++o) dx[t.argmax[o]] += dy[o];
  return dx;
}

/// Smallest gap between the winner and runner-up over all pooling windows;
/// finite differences are only meaningful when this exceeds the step.
inline double maxpool2_min_margin(const Tensor& x) {
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t y = 0; y + 1 < x.height(); y += 2)
      for (std::size_t xx = 0; xx + 1 < x.width(); xx += 2) {
        double v[4] = {x.at(c, y, xx), x.at(c, y, xx + 1), x.at(c, y + 1, xx), x.at(c, y + 1, xx + 1)};
        std::sort(v, v + 4);
        margin = std::min(margin, v[3] - v[2]);
      }
  return margin;
}

/// Two conv + 2x2 max-pool blocks followed by one FC layer.
struct ConvPoolEncoder {
  ConvLayer conv1;
  ConvLayer conv2;
  FCLayer fc;
  std::size_t in_height = 0, in_width = 0;

  static ConvPoolEncoder glorot(std::size_t c_in, std::size_t h, std::size_t w, std::size_t c1, std::size_t c2,
                                std::size_t k, std::size_t out, Rng& rng) {
    if (h % 4 || w % 4) throw ShapeError("conv-pool encoder: spatial dims must be divisible by 4");
    ConvPoolEncoder e;
    e.conv1 = ConvLayer(c_in, c1, k);
    e.conv2 = ConvLayer(c1, c2, k);
    glorot_uniform(e.conv1.kernel.value, c_in * k * k, c1 * k * k, rng);
    glorot_uniform(e.conv2.kernel.value, c1 * k * k, c2 * k * k, rng);
    e.fc = FCLayer::glorot(c2 * (h / 4) * (w / 4), out, Activation::none, rng);
    e.in_height = h;
    e.in_width = w;
    return e;
  }
  std::size_t in_channels() const { return conv1.in_channels(); }
  std::size_t out_dim() const { return fc.out_dim(); }
};

struct ConvPoolTrace {
  Tensor input, conv1_out;
  PoolTrace pool1;
  Tensor conv2_out;
  PoolTrace pool2;
  Vector output;
};

inline ConvPoolTrace conv_pool_trace(const Tensor& x, const ConvPoolEncoder& e) {
  if (x.rank() != 3 || x.channels() != e.in_channels() || x.height() != e.in_height || x.width() != e.in_width)
    throw ShapeError("conv-pool encoder: input " + shape_str(x.shape()) + " does not match encoder");
  ConvPoolTrace t;
  t.input = x;
  t.conv1_out = conv_forward(x, e.conv1);
  t.pool1 = maxpool2_forward(t.conv1_out);
  t.conv2_out = conv_forward(t.pool1.output, e.conv2);
  t.pool2 = maxpool2_forward(t.conv2_out);
  t.output = fc_forward(t.pool2.output.flat(), e.fc);
  return t;
}

inline Vector conv_pool_forward(const Tensor& x, const ConvPoolEncoder& e) { return conv_pool_trace(x, e).output; }

/// Accumulates encoder grads from dOut; returns dInput when requested.
inline Tensor conv_pool_backward(ConvPoolEncoder& e, const ConvPoolTrace& t, const Vector& dout, bool want_dx = false) {
  Vector dflat = fc_backward(e.fc, t.pool2.output.flat(), t.output, dout, true);
  Tensor dp2 = from_vector(dflat, t.pool2.output.shape());
  Tensor dc2 = maxpool2_backward(t.pool2, t.conv2_out.shape(), dp2);
  Tensor dp1 = conv_backward(e.conv2, t.pool1.output, dc2, true);
  Tensor dc1 = maxpool2_backward(t.pool1, t.conv1_out.shape(), dp1);
  return conv_backward(e.conv1, t.input, dc1, want_dx);
}

}  // namespace choi
