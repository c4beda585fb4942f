#pragma once

#include "choi/geometry/mask.hpp"

#include <array>

namespace choi {

class InvalidInstance : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr std::size_t kPooledSize = 7;

/// Bilinear taps for one output cell: four (flat plane index, weight) pairs.
using BilinearTaps = std::array<std::pair<std::size_t, double>, 4>;

/// Image box -> grid coordinates by linear scale (grid_dim / image_dim), no
/// offset; one bilinear sample at each output cell center, clamped to the edge.
inline std::vector<BilinearTaps> roi_taps(std::size_t grid_h, std::size_t grid_w, const Box& box,
                                          const ImageSize& img, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw ShapeError("roi_align: output dims must be >= 1");
  const double sx = double(grid_w) / double(img.width), sy = double(grid_h) / double(img.height);
  const double gx1 = box.x1 * sx, gy1 = box.y1 * sy;
  const double bw = box.width() * sx / double(out_w), bh = box.height() * sy / double(out_h);
  std::vector<BilinearTaps> taps(out_h * out_w);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const double v = std::clamp(gy1 + (oy + 0.5) * bh - 0.5, 0.0, double(grid_h - 1));
    const auto y0 = static_cast<std::size_t>(std::floor(v));
    const std::size_t y1 = std::min(y0 + 1, grid_h - 1);
    const double fy = v - double(y0);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double u = std::clamp(gx1 + (ox + 0.5) * bw - 0.5, 0.0, double(grid_w - 1));
      const auto x0 = static_cast<std::size_t>(std::floor(u));
      const std::size_t x1 = std::min(x0 + 1, grid_w - 1);
      const double fx = u - double(x0);
      taps[oy * out_w + ox] = {{{y0 * grid_w + x0, (1 - fy) * (1 - fx)},
                                {y0 * grid_w + x1, (1 - fy) * fx},
                                {y1 * grid_w + x0, fy * (1 - fx)},
                                {y1 * grid_w + x1, fy * fx}}};
    }
  }
  return taps;
}

inline void apply_keep(std::vector<BilinearTaps>& taps, const BitMask* keep) {
  if (!keep) return;
  for (auto& t : taps)
    for (auto& [idx, w] : t)
      if (!keep->bits()[idx]) w = 0.0;
}

/// RoIAlign of `box` from a (C, H, W) grid. Grid cells where `keep` is unset
/// read as zero.
inline Tensor roi_align(const Tensor& grid, const Box& box, const ImageSize& img,
                        std::size_t out_h = kPooledSize, std::size_t out_w = kPooledSize,
                        const BitMask* keep = nullptr) {
  if (grid.rank() != 3) throw ShapeError("roi_align: grid must be rank 3, got " + shape_str(grid.shape()));
  if (keep && (keep->width() != grid.width() || keep->height() != grid.height()))
    throw ShapeError("roi_align: keep mask must match grid resolution");
  auto taps = roi_taps(grid.height(), grid.width(), box, img, out_h, out_w);
  apply_keep(taps, keep);
  const std::size_t C = grid.channels(), plane = grid.height() * grid.width();
  Tensor out = Tensor::grid(C, out_h, out_w);
  for (std::size_t c = 0; c < C; ++c) {
    const double* g = grid.data() + c * plane;
    double* o = out.data() + c * out_h * out_w;
    for (std::size_t k = 0; k < taps.size(); ++k) {
      double acc = 0.0;
      for (const auto& [idx, w] : taps[k]) acc += w * g[idx];
      o[k] = acc;
    }
  }
  return out;
}

/// Gradient of roi_align w.r.t. the grid for upstream `dout`.
inline Tensor roi_align_backward(const Shape& grid_shape, const Box& box, const ImageSize& img, const Tensor& dout,
                                 const BitMask* keep = nullptr) {
  const std::size_t out_h = dout.height(), out_w = dout.width();
  auto taps = roi_taps(grid_shape[1], grid_shape[2], box, img, out_h, out_w);
  apply_keep(taps, keep);
  Tensor dgrid(grid_shape);
  const std::size_t plane = grid_shape[1] * grid_shape[2];
  for (std::size_t c = 0; c < grid_shape[0]; ++c) {
    double* g = dgrid.data() + c * plane;
    const double* d = dout.data() + c * out_h * out_w;
    for (std::size_t k = 0; k < taps.size(); ++k)
      for (const auto& [idx, w] : taps[k]) g[idx] += w * d[k];
  }
  return dgrid;
}

/// A grid cell is inside iff the mask covers at least half of the image
/// pixels whose centers fall in its footprint.
inline BitMask downsample_mask(const BitMask& m, std::size_t grid_h, std::size_t grid_w) {
  const double sx = double(grid_w) / double(m.width()), sy = double(grid_h) / double(m.height());
  std::vector<std::size_t> total(grid_h * grid_w, 0), on(grid_h * grid_w, 0);
  for (std::size_t y = 0; y < m.height(); ++y) {
    const auto gy = std::min(grid_h - 1, static_cast<std::size_t>((y + 0.5) * sy));
    for (std::size_t x = 0; x < m.width(); ++x) {
      const auto gx = std::min(grid_w - 1, static_cast<std::size_t>((x + 0.5) * sx));
      ++total[gy * grid_w + gx];
      on[gy * grid_w + gx] += m.get(x, y);
    }
  }
  BitMask out(grid_w, grid_h);
  for (std::size_t i = 0; i < total.size(); ++i) out.bits()[i] = (total[i] > 0 && 2 * on[i] >= total[i]) ? 1 : 0;
  return out;
}

/// Zero the grid outside the downsampled mask, then RoIAlign over the mask's
/// bounding box.
inline Tensor mask_roi_align(const Tensor& grid, const BitMask& mask, const ImageSize& img,
                             std::size_t out_h = kPooledSize, std::size_t out_w = kPooledSize) {
  const BitMask keep = downsample_mask(mask, grid.height(), grid.width());
  if (!keep.any()) throw InvalidInstance("mask_roi_align: mask is empty at feature resolution");
  const auto bb = mask.bounding_box();
  return roi_align(grid, *bb, img, out_h, out_w, &keep);
}

}  // namespace choi
