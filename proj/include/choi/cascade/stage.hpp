#pragma once

#include "choi/cascade/instance.hpp"
#include "choi/numerics/layers.hpp"

#include <array>

namespace choi {

/// Regression outputs are scaled by these before being applied as deltas.
constexpr std::array<double, 4> kDeltaStd{0.1, 0.1, 0.2, 0.2};
constexpr std::size_t kMaskResolution = 14;
constexpr double kMinBoxSide = 1.0;

/// Class-agnostic box regressor and score refiner over the pooled RoI feature.
struct StageHead {
  FCLayer regressor;  // -> 4 deltas (normalized)
  FCLayer scorer;     // -> 1 logit

  static StageHead glorot(std::size_t in, Rng& rng) {
    StageHead h{FCLayer::glorot(in, 4, Activation::none, rng), FCLayer::glorot(in, 1, Activation::none, rng)};
    // Start from "no correction": the identity refinement is the natural prior.
    h.regressor.weight.value.fill(0.0);
    return h;
  }
};

/// Mask head: pooled feature (current + previous stage) -> 14x14 logits.
struct SegHead {
  FCLayer fc;
  static SegHead glorot(std::size_t in, Rng& rng) {
    return {FCLayer::glorot(in, kMaskResolution * kMaskResolution, Activation::none, rng)};
  }
};

struct StageTrace {
  Vector pooled;
  Vector regression;  // normalized deltas
  double logit = 0.0;
  Box refined;
};

inline BoxDeltas denormalize(const Vector& r) {
  return {r[0] * kDeltaStd[0], r[1] * kDeltaStd[1], r[2] * kDeltaStd[2], r[3] * kDeltaStd[3]};
}

inline Vector normalize(const BoxDeltas& d) {
  Vector r(4);
  r << d.dx / kDeltaStd[0], d.dy / kDeltaStd[1], d.dw / kDeltaStd[2], d.dh / kDeltaStd[3];
  return r;
}

inline StageTrace stage_forward(const Tensor& grid, const Box& box, const StageHead& head, const ImageSize& img) {
  StageTrace t;
  t.pooled = roi_align(grid, box, img).flat();
  t.regression = fc_forward(t.pooled, head.regressor);
  t.logit = fc_forward(t.pooled, head.scorer)[0];
  t.refined = clip_box(apply_deltas(box, denormalize(t.regression)), img);
  return t;
}

inline bool degenerate(const Box& b) { return !(b.width() > kMinBoxSide && b.height() > kMinBoxSide); }

/// One localization stage: RoIAlign -> deltas + confidence. Returns nullopt
/// when the refined box collapses (<= 1 px on a side).
inline std::optional<Instance> refine_stage(const Tensor& grid, const Instance& inst, const StageHead& head,
                                            const ImageSize& img) {
  const StageTrace t = stage_forward(grid, inst.box, head, img);
  if (degenerate(t.refined)) return std::nullopt;
  Instance out = inst;
  out.box = t.refined;
  out.confidence = sigmoid(t.logit);
  out.stage = inst.stage + 1;
  out.mask.reset();
  return out;
}

/// Seg-head input: pooled feature of the refined box plus the previous stage's
/// pooled feature (zeros on the first stage).
inline Vector seg_input(const Tensor& grid, const Box& box, const ImageSize& img, const Vector* prev_pooled) {
  Vector x = roi_align(grid, box, img).flat();
  if (prev_pooled) {
    if (prev_pooled->size() != x.size()) throw ShapeError("segment_stage: previous pooled feature has wrong size");
    x += *prev_pooled;
  }
  return x;
}

/// Keep cells with probability above 0.5; if none is, keep the single
/// max-logit cell (first in row-major order on ties).
inline std::vector<std::uint8_t> threshold_mask_logits(const Vector& logits) {
  std::vector<std::uint8_t> on(std::size_t(logits.size()), 0);
  bool any = false;
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    if (sigmoid(logits[i]) > 0.5) on[std::size_t(i)] = 1, any = true;
  if (!any) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < logits.size(); ++i)
      if (logits[i] > logits[best]) best = i;
    on[std::size_t(best)] = 1;
  }
  return on;
}

/// Paint a res x res cell grid into the box at image resolution; a pixel takes
/// the cell containing its center.
inline BitMask rasterize_cells(const std::vector<std::uint8_t>& cells, std::size_t res, const Box& box,
                               const ImageSize& img) {
  BitMask m(img.width, img.height);
  const long x0 = std::max(0L, long(std::floor(box.x1))), x1 = std::min(long(img.width), long(std::ceil(box.x2)));
  const long y0 = std::max(0L, long(std::floor(box.y1))), y1 = std::min(long(img.height), long(std::ceil(box.y2)));
  for (long y = y0; y < y1; ++y)
    for (long x = x0; x < x1; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      if (!box.contains(px, py)) continue;
      const auto cx = std::min(res - 1, std::size_t((px - box.x1) / box.width() * double(res)));
      const auto cy = std::min(res - 1, std::size_t((py - box.y1) / box.height() * double(res)));
      if (cells[cy * res + cx]) m.set(std::size_t(x), std::size_t(y));
    }
  return m;
}

/// Mask target for training: the mask sampled at the res x res cell centers of the box.
inline Vector mask_target(const BitMask& mask, const Box& box, std::size_t res = kMaskResolution) {
  Vector t = Vector::Zero(Eigen::Index(res * res));
  for (std::size_t cy = 0; cy < res; ++cy)
    for (std::size_t cx = 0; cx < res; ++cx) {
      const double px = box.x1 + (cx + 0.5) / double(res) * box.width();
      const double py = box.y1 + (cy + 0.5) / double(res) * box.height();
      const long ix = long(std::floor(px)), iy = long(std::floor(py));
      if (ix >= 0 && iy >= 0 && ix < long(mask.width()) && iy < long(mask.height()) && mask.get(ix, iy))
        t[Eigen::Index(cy * res + cx)] = 1.0;
    }
  return t;
}

inline Instance segment_stage(const Tensor& grid, const Instance& inst, const SegHead& head, const Vector* prev_pooled,
                              const ImageSize& img) {
  const Vector logits = fc_forward(seg_input(grid, inst.box, img, prev_pooled), head.fc);
  Instance out = inst;
  out.mask = rasterize_cells(threshold_mask_logits(logits), kMaskResolution, inst.box, img);
  if (!out.mask->any()) {
    // The chosen cell fell between pixel centers (sub-pixel boxes); mark the box center.
    const auto x = std::min<std::size_t>(img.width - 1, std::size_t(std::max(0.0, inst.box.cx())));
    const auto y = std::min<std::size_t>(img.height - 1, std::size_t(std::max(0.0, inst.box.cy())));
    out.mask->set(x, y);
  }
  return out;
}

}  // namespace choi
