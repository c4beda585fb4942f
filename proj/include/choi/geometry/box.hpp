#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "choi/numerics/tensor.hpp"

namespace choi {

/// Axis-aligned box in continuous image coordinates; pixel (x, y) covers
/// [x, x+1) x [y, y+1).
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x1 < x2 && y1 < y2; }
  bool contains(double x, double y) const { return x >= x1 && x < x2 && y >= y1 && y < y2; }

  bool operator==(const Box&) const = default;
};

struct ImageSize {
  std::size_t width = 0, height = 0;
  bool operator==(const ImageSize&) const = default;
};

inline double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return (w > 0 && h > 0) ? w * h : 0.0;
}

inline double box_iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

inline Box union_box(const Box& a, const Box& b) {
  return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2), std::max(a.y2, b.y2)};
}

inline Box clip_box(const Box& b, const ImageSize& img) {
  return {std::clamp(b.x1, 0.0, double(img.width)), std::clamp(b.y1, 0.0, double(img.height)),
          std::clamp(b.x2, 0.0, double(img.width)), std::clamp(b.y2, 0.0, double(img.height))};
}

inline Box intersect_box(const Box& a, const Box& b) {
  return {std::max(a.x1, b.x1), std::max(a.y1, b.y1), std::min(a.x2, b.x2), std::min(a.y2, b.y2)};
}

inline Box expand_box(const Box& b, double margin) {
  return {b.x1 - margin, b.y1 - margin, b.x2 + margin, b.y2 + margin};
}

/// Regression deltas in the center / log-size parameterization.
struct BoxDeltas {
  double dx = 0, dy = 0, dw = 0, dh = 0;
};

inline Box apply_deltas(const Box& b, const BoxDeltas& d) {
  const double w = b.width(), h = b.height();
  const double cx = b.cx() + d.dx * w, cy = b.cy() + d.dy * h;
  const double nw = w * std::exp(d.dw), nh = h * std::exp(d.dh);
  return {cx - 0.5 * nw, cy - 0.5 * nh, cx + 0.5 * nw, cy + 0.5 * nh};
}

inline BoxDeltas box_deltas(const Box& from, const Box& to) {
  return {(to.cx() - from.cx()) / from.width(), (to.cy() - from.cy()) / from.height(),
          std::log(to.width() / from.width()), std::log(to.height() / from.height())};
}

}  // namespace choi
