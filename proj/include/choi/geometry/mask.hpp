#pragma once

#include "choi/geometry/box.hpp"

#include <cstdint>
#include <vector>

namespace choi {

/// Row-major binary grid. Used both at image resolution (instance masks) and at
/// feature-grid resolution (keep masks for pooling).
class BitMask {
 public:
  BitMask() = default;
  BitMask(std::size_t width, std::size_t height) : width_(width), height_(height), bits_(width * height, 0) {}

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  bool get(std::size_t x, std::size_t y) const { return bits_[y * width_ + x] != 0; }
  void set(std::size_t x, std::size_t y, bool v = true) { bits_[y * width_ + x] = v ? 1 : 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  std::vector<std::uint8_t>& bits() { return bits_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits_) n += b;
    return n;
  }
  bool any() const {
    for (auto b : bits_)
      if (b) return true;
    return false;
  }

  /// Tight bounding box of the set bits in pixel-edge coordinates.
  std::optional<Box> bounding_box() const {
    std::size_t x0 = width_, y0 = height_, x1 = 0, y1 = 0;
    bool found = false;
    for (std::size_t y = 0; y < height_; ++y)
      for (std::size_t x = 0; x < width_; ++x)
        if (get(x, y)) {
          found = true;
          x0 = std::min(x0, x), y0 = std::min(y0, y);
          x1 = std::max(x1, x), y1 = std::max(y1, y);
        }
    if (!found) return std::nullopt;
    return Box{double(x0), double(y0), double(x1 + 1), double(y1 + 1)};
  }

  bool operator==(const BitMask&) const = default;

 private:
  std::size_t width_ = 0, height_ = 0;
  std::vector<std::uint8_t> bits_;
};

inline void require_same_dims(const BitMask& a, const BitMask& b) {
  if (a.width() != b.width() || a.height() != b.height())
    throw ShapeError("mask dims " + std::to_string(a.width()) + "x" + std::to_string(a.height()) + " vs " +
                     std::to_string(b.width()) + "x" + std::to_string(b.height()));
}

inline double mask_iou(const BitMask& a, const BitMask& b) {
  require_same_dims(a, b);
  std::size_t inter = 0, uni = 0;
  const auto& ab = a.bits();
  const auto& bb = b.bits();
  for (std::size_t i = 0; i < ab.size(); ++i) {
    inter += ab[i] & bb[i];
    uni += ab[i] | bb[i];
  }
  return uni ? double(inter) / double(uni) : 0.0;
}

inline BitMask mask_or(const BitMask& a, const BitMask& b) {
  require_same_dims(a, b);
  BitMask m(a.width(), a.height());
  for (std::size_t i = 0; i < a.bits().size(); ++i) m.bits()[i] = a.bits()[i] | b.bits()[i];
  return m;
}

inline BitMask box_mask(const Box& b, const ImageSize& img) {
  BitMask m(img.width, img.height);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      if (b.contains(x + 0.5, y + 0.5)) m.set(x, y);
  return m;
}

/// Ellipse inscribed in the box (pixel centers tested).
inline BitMask ellipse_mask(const Box& b, const ImageSize& img) {
  BitMask m(img.width, img.height);
  const double rx = 0.5 * b.width(), ry = 0.5 * b.height();
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double u = (x + 0.5 - b.cx()) / rx, v = (y + 0.5 - b.cy()) / ry;
      if (u * u + v * v <= 1.0) m.set(x, y);
    }
  return m;
}

/// Chebyshev distance-r dilation.
inline BitMask dilate(const BitMask& m, int r) {
  BitMask out(m.width(), m.height());
  const int W = int(m.width()), H = int(m.height());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!m.get(x, y)) continue;
      for (int yy = std::max(0, y - r); yy <= std::min(H - 1, y + r); ++yy)
        for (int xx = std::max(0, x - r); xx <= std::min(W - 1, x + r); ++xx) out.set(xx, yy);
    }
  return out;
}

inline bool masks_overlap(const BitMask& a, const BitMask& b) {
  require_same_dims(a, b);
  for (std::size_t i = 0; i < a.bits().size(); ++i)
    if (a.bits()[i] & b.bits()[i]) return true;
  return false;
}

/// Run-length encoding: alternating run lengths starting with a zero run,
/// row-major.
inline std::vector<std::uint32_t> rle_encode(const BitMask& m) {
  std::vector<std::uint32_t> runs;
  std::uint8_t cur = 0;
  std::uint32_t len = 0;
  for (auto b : m.bits()) {
    if (b != cur) {
      runs.push_back(len);
      cur = b;
      len = 0;
    }
    ++len;
  }
  runs.push_back(len);
  return runs;
}

inline BitMask rle_decode(const std::vector<std::uint32_t>& runs, std::size_t width, std::size_t height) {
  BitMask m(width, height);
  std::size_t pos = 0;
  std::uint8_t cur = 0;
  for (auto r : runs) {
    if (pos + r > width * height) throw ShapeError("rle: runs exceed mask size");
    std::fill_n(m.bits().begin() + static_cast<std::ptrdiff_t>(pos), r, cur);
    pos += r;
    cur ^= 1;
  }
  if (pos != width * height) throw ShapeError("rle: runs cover " + std::to_string(pos) + " of " +
                                              std::to_string(width * height) + " pixels");
  return m;
}

}  // namespace choi
