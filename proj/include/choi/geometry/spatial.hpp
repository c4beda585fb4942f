#pragma once

#include "choi/geometry/mask.hpp"

namespace choi {

constexpr std::size_t kSpatialMapSize = 64;

enum class Representation { box, mask };

inline const char* to_string(Representation r) { return r == Representation::box ? "box" : "mask"; }

/// One side of a pair for the spatial encoding: its box, plus a mask in mask mode.
struct SpatialEntity {
  Box box;
  const BitMask* mask = nullptr;
};

/// Two-channel occupancy map (human, object) rasterized in the union-box frame.
/// Sample points are the 64x64 cell centers, compared in normalized union
/// coordinates so the map is invariant to joint translation and scaling.
inline Tensor spatial_pair_encoding(const SpatialEntity& h, const SpatialEntity& o, Representation mode,
                                    std::size_t size = kSpatialMapSize) {
  const Box u = union_box(h.box, o.box);
  const double uw = u.width(), uh = u.height();
  Tensor map = Tensor::grid(2, size, size);
  const SpatialEntity* sides[2] = {&h, &o};
  for (std::size_t ch = 0; ch < 2; ++ch) {
    const SpatialEntity& e = *sides[ch];
    const bool use_mask = mode == Representation::mask && e.mask != nullptr;
    const double nx1 = (e.box.x1 - u.x1) / uw, nx2 = (e.box.x2 - u.x1) / uw;
    const double ny1 = (e.box.y1 - u.y1) / uh, ny2 = (e.box.y2 - u.y1) / uh;
    for (std::size_t r = 0; r < size; ++r) {
      const double fy = (r + 0.5) / double(size);
      for (std::size_t c = 0; c < size; ++c) {
        const double fx = (c + 0.5) / double(size);
        bool inside;
        if (use_mask) {
          const double px = u.x1 + fx * uw, py = u.y1 + fy * uh;
          const auto ix = static_cast<long>(std::floor(px)), iy = static_cast<long>(std::floor(py));
          inside = ix >= 0 && iy >= 0 && ix < long(e.mask->width()) && iy < long(e.mask->height()) &&
                   e.mask->get(std::size_t(ix), std::size_t(iy));
        } else {
          inside = fx >= nx1 && fx < nx2 && fy >= ny1 && fy < ny2;
        }
        map.at(ch, r, c) = inside ? 1.0 : 0.0;
      }
    }
  }
  return map;
}

}  // namespace choi
