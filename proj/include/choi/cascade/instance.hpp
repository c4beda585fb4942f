#pragma once

#include "choi/geometry/box.hpp"
#include "choi/geometry/mask.hpp"
#include "choi/geometry/roi.hpp"
#include "choi/geometry/spatial.hpp"

#include <optional>

namespace choi {

constexpr int kPersonClass = 0;

/// A detected entity. `lineage` identifies the seed proposal an instance was
/// refined from, so the same entity can be followed across stages.
struct Instance {
  int class_id = 0;
  double confidence = 1.0;
  Box box;
  std::optional<BitMask> mask;
  int stage = 0;  // 0 = seed proposal, t = output of stage t
  int lineage = -1;

  bool is_human() const { return class_id == kPersonClass; }
};

/// Pooled feature of an instance: mask-restricted in mask mode when a usable
/// mask exists, box RoIAlign otherwise.
inline Tensor pool_instance(const Tensor& grid, const Instance& inst, const ImageSize& img, Representation rep) {
  if (rep == Representation::mask && inst.mask) {
    try {
      return mask_roi_align(grid, *inst.mask, img);
    } catch (const InvalidInstance&) {
      // Masks thinner than one feature cell: fall through to the box.
    }
  }
  return roi_align(grid, inst.box, img);
}

inline Tensor spatial_pair_encoding(const Instance& h, const Instance& o, Representation mode) {
  return spatial_pair_encoding(SpatialEntity{h.box, h.mask ? &*h.mask : nullptr},
                               SpatialEntity{o.box, o.mask ? &*o.mask : nullptr}, mode);
}

}  // namespace choi
