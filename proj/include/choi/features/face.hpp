#pragma once

#include "choi/cascade/instance.hpp"

namespace choi {

struct FaceRegion {
  enum class Source { annotated, heuristic };
  Box box;
  Source source = Source::heuristic;
};

/// Stand-in for a face detector: the annotated box when given, otherwise the
/// top 30% of the human box height and the middle 50% of its width. The result
/// is always clipped to the human box.
inline FaceRegion face_region(const Instance& human, const std::optional<Box>& annotation = std::nullopt) {
  const Box& h = human.box;
  if (annotation) return {intersect_box(*annotation, h), FaceRegion::Source::annotated};
  const double w = h.width(), ht = h.height();
  const Box face{h.x1 + 0.25 * w, h.y1, h.x1 + 0.75 * w, h.y1 + 0.30 * ht};
  return {intersect_box(face, h), FaceRegion::Source::heuristic};
}

/// Grid-resolution keep mask for the face-removed human: every cell except the
/// face cells, further restricted to the human mask when pooling by mask.
inline BitMask face_removed_keep(std::size_t grid_h, std::size_t grid_w, const Instance& human, const FaceRegion& face,
                                 const ImageSize& img, Representation rep) {
  BitMask keep(grid_w, grid_h);
  if (rep == Representation::mask && human.mask) {
    keep = downsample_mask(*human.mask, grid_h, grid_w);
  } else {
    std::fill(keep.bits().begin(), keep.bits().end(), 1);
  }
  const BitMask face_cells = downsample_mask(box_mask(face.box, img), grid_h, grid_w);
  for (std::size_t i = 0; i < keep.bits().size(); ++i)
    if (face_cells.bits()[i]) keep.bits()[i] = 0;
  return keep;
}

}  // namespace choi
