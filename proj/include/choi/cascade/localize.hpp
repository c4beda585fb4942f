#pragma once

#include "choi/cascade/config.hpp"
#include "choi/cascade/stage.hpp"
#include "choi/numerics/losses.hpp"

#include <map>

namespace choi {

struct GroundTruthBox {
  Box box;
  int class_id = 0;
};

/// One labeled localization sample for a stage.
struct LocSample {
  Box box;
  bool positive = false;
  int gt_index = -1;  // matched ground truth, -1 for negatives
  int class_id = -1;
  double iou = 0.0;
  BoxDeltas target;  // regression target toward the matched ground truth
};

/// Label proposals for a stage at IoU threshold `mu`; ground-truth boxes are
/// appended as positives. Ties in max IoU go to the first ground truth.
inline std::vector<LocSample> resample_for_stage(const std::vector<Box>& proposals,
                                                 const std::vector<GroundTruthBox>& gt, double mu) {
  if (!(mu > 0.0 && mu < 1.0)) throw std::invalid_argument("resample_for_stage: IoU threshold must lie in (0, 1)");
  std::vector<LocSample> out;
  out.reserve(proposals.size() + gt.size());
  for (const Box& p : proposals) {
    LocSample s;
    s.box = p;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double iou = box_iou(p, gt[g].box);
      if (iou > s.iou) s.iou = iou, s.gt_index = int(g);
    }
    if (s.gt_index >= 0 && s.iou >= mu) {
      s.positive = true;
      s.class_id = gt[std::size_t(s.gt_index)].class_id;
      s.target = box_deltas(p, gt[std::size_t(s.gt_index)].box);
    } else {
      s.gt_index = -1;
    }
    out.push_back(s);
  }
  for (std::size_t g = 0; g < gt.size(); ++g)
    out.push_back({gt[g].box, true, int(g), gt[g].class_id, 1.0, BoxDeltas{}});
  return out;
}

/// Concatenate all stages' outputs (stage order, then input order) and drop
/// instances with confidence below tau.
inline std::vector<Instance> merge_and_filter(const std::vector<std::vector<Instance>>& per_stage, double tau) {
  if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("merge_and_filter: threshold must lie in [0, 1]");
  std::vector<Instance> out;
  for (const auto& stage : per_stage)
    for (const auto& inst : stage)
      if (inst.confidence >= tau) out.push_back(inst);
  return out;
}

/// Keep one instance per lineage: the survivor from the latest stage. Output
/// is ordered by lineage id.
inline std::vector<Instance> collapse_lineages(const std::vector<Instance>& merged) {
  std::map<int, const Instance*> latest;
  for (const auto& inst : merged) {
    auto& slot = latest[inst.lineage];
    if (!slot || inst.stage >= slot->stage) slot = &inst;
  }
  std::vector<Instance> out;
  out.reserve(latest.size());
  for (const auto& [lineage, inst] : latest) out.push_back(*inst);
  return out;
}

struct LocLoss {
  double loss = 0.0;
  double score_loss = 0.0;
  double box_loss = 0.0;
};

/// Mean BCE on the refined confidence over all samples plus mean smooth-L1 on
/// normalized deltas over positives. Accumulates head gradients scaled by `weight`.
inline LocLoss localization_loss(const Tensor& grid, const std::vector<LocSample>& samples, StageHead& head,
                                 const ImageSize& img, double weight, bool accumulate = true) {
  LocLoss out;
  if (samples.empty()) return out;
  const auto n = Eigen::Index(samples.size());
  const auto in = Eigen::Index(head.scorer.in_dim());
  Matrix X(in, n);
  for (Eigen::Index i = 0; i < n; ++i) X.col(i) = roi_align(grid, samples[std::size_t(i)].box, img).flat();

  const Matrix logits = fc_forward_batch(X, head.scorer);
  const Vector probs = sigmoid(Vector(logits.row(0).transpose()));
  Vector targets(n);
  for (Eigen::Index i = 0; i < n; ++i) targets[i] = samples[std::size_t(i)].positive ? 1.0 : 0.0;
  const LossGrad bce = binary_cross_entropy(probs, targets);
  out.score_loss = bce.loss / double(n);

  std::vector<Eigen::Index> pos;
  for (Eigen::Index i = 0; i < n; ++i)
    if (samples[std::size_t(i)].positive) pos.push_back(i);
  Matrix dreg;
  Matrix Xpos(in, Eigen::Index(pos.size()));
  if (!pos.empty()) {
    for (std::size_t k = 0; k < pos.size(); ++k) Xpos.col(Eigen::Index(k)) = X.col(pos[k]);
    const Matrix reg = fc_forward_batch(Xpos, head.regressor);
    dreg = Matrix::Zero(4, Eigen::Index(pos.size()));
    for (std::size_t k = 0; k < pos.size(); ++k) {
      const LossGrad sl = smooth_l1(reg.col(Eigen::Index(k)), normalize(samples[std::size_t(pos[k])].target));
      out.box_loss += sl.loss;
      dreg.col(Eigen::Index(k)) = sl.grad;
    }
    out.box_loss /= double(pos.size());
    dreg /= double(pos.size());
  }
  out.loss = out.score_loss + out.box_loss;
  if (!accumulate || weight == 0.0) return out;

  // Logit-space gradient p - t: keeps learning even where the reported loss is clamped.
  const Matrix dlogit = (probs - targets).transpose() * (weight / double(n));
  fc_backward_pre(head.scorer, X, dlogit, false);
  if (!pos.empty()) fc_backward_batch(head.regressor, Xpos, Matrix(), dreg * weight, false);
  return out;
}

struct SegSample {
  Box box;            // refined box the mask is predicted in
  Vector prev_pooled;  // empty on the first stage
  Vector target;      // 14x14 ground-truth occupancy
};

/// Mean over samples of the per-cell BCE summed over the 196 cells.
inline double segmentation_loss(const Tensor& grid, const std::vector<SegSample>& samples, SegHead& head,
                                const ImageSize& img, double weight, bool accumulate = true) {
  if (samples.empty()) return 0.0;
  const auto n = Eigen::Index(samples.size());
  Matrix X(Eigen::Index(head.fc.in_dim()), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[std::size_t(i)];
    X.col(i) = seg_input(grid, s.box, img, s.prev_pooled.size() ? &s.prev_pooled : nullptr);
  }
  const Matrix logits = fc_forward_batch(X, head.fc);
  Matrix dlogit(logits.rows(), n);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector p = sigmoid(Vector(logits.col(i)));
    loss += binary_cross_entropy(p, samples[std::size_t(i)].target).loss;
    dlogit.col(i) = p - samples[std::size_t(i)].target;
  }
  if (accumulate && weight != 0.0) fc_backward_pre(head.fc, X, dlogit * (weight / double(n)), false);
  return loss / double(n);
}

}  // namespace choi
