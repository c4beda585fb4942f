#pragma once

#include "choi/interaction/train.hpp"

namespace choi {

// Model probes on annotated scenes, independent of the inference path's
// pruning and merging.

struct RankingCheck {
  std::size_t scenes = 0;          // scenes with both annotated and un-annotated pairs
  std::size_t violations = 0;      // (annotated, un-annotated) pairs ranked the wrong way
  std::size_t comparisons = 0;
  double mean_hinge = 0.0;         // per-scene hinge normalized by npos * nneg, averaged
  double min_gap = std::numeric_limits<double>::infinity();  // min over scenes of min(pos) - max(neg)
};

/// Last-stage ranking score of every (person, other entity) pair built from the
/// annotated boxes, compared between annotated and un-annotated pairs.
inline RankingCheck ranking_constraint(const CascadeModel& m, const std::vector<Sample>& data) {
  const auto T = std::size_t(m.config.stages);
  const bool masks = m.mode == PipelineMode::segment;
  const RelationStage& last = m.stages[T - 1].rel;
  RankingCheck out;
  double hinge_sum = 0.0;
  for (const auto& s : data) {
    std::vector<Instance> inst;
    for (const auto& e : s.scene.entities) inst.push_back(entity_instance(e, int(T), masks));
    const auto annotated = annotated_pairs(s.scene, m.dims.num_verbs);
    std::vector<double> pos, neg;
    for (const auto& [h, o] : enumerate_pairs(inst)) {
      const Entity& he = s.scene.entities[h];
      const Entity& oe = s.scene.entities[o];
      RelationFeatures f;
      f.x_s = semantic_prior(oe.class_id, m.cooc);
      f.x_g = geometric_input(m, inst[h], inst[o]);
      f.x_v = visual_feature(s.grid, inst[h], inst[o], last, s.scene.size, m.rep).xv;
      const Tensor prev = T > 1 ? visual_feature(s.grid, inst[h], inst[o], m.stages[T - 2].rel, s.scene.size, m.rep).xv
                                : Tensor::grid(3 * m.dims.channels, kPooledSize, kPooledSize);
      f.x_v_fused = cross_stage_fuse(f.x_v, prev, last.fuse);
      const double g = rank_score(f, last.rrm);
      const bool is_pos = std::any_of(annotated.begin(), annotated.end(),
                                      [&](const auto& a) { return a.first == std::pair{he.id, oe.id}; });
      (is_pos ? pos : neg).push_back(g);
    }
    if (pos.empty() || neg.empty()) continue;
    ++out.scenes;
    const Vector vp = Eigen::Map<const Vector>(pos.data(), Eigen::Index(pos.size()));
    const Vector vn = Eigen::Map<const Vector>(neg.data(), Eigen::Index(neg.size()));
    hinge_sum += pairwise_hinge_loss(vp, vn, m.config.rank_margin).loss / double(pos.size() * neg.size());
    for (double p : pos)
      for (double n : neg) {
        ++out.comparisons;
        if (!(p > n)) ++out.violations;
      }
    out.min_gap = std::min(out.min_gap, vp.minCoeff() - vn.maxCoeff());
  }
  if (out.scenes) out.mean_hinge = hinge_sum / double(out.scenes);
  return out;
}

/// Mean IoU with the source entity at stages 0..T, over seed proposals that
/// came from an entity and survived every stage.
inline std::vector<double> stage_iou_profile(const CascadeModel& m, const std::vector<Sample>& data) {
  const auto T = std::size_t(m.config.stages);
  std::vector<double> sum(T + 1, 0.0);
  std::size_t n = 0;
  for (const auto& s : data) {
    const CascadeRun run = run_cascade(m, s.grid, s.scene.size, seed_instances(s.scene.proposals));
    for (std::size_t l = 0; l < run.lineage.size(); ++l) {
      const int ent = s.scene.proposals[l].entity;
      if (ent < 0 || !run.lineage[l][T]) continue;
      const Box& target = s.scene.entity(ent).box;
      for (std::size_t t = 0; t <= T; ++t) sum[t] += box_iou(run.lineage[l][t]->box, target);
      ++n;
    }
  }
  if (n)
    for (double& v : sum) v /= double(n);
  return sum;
}

}  // namespace choi
