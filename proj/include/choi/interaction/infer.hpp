#pragma once

#include "choi/interaction/model.hpp"
#include "choi/metrics/evaluate.hpp"
#include "choi/synth/scene.hpp"

namespace choi {

struct PredictedTriplet {
  std::size_t human = 0;  // indices into ImagePrediction::instances
  std::size_t object = 0;
  int verb = 0;
  double score = 0.0;
};

struct ImagePrediction {
  std::string image_id;
  std::vector<Instance> instances;
  std::vector<PredictedTriplet> triplets;
  std::size_t dropped = 0;  // lineages ended by a degenerate refinement
};

inline std::vector<Instance> seed_instances(const std::vector<Proposal>& proposals) {
  std::vector<Instance> seeds;
  seeds.reserve(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i)
    seeds.push_back({proposals[i].class_id, 1.0, proposals[i].box, std::nullopt, 0, int(i)});
  return seeds;
}

/// Stage-t visual feature of a lineage pair; zeros before the first stage.
inline Tensor lineage_visual(const CascadeModel& m, const Tensor& grid, const ImageSize& img, const CascadeRun& run,
                             int h_lineage, int o_lineage, std::size_t t) {
  if (t == 0) return Tensor::grid(3 * m.dims.channels, kPooledSize, kPooledSize);
  return visual_feature(grid, lineage_at(run.lineage[std::size_t(h_lineage)], t),
                        lineage_at(run.lineage[std::size_t(o_lineage)], t), m.stages[t - 1].rel, img, m.rep)
      .xv;
}

/// Full cascade inference for one image: localize through every stage, merge
/// and filter, pair, rank with the last-stage RRM, keep the top K, and score
/// verbs with the last-stage RCM.
inline ImagePrediction infer_image(const CascadeModel& m, const Tensor& grid, const ImageSize& img,
                                   const std::vector<Instance>& seeds, FusionRule fusion = FusionRule::hadamard) {
  m.check_grid(grid);
  const auto T = std::size_t(m.config.stages);
  ImagePrediction out;
  const CascadeRun run = run_cascade(m, grid, img, seeds);
  out.dropped = run.dropped;
  out.instances = collapse_lineages(merge_and_filter(run.per_stage, m.config.merge_threshold));

  const RelationStage& last = m.stages[T - 1].rel;
  std::vector<HOICandidate> cands;
  for (const auto& [h, o] : enumerate_pairs(out.instances)) {
    HOICandidate c;
    c.human = h;
    c.object = o;
    c.order = cands.size();
    const Instance& hi = out.instances[h];
    const Instance& oi = out.instances[o];
    c.features.x_s = semantic_prior(oi.class_id, m.cooc);
    c.features.x_g = geometric_input(m, hi, oi);
    c.features.x_v = lineage_visual(m, grid, img, run, hi.lineage, oi.lineage, T);
    const Tensor prev = lineage_visual(m, grid, img, run, hi.lineage, oi.lineage, T - 1);
    c.features.x_v_fused = cross_stage_fuse(c.features.x_v, prev, last.fuse);
    cands.push_back(std::move(c));
  }
  rank_pairs(cands, last.rrm);
  select_topk(cands, m.config.top_k);
  for (auto& c : cands) {
    c.streams = classify_relation(c.features, last.rcm);
    c.fused = fuse_scores(c.streams, fusion);
    for (Eigen::Index v = 0; v < c.fused.size(); ++v) out.triplets.push_back({c.human, c.object, int(v), c.fused[v]});
  }
  return out;
}

inline ImagePrediction infer_sample(const CascadeModel& m, const Sample& s, FusionRule fusion = FusionRule::hadamard) {
  ImagePrediction p = infer_image(m, s.grid, s.scene.size, seed_instances(s.scene.proposals), fusion);
  p.image_id = s.scene.image_id;
  return p;
}

/// Prediction -> metric records. Masks are shared between triplets of the same instance.
inline ImageTriplets to_records(const ImagePrediction& p) {
  std::vector<std::shared_ptr<const BitMask>> masks;
  for (const auto& inst : p.instances)
    masks.push_back(inst.mask ? std::make_shared<const BitMask>(*inst.mask) : nullptr);
  ImageTriplets out{p.image_id, {}};
  for (const auto& t : p.triplets)
    out.triplets.push_back({p.instances[t.human].box, p.instances[t.object].box, masks[t.human], masks[t.object], t.verb,
                            t.score});
  return out;
}

inline ImageTriplets ground_truth_records(const Scene& s) {
  std::map<int, std::shared_ptr<const BitMask>> masks;
  for (const auto& e : s.entities) masks[e.id] = std::make_shared<const BitMask>(e.mask);
  ImageTriplets out{s.image_id, {}};
  for (const auto& t : s.triplets)
    out.triplets.push_back({s.entity(t.human).box, s.entity(t.object).box, masks[t.human], masks[t.object], t.verb, 1.0});
  return out;
}

}  // namespace choi
