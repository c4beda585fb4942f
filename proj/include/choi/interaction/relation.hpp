#pragma once

#include "choi/cascade/config.hpp"
#include "choi/cascade/instance.hpp"
#include "choi/numerics/layers.hpp"
#include "choi/numerics/losses.hpp"

#include <algorithm>
#include <numeric>
#include <optional>

namespace choi {

/// g(P) = sigmoid(FC([Xbar_v; X_g])).
struct RRMHead {
  FCLayer fc;
  static RRMHead glorot(std::size_t visual_dim, std::size_t geo_dim, Rng& rng) {
    return {FCLayer::glorot(visual_dim + geo_dim, 1, Activation::sigmoid, rng)};
  }
};

/// Three independent verb scorers, one per feature stream.
struct RCMHeads {
  FCLayer semantic;   // N -> N
  FCLayer geometric;  // geo_dim -> N
  FCLayer visual;     // visual_dim -> N

  static RCMHeads glorot(std::size_t num_verbs, std::size_t geo_dim, std::size_t visual_dim, Rng& rng) {
    return {FCLayer::glorot(num_verbs, num_verbs, Activation::sigmoid, rng),
            FCLayer::glorot(geo_dim, num_verbs, Activation::sigmoid, rng),
            FCLayer::glorot(visual_dim, num_verbs, Activation::sigmoid, rng)};
  }
};

struct RelationFeatures {
  Vector x_s;
  Vector x_g;
  Tensor x_v;
  std::optional<Vector> x_v_fused;
  double rank_score = 0.0;
};

struct StreamScores {
  Vector semantic, geometric, visual;
};

struct HOICandidate {
  std::size_t human = 0;   // index into the instance list the pair was built from
  std::size_t object = 0;
  std::size_t order = 0;   // enumeration position, the ranking tie-break
  RelationFeatures features;
  StreamScores streams;
  Vector fused;
};

/// Ordered (human, object) index pairs: every human-class instance against
/// every other instance, in input order.
inline std::vector<std::pair<std::size_t, std::size_t>> enumerate_pairs(const std::vector<Instance>& instances) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t h = 0; h < instances.size(); ++h) {
    if (!instances[h].is_human()) continue;
    for (std::size_t o = 0; o < instances.size(); ++o)
      if (o != h) pairs.emplace_back(h, o);
  }
  return pairs;
}

inline Vector rrm_input(const Vector& x_v_fused, const Vector& x_g) {
  Vector x(x_v_fused.size() + x_g.size());
  x << x_v_fused, x_g;
  return x;
}

inline double rank_score(const RelationFeatures& f, const RRMHead& rrm) {
  if (!f.x_v_fused || f.x_g.size() == 0) throw std::invalid_argument("rank_score: pair features not built");
  return fc_forward(rrm_input(*f.x_v_fused, f.x_g), rrm.fc)[0];
}

/// Scores every candidate and sorts by g descending; equal scores keep
/// enumeration order.
inline void rank_pairs(std::vector<HOICandidate>& candidates, const RRMHead& rrm) {
  for (auto& c : candidates) c.features.rank_score = rank_score(c.features, rrm);
  std::stable_sort(candidates.begin(), candidates.end(), [](const HOICandidate& a, const HOICandidate& b) {
    return a.features.rank_score > b.features.rank_score;
  });
}

inline void select_topk(std::vector<HOICandidate>& ranked, int k) {
  if (k < 1) throw std::invalid_argument("select_topk: K must be >= 1");
  if (ranked.size() > std::size_t(k)) ranked.resize(std::size_t(k));
}

inline StreamScores classify_relation(const RelationFeatures& f, const RCMHeads& heads) {
  if (!f.x_v_fused) throw std::invalid_argument("classify_relation: fused visual feature missing");
  return {fc_forward(f.x_s, heads.semantic), fc_forward(f.x_g, heads.geometric), fc_forward(*f.x_v_fused, heads.visual)};
}

enum class FusionRule { hadamard, sum };

inline const char* to_string(FusionRule r) { return r == FusionRule::hadamard ? "hadamard" : "sum"; }

/// s = (s_v + s_g) * s_s elementwise.
inline Vector fuse_scores(const Vector& s_v, const Vector& s_g, const Vector& s_s) {
  if (s_v.size() != s_g.size() || s_v.size() != s_s.size())
    throw ShapeError("fuse_scores: stream lengths " + std::to_string(s_v.size()) + ", " + std::to_string(s_g.size()) +
                     ", " + std::to_string(s_s.size()));
  return ((s_v + s_g).array() * s_s.array()).matrix();
}

/// Ablation baseline: s = s_v + s_g + s_s.
inline Vector fuse_scores_sum(const Vector& s_v, const Vector& s_g, const Vector& s_s) {
  if (s_v.size() != s_g.size() || s_v.size() != s_s.size()) throw ShapeError("fuse_scores_sum: stream lengths differ");
  return s_v + s_g + s_s;
}

inline Vector fuse_scores(const StreamScores& s, FusionRule rule) {
  return rule == FusionRule::hadamard ? fuse_scores(s.visual, s.geometric, s.semantic)
                                      : fuse_scores_sum(s.visual, s.geometric, s.semantic);
}

// ---------------------------------------------------------------------------
// Training-pair sampling.
// ---------------------------------------------------------------------------

struct TrainBatchSpec {
  std::size_t max_pairs = 128;
  std::size_t pos_share = 1;  // positives : negatives
  std::size_t neg_share = 3;
  bool include_gt_pairs = true;
};

struct PairBoxes {
  Box human, object;
};

/// One annotated (human, object) pair with its multi-hot verb vector.
struct GtPair {
  Box human, object;
  Vector verbs;
};

struct LabeledPair {
  bool from_gt = false;      // true: `index` refers to the ground-truth pair list
  std::size_t index = 0;
  bool positive = false;
  Vector target;             // multi-hot verbs, zeros for negatives
};

/// First ground-truth pair (in list order) whose human and object both reach
/// IoU >= mu with the candidate, or -1.
inline int match_gt_pair(const PairBoxes& c, const std::vector<GtPair>& gt, double mu) {
  for (std::size_t g = 0; g < gt.size(); ++g)
    if (box_iou(c.human, gt[g].human) >= mu && box_iou(c.object, gt[g].object) >= mu) return int(g);
  return -1;
}

/// Label candidates against ground-truth pairs at IoU `mu`, append the
/// ground-truth pairs as positives, then subsample to at most max_pairs with
/// num_pos = min(#pos, max/(1+r)) and num_neg = min(#neg, max - num_pos,
/// r * max(num_pos, 1)) for a 1:r ratio. Selected items keep their pool order.
inline std::vector<LabeledPair> sample_training_pairs(const std::vector<PairBoxes>& candidates,
                                                      const std::vector<GtPair>& gt, double mu,
                                                      const TrainBatchSpec& spec, Rng& rng) {
  if (!(mu > 0.0 && mu < 1.0)) throw std::invalid_argument("sample_training_pairs: IoU threshold must lie in (0, 1)");
  const auto n_verbs = gt.empty() ? Eigen::Index(0) : gt.front().verbs.size();
  std::vector<LabeledPair> pos, neg;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const int g = match_gt_pair(candidates[i], gt, mu);
    if (g >= 0)
      pos.push_back({false, i, true, gt[std::size_t(g)].verbs});
    else
      neg.push_back({false, i, false, Vector::Zero(n_verbs)});
  }
  if (spec.include_gt_pairs)
    for (std::size_t g = 0; g < gt.size(); ++g) pos.push_back({true, g, true, gt[g].verbs});

  const std::size_t pos_cap = spec.max_pairs * spec.pos_share / (spec.pos_share + spec.neg_share);
  const std::size_t num_pos = std::min(pos.size(), pos_cap);
  const std::size_t neg_for_ratio = spec.neg_share * std::max<std::size_t>(num_pos, 1) / spec.pos_share;
  const std::size_t num_neg = std::min({neg.size(), spec.max_pairs - num_pos, neg_for_ratio});

  auto pick = [&rng](std::vector<LabeledPair>& pool, std::size_t k) {
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    std::vector<LabeledPair> out;
    out.reserve(k);
    for (auto i : idx) out.push_back(std::move(pool[i]));
    return out;
  };
  std::vector<LabeledPair> batch = pick(pos, num_pos);
  for (auto& p : pick(neg, num_neg)) batch.push_back(std::move(p));
  return batch;
}

// ---------------------------------------------------------------------------
// Joint objective.
// ---------------------------------------------------------------------------

struct StageLosses {
  double loc = 0.0;
  double seg = 0.0;
  double rrm = 0.0;
  double rcm = 0.0;
};

/// Per stage: loc_weight * loc + relation_weight * (rank + cls), plus seg_weight * seg when masks train.
inline double total_loss(const std::vector<StageLosses>& stages, const CascadeConfig& cfg, bool with_seg) {
  if (stages.size() != std::size_t(cfg.stages))
    throw std::invalid_argument("total_loss: expected " + std::to_string(cfg.stages) + " stage entries");
  double total = 0.0;
  for (std::size_t t = 0; t < stages.size(); ++t) {
    total += cfg.loc_weights[t] * stages[t].loc + cfg.relation_weights[t] * (stages[t].rrm + stages[t].rcm);
    if (with_seg) total += cfg.seg_weights[t] * stages[t].seg;
  }
  return total;
}

}  // namespace choi
