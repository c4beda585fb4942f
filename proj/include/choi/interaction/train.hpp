#pragma once

#include "choi/interaction/infer.hpp"

#include <functional>
#include <map>

namespace choi {

struct TrainOptions {
  double lr = 0.01;
  double clip_norm = 5.0;  // global gradient norm cap per step; 0 disables
  int loc_epochs = 30;   // phase 1: localization (and segmentation) heads only
  int joint_epochs = 6;  // phase 2: everything
  std::uint64_t seed = 1;
  TrainBatchSpec batch;
  std::function<void(const std::string&)> log;
};

struct EpochStats {
  int epoch = 0;
  std::string phase;
  StageLosses mean;  // averaged over images and stages (unweighted)
  double total = 0.0;  // mean weighted objective per image
};

/// Annotated (human, object) entity pairs with multi-hot verbs, in first-seen order.
inline std::vector<std::pair<std::pair<int, int>, Vector>> annotated_pairs(const Scene& s, std::size_t num_verbs) {
  std::vector<std::pair<std::pair<int, int>, Vector>> out;
  for (const auto& t : s.triplets) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == std::pair{t.human, t.object}; });
    if (it == out.end()) {
      out.push_back({{t.human, t.object}, Vector::Zero(Eigen::Index(num_verbs))});
      it = std::prev(out.end());
    }
    it->second[t.verb] = 1.0;
  }
  return out;
}

inline Instance entity_instance(const Entity& e, int stage, bool with_mask) {
  Instance inst{e.class_id, 1.0, e.box, std::nullopt, stage, -1 - e.id};
  if (with_mask) inst.mask = e.mask;
  return inst;
}

/// Human and object instances of one pair at one stage.
struct PairSide {
  const Instance* human;
  const Instance* object;
};

class Trainer {
 public:
  Trainer(CascadeModel& model, TrainOptions opts) : m_(model), opts_(std::move(opts)), rng_(opts_.seed) {}

  /// One image; returns unweighted per-stage losses. Gradients are left in the
  /// parameter blocks for the caller's optimizer step.
  std::vector<StageLosses> accumulate(const Sample& s, bool joint) {
    m_.check_grid(s.grid);
    const auto T = std::size_t(m_.config.stages);
    const ImageSize img = s.scene.size;
    std::vector<StageLosses> losses(T);
    const CascadeRun run = run_cascade(m_, s.grid, img, seed_instances(s.scene.proposals));

    std::vector<GroundTruthBox> gt;
    for (const auto& e : s.scene.entities) gt.push_back({e.box, e.class_id});

    for (std::size_t t = 1; t <= T; ++t) {
      StageParams& sp = m_.stages[t - 1];
      std::vector<Box> inputs;
      for (const auto& lin : run.lineage)
        if (lin[t - 1]) inputs.push_back(lin[t - 1]->box);
      const auto samples = resample_for_stage(inputs, gt, m_.config.iou_thresholds[t - 1]);
      losses[t - 1].loc = localization_loss(s.grid, samples, sp.loc, img, m_.config.loc_weights[t - 1]).loss;
      if (m_.mode == PipelineMode::segment)
        losses[t - 1].seg = segmentation_loss(s.grid, seg_samples(s, run, t), sp.seg, img, m_.config.seg_weights[t - 1]);
    }
    if (joint) relation_step(s, run, losses);
    return losses;
  }

  std::vector<EpochStats> fit(const std::vector<Sample>& data) {
    if (data.empty()) throw std::invalid_argument("train: empty training set");
    std::vector<EpochStats> history;
    ParamStore loc_params = m_.localization_params();
    ParamStore all = m_.all_params();
    all.zero_grad();
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    const int epochs = opts_.loc_epochs + opts_.joint_epochs;
    for (int e = 0; e < epochs; ++e) {
      const bool joint = e >= opts_.loc_epochs;
      rng_.shuffle(order);
      EpochStats st{e + 1, joint ? "joint" : "localization", {}, 0.0};
      for (std::size_t i : order) {
        const auto losses = accumulate(data[i], joint);
        ParamStore& store = joint ? all : loc_params;
        double lr = opts_.lr;
        if (opts_.clip_norm > 0.0) {
          // Clipping folded into the step size: same update, one pass fewer.
          const double norm = grad_norm(store);
          if (norm > opts_.clip_norm) lr *= opts_.clip_norm / norm;
        }
        sgd_step(store, lr);
        st.total += total_loss(losses, m_.config, m_.mode == PipelineMode::segment);
        for (const auto& l : losses) {
          st.mean.loc += l.loc, st.mean.seg += l.seg, st.mean.rrm += l.rrm, st.mean.rcm += l.rcm;
        }
      }
      const double n = double(data.size()), nt = n * double(m_.config.stages);
      st.total /= n;
      st.mean.loc /= nt, st.mean.seg /= nt, st.mean.rrm /= nt, st.mean.rcm /= nt;
      if (opts_.log) {
        std::ostringstream os;
        os << "epoch " << st.epoch << " [" << st.phase << "] loss " << st.total << " (loc " << st.mean.loc << ", seg "
           << st.mean.seg << ", rrm " << st.mean.rrm << ", rcm " << st.mean.rcm << ")";
        opts_.log(os.str());
      }
      history.push_back(st);
    }
    return history;
  }

 private:
  std::vector<SegSample> seg_samples(const Sample& s, const CascadeRun& run, std::size_t t) const {
    const ImageSize img = s.scene.size;
    const double mu = m_.config.iou_thresholds[t - 1];
    std::vector<SegSample> out;
    auto prev_of = [&](const Box& b) { return t > 1 ? Vector(roi_align(s.grid, b, img).flat()) : Vector(); };
    for (const auto& lin : run.lineage) {
      if (!lin[t]) continue;
      const Box& box = lin[t]->box;
      const Entity* best = nullptr;
      double best_iou = 0.0;
      for (const auto& e : s.scene.entities) {
        const double iou = box_iou(box, e.box);
        if (iou > best_iou) best_iou = iou, best = &e;
      }
      if (best && best_iou >= mu) out.push_back({box, prev_of(lin[t - 1]->box), mask_target(best->mask, box)});
    }
    for (const auto& e : s.scene.entities) out.push_back({e.box, prev_of(e.box), mask_target(e.mask, e.box)});
    return out;
  }

  void relation_step(const Sample& s, const CascadeRun& run, std::vector<StageLosses>& losses) {
    const auto T = std::size_t(m_.config.stages);
    const ImageSize img = s.scene.size;
    const bool masks = m_.mode == PipelineMode::segment;
    const auto nv = Eigen::Index(m_.dims.num_verbs);

    // Lineages that survived every stage, paired on their final instances.
    std::vector<std::size_t> alive;
    std::vector<Instance> finals;
    for (std::size_t l = 0; l < run.lineage.size(); ++l)
      if (run.lineage[l][T]) alive.push_back(l), finals.push_back(*run.lineage[l][T]);
    const auto cand = enumerate_pairs(finals);

    std::map<int, Instance> gt_inst;
    for (const auto& e : s.scene.entities) gt_inst.emplace(e.id, entity_instance(e, 0, masks));
    const auto annotated = annotated_pairs(s.scene, m_.dims.num_verbs);
    std::vector<GtPair> gt_pairs;
    for (const auto& [ids, verbs] : annotated)
      gt_pairs.push_back({s.scene.entity(ids.first).box, s.scene.entity(ids.second).box, verbs});

    auto side = [&](bool from_gt, std::size_t idx, std::size_t t) -> PairSide {
      if (from_gt) {
        const auto& ids = annotated[idx].first;
        return {&gt_inst.at(ids.first), &gt_inst.at(ids.second)};
      }
      return {&lineage_at(run.lineage[alive[cand[idx].first]], t), &lineage_at(run.lineage[alive[cand[idx].second]], t)};
    };

    // X_g per pair key, computed once from the final boxes and shared by all stages.
    struct GeoEntry {
      ConvPoolTrace trace;
      Vector grad;
    };
    std::map<std::pair<bool, std::size_t>, GeoEntry> geo;
    auto geo_of = [&](bool from_gt, std::size_t idx) -> GeoEntry& {
      auto key = std::pair{from_gt, idx};
      auto it = geo.find(key);
      if (it == geo.end()) {
        const PairSide p = side(from_gt, idx, T);
        ConvPoolTrace tr = conv_pool_trace(spatial_pair_encoding(*p.human, *p.object, m_.rep), m_.geo);
        it = geo.emplace(key, GeoEntry{std::move(tr), Vector::Zero(Eigen::Index(m_.dims.geo_out))}).first;
      }
      return it->second;
    };

    // Stage-t visual trace per pair key; stage t reuses stage t-1 entries as X_v^{t-1}.
    std::map<std::tuple<bool, std::size_t, std::size_t>, VisualTrace> visual;
    auto visual_of = [&](bool from_gt, std::size_t idx, std::size_t t) -> const VisualTrace& {
      auto key = std::tuple{from_gt, idx, t};
      auto it = visual.find(key);
      if (it == visual.end()) {
        const PairSide p = side(from_gt, idx, t);
        it = visual.emplace(key, visual_feature(s.grid, *p.human, *p.object, m_.stages[t - 1].rel, img, m_.rep)).first;
      }
      return it->second;
    };

    for (std::size_t t = 1; t <= T; ++t) {
      RelationStage& rs = m_.stages[t - 1].rel;
      std::vector<PairBoxes> boxes;
      for (std::size_t i = 0; i < cand.size(); ++i) {
        const PairSide p = side(false, i, t);
        boxes.push_back({p.human->box, p.object->box});
      }
      const auto batch = sample_training_pairs(boxes, gt_pairs, m_.config.iou_thresholds[t - 1], opts_.batch, rng_);
      if (batch.empty()) continue;
      const auto P = Eigen::Index(batch.size());

      Matrix V(Eigen::Index(m_.dims.visual()), P), XG(Eigen::Index(m_.dims.geo_out), P), XS(nv, P), Y(nv, P);
      std::vector<const VisualTrace*> traces;
      traces.reserve(batch.size());
      for (Eigen::Index k = 0; k < P; ++k) {
        const LabeledPair& lp = batch[std::size_t(k)];
        const PairSide cur = side(lp.from_gt, lp.index, t);
        traces.push_back(&visual_of(lp.from_gt, lp.index, t));
        V.col(k) = traces.back()->xv.flat();
        if (t > 1) V.col(k) += visual_of(lp.from_gt, lp.index, t - 1).xv.flat();
        XG.col(k) = geo_of(lp.from_gt, lp.index).trace.output;
        XS.col(k) = semantic_prior(cur.object->class_id, m_.cooc);
        Y.col(k) = lp.target;
      }
      const RelationTrace tr = relation_forward(rs, V, XG, XS);
      const double gamma = m_.config.relation_weights[t - 1];

      // Ranking: hinge over all (positive, negative) pairs, averaged over pairs.
      std::vector<Eigen::Index> pos, neg;
      for (Eigen::Index k = 0; k < P; ++k) (batch[std::size_t(k)].positive ? pos : neg).push_back(k);
      Matrix dg = Matrix::Zero(1, P);
      if (!pos.empty() && !neg.empty()) {
        Vector gp(Eigen::Index(pos.size())), gn(Eigen::Index(neg.size()));
        for (std::size_t i = 0; i < pos.size(); ++i) gp[Eigen::Index(i)] = tr.g(0, pos[i]);
        for (std::size_t j = 0; j < neg.size(); ++j) gn[Eigen::Index(j)] = tr.g(0, neg[j]);
        const HingeGrad h = pairwise_hinge_loss(gp, gn, m_.config.rank_margin);
        const double norm = double(pos.size() * neg.size());
        losses[t - 1].rrm = h.loss / norm;
        for (std::size_t i = 0; i < pos.size(); ++i) dg(0, pos[i]) = gamma * h.grad_pos[Eigen::Index(i)] / norm;
        for (std::size_t j = 0; j < neg.size(); ++j) dg(0, neg[j]) = gamma * h.grad_neg[Eigen::Index(j)] / norm;
      }

      // Classification: BCE per stream, summed over verbs, averaged over pairs;
      // gradients taken in logit space (p - y).
      double rcm = 0.0;
      for (const Matrix* sc : {&tr.ss, &tr.sg, &tr.sv})
        for (Eigen::Index k = 0; k < P; ++k) rcm += binary_cross_entropy(sc->col(k), Y.col(k)).loss;
      losses[t - 1].rcm = rcm / double(P);
      const double scale = gamma / double(P);
      const Matrix dss = (tr.ss - Y) * scale, dsg = (tr.sg - Y) * scale, dsv = (tr.sv - Y) * scale;

      const RelationGrads rg = relation_backward(rs, tr, dg, dss, dsg, dsv);
      visual_backward_batch(rs, traces, rg.dvisual);
      for (Eigen::Index k = 0; k < P; ++k) {
        geo_of(batch[std::size_t(k)].from_gt, batch[std::size_t(k)].index).grad += rg.dxg.col(k);
      }
    }
    for (auto& [key, entry] : geo) conv_pool_backward(m_.geo, entry.trace, entry.grad, false);
  }

  CascadeModel& m_;
  TrainOptions opts_;
  Rng rng_;
};

inline std::vector<EpochStats> train_model(CascadeModel& m, const std::vector<Sample>& data, const TrainOptions& opts) {
  return Trainer(m, opts).fit(data);
}

}  // namespace choi
