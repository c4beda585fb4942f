#pragma once

#include "choi/cascade/localize.hpp"
#include "choi/features/face.hpp"
#include "choi/features/semantic.hpp"
#include "choi/features/visual.hpp"
#include "choi/interaction/relation.hpp"
#include "choi/numerics/params.hpp"

#include <nlohmann/json.hpp>

namespace choi {

enum class PipelineMode { detect, segment };

inline const char* to_string(PipelineMode m) { return m == PipelineMode::detect ? "detect" : "segment"; }

struct ModelDims {
  std::size_t channels = 13;  // feature-grid channels C
  std::size_t num_classes = 5;
  std::size_t num_verbs = 6;
  std::size_t fuse_hidden = 1024;
  std::size_t fuse_out = 1024;
  std::size_t efra_hidden = 256;
  std::size_t geo_conv1 = 4;
  std::size_t geo_conv2 = 8;
  std::size_t geo_kernel = 3;
  std::size_t geo_out = 256;

  std::size_t pooled() const { return channels * kPooledSize * kPooledSize; }
  std::size_t visual() const { return 3 * pooled(); }

  nlohmann::json to_json() const {
    return {{"channels", channels},       {"num_classes", num_classes}, {"num_verbs", num_verbs},
            {"fuse_hidden", fuse_hidden}, {"fuse_out", fuse_out},       {"efra_hidden", efra_hidden},
            {"geo_conv1", geo_conv1},     {"geo_conv2", geo_conv2},     {"geo_kernel", geo_kernel},
            {"geo_out", geo_out}};
  }
  static ModelDims from_json(const nlohmann::json& j) {
    ModelDims d;
    d.channels = j.at("channels");
    d.num_classes = j.at("num_classes");
    d.num_verbs = j.at("num_verbs");
    d.fuse_hidden = j.at("fuse_hidden");
    d.fuse_out = j.at("fuse_out");
    d.efra_hidden = j.at("efra_hidden");
    d.geo_conv1 = j.at("geo_conv1");
    d.geo_conv2 = j.at("geo_conv2");
    d.geo_kernel = j.at("geo_kernel");
    d.geo_out = j.at("geo_out");
    return d;
  }
};

/// Interaction-recognition parameters of one stage.
struct RelationStage {
  FCStack fuse;          // flatten(X_v^t + X_v^{t-1}) -> Xbar_v
  FCStack efra_face;     // [F, O] -> alpha
  FCStack efra_nonface;  // [Fbar, O] -> alpha_bar
  RRMHead rrm;
  RCMHeads rcm;
};

struct StageParams {
  StageHead loc;
  SegHead seg;
  RelationStage rel;
};

struct CascadeModel {
  ModelDims dims;
  CascadeConfig config;
  PipelineMode mode = PipelineMode::detect;
  Representation rep = Representation::box;
  std::vector<StageParams> stages;
  ConvPoolEncoder geo;  // shared: X_g is computed once per pair
  CooccurrenceTable cooc;

  static CascadeModel create(const ModelDims& d, const CascadeConfig& cfg, PipelineMode mode, Representation rep,
                             CooccurrenceTable cooc, std::uint64_t seed) {
    cfg.validate();
    if (rep == Representation::mask && mode != PipelineMode::segment)
      throw std::invalid_argument("mask representation requires segment mode");
    if (cooc.num_classes() != d.num_classes || cooc.num_verbs() != d.num_verbs)
      throw std::invalid_argument("co-occurrence table does not match the class/verb vocabulary");
    Rng rng(seed);
    CascadeModel m{d, cfg, mode, rep, {}, {}, std::move(cooc)};
    for (int t = 0; t < cfg.stages; ++t) {
      StageParams s;
      s.loc = StageHead::glorot(d.pooled(), rng);
      s.seg = SegHead::glorot(d.pooled(), rng);
      s.rel.fuse = FCStack::glorot(d.visual(), d.fuse_hidden, d.fuse_out, Activation::none, rng);
      s.rel.efra_face = FCStack::glorot(2 * d.pooled(), d.efra_hidden, 1, Activation::sigmoid, rng);
      s.rel.efra_nonface = FCStack::glorot(2 * d.pooled(), d.efra_hidden, 1, Activation::sigmoid, rng);
      s.rel.rrm = RRMHead::glorot(d.fuse_out, d.geo_out, rng);
      s.rel.rcm = RCMHeads::glorot(d.num_verbs, d.geo_out, d.fuse_out, rng);
      m.stages.push_back(std::move(s));
    }
    m.geo = ConvPoolEncoder::glorot(2, kSpatialMapSize, kSpatialMapSize, d.geo_conv1, d.geo_conv2, d.geo_kernel,
                                    d.geo_out, rng);
    return m;
  }

  void check_grid(const Tensor& grid) const {
    if (grid.rank() != 3 || grid.channels() != dims.channels)
      throw ShapeError("model expects a grid with " + std::to_string(dims.channels) + " channels, got " +
                       shape_str(grid.shape()));
  }

  /// Blocks of the localization (and segmentation) heads only.
  ParamStore localization_params() {
    ParamStore ps;
    for (std::size_t t = 0; t < stages.size(); ++t) {
      const std::string p = "stage" + std::to_string(t + 1);
      ps.add(p + ".loc.regressor", stages[t].loc.regressor);
      ps.add(p + ".loc.scorer", stages[t].loc.scorer);
      if (mode == PipelineMode::segment) ps.add(p + ".seg", stages[t].seg.fc);
    }
    return ps;
  }

  ParamStore all_params() {
    ParamStore ps = localization_params();
    for (std::size_t t = 0; t < stages.size(); ++t) {
      const std::string p = "stage" + std::to_string(t + 1);
      auto& r = stages[t].rel;
      ps.add(p + ".fuse", r.fuse);
      ps.add(p + ".efra.face", r.efra_face);
      ps.add(p + ".efra.nonface", r.efra_nonface);
      ps.add(p + ".rrm", r.rrm.fc);
      ps.add(p + ".rcm.semantic", r.rcm.semantic);
      ps.add(p + ".rcm.geometric", r.rcm.geometric);
      ps.add(p + ".rcm.visual", r.rcm.visual);
    }
    ps.add("geo", geo);
    return ps;
  }

  nlohmann::json meta() const {
    return {{"dims", dims.to_json()},
            {"stages", config.stages},
            {"iou_thresholds", config.iou_thresholds},
            {"merge_threshold", config.merge_threshold},
            {"loc_weights", config.loc_weights},
            {"relation_weights", config.relation_weights},
            {"seg_weights", config.seg_weights},
            {"top_k", config.top_k},
            {"rank_margin", config.rank_margin},
            {"mode", to_string(mode)},
            {"representation", to_string(rep)}};
  }

  static CascadeModel from_meta(const nlohmann::json& j, CooccurrenceTable cooc) {
    CascadeConfig c;
    c.stages = j.at("stages");
    c.iou_thresholds = j.at("iou_thresholds").get<std::vector<double>>();
    c.merge_threshold = j.at("merge_threshold");
    c.loc_weights = j.at("loc_weights").get<std::vector<double>>();
    c.relation_weights = j.at("relation_weights").get<std::vector<double>>();
    c.seg_weights = j.at("seg_weights").get<std::vector<double>>();
    c.top_k = j.at("top_k");
    c.rank_margin = j.at("rank_margin");
    const auto mode = j.at("mode").get<std::string>() == "segment" ? PipelineMode::segment : PipelineMode::detect;
    const auto rep = j.at("representation").get<std::string>() == "mask" ? Representation::mask : Representation::box;
    return create(ModelDims::from_json(j.at("dims")), c, mode, rep, std::move(cooc), 0);
  }
};

// ---------------------------------------------------------------------------
// Visual relation feature X_v for one pair at one stage.
// ---------------------------------------------------------------------------

struct VisualTrace {
  Tensor xv;
  Tensor face, face_removed;  // F, Fbar
  Vector face_input, nonface_input;
  FCStackTrace face_trace, nonface_trace;
  double alpha = 0.0, alpha_bar = 0.0;
};

/// Union-region feature: box RoIAlign of the union box, or the union mask in
/// mask mode when both sides carry masks.
inline Tensor pool_union(const Tensor& grid, const Instance& h, const Instance& o, const ImageSize& img,
                         Representation rep) {
  if (rep == Representation::mask && h.mask && o.mask) {
    try {
      return mask_roi_align(grid, mask_or(*h.mask, *o.mask), img);
    } catch (const InvalidInstance&) {
    }
  }
  return roi_align(grid, union_box(h.box, o.box), img);
}

inline VisualTrace visual_feature(const Tensor& grid, const Instance& h, const Instance& o, const RelationStage& p,
                                  const ImageSize& img, Representation rep) {
  VisualTrace t;
  const Tensor H = pool_instance(grid, h, img, rep);
  const Tensor O = pool_instance(grid, o, img, rep);
  const Tensor U = pool_union(grid, h, o, img, rep);
  const IhsmResult ih = ihsm_enhance(H);

  const FaceRegion face = face_region(h);
  t.face = roi_align(grid, face.box, img);
  const BitMask keep = face_removed_keep(grid.height(), grid.width(), h, face, img, rep);
  t.face_removed = roi_align(grid, h.box, img, kPooledSize, kPooledSize, &keep);

  t.face_input = efra_input(t.face, O);
  t.nonface_input = efra_input(t.face_removed, O);
  t.face_trace = fc_stack_forward(t.face_input, p.efra_face);
  t.nonface_trace = fc_stack_forward(t.nonface_input, p.efra_nonface);
  t.alpha = t.face_trace.output(0, 0);
  t.alpha_bar = t.nonface_trace.output(0, 0);
  const Tensor Obar = efra_enhance(O, t.face, t.face_removed, t.alpha, t.alpha_bar);
  t.xv = assemble_visual(ih.enhanced, Obar, U);
  return t;
}

/// Accumulates EFRA gradients for upstream dX_v; column k of dxv belongs to
/// traces[k]. The human and union parts only depend on the (fixed) grid, so
/// nothing else is learned through X_v.
inline void visual_backward_batch(RelationStage& p, const std::vector<const VisualTrace*>& traces, const Matrix& dxv) {
  if (traces.empty()) return;
  const auto P = Eigen::Index(traces.size());
  const auto n = Eigen::Index(traces.front()->face.size());
  FCStackTrace face, nonface;
  for (FCStackTrace* tr : {&face, &nonface}) {
    const bool f = tr == &face;
    const FCStackTrace& first = f ? traces.front()->face_trace : traces.front()->nonface_trace;
    tr->input.resize(first.input.rows(), P);
    tr->hidden.resize(first.hidden.rows(), P);
    tr->output.resize(1, P);
    for (Eigen::Index k = 0; k < P; ++k) {
      const FCStackTrace& src = f ? traces[std::size_t(k)]->face_trace : traces[std::size_t(k)]->nonface_trace;
      tr->input.col(k) = src.input.col(0);
      tr->hidden.col(k) = src.hidden.col(0);
      tr->output(0, k) = src.output(0, 0);
    }
  }
  Matrix da(1, P), dab(1, P);
  for (Eigen::Index k = 0; k < P; ++k) {
    const auto dObar = dxv.col(k).segment(n, n);
    da(0, k) = dObar.dot(traces[std::size_t(k)]->face.flat());
    dab(0, k) = dObar.dot(traces[std::size_t(k)]->face_removed.flat());
  }
  fc_stack_backward(p.efra_face, face, da, false);
  fc_stack_backward(p.efra_nonface, nonface, dab, false);
}

inline void visual_backward(RelationStage& p, const VisualTrace& t, const Vector& dxv) {
  visual_backward_batch(p, {&t}, dxv);
}


// ---------------------------------------------------------------------------
// Batched relation heads for one stage. Columns are pairs.
// ---------------------------------------------------------------------------

struct RelationTrace {
  FCStackTrace fuse;
  Matrix rrm_in, g;
  Matrix xs, xg;
  Matrix ss, sg, sv;
};

inline RelationTrace relation_forward(const RelationStage& p, const Matrix& visual_sum, const Matrix& xg,
                                      const Matrix& xs) {
  RelationTrace t;
  t.fuse = fc_stack_forward(visual_sum, p.fuse);
  t.rrm_in.resize(t.fuse.output.rows() + xg.rows(), xg.cols());
  t.rrm_in << t.fuse.output, xg;
  t.g = fc_forward_batch(t.rrm_in, p.rrm.fc);
  t.xs = xs;
  t.xg = xg;
  t.ss = fc_forward_batch(xs, p.rcm.semantic);
  t.sg = fc_forward_batch(xg, p.rcm.geometric);
  t.sv = fc_forward_batch(t.fuse.output, p.rcm.visual);
  return t;
}

struct RelationGrads {
  Matrix dvisual;  // d / d (X_v^t + X_v^{t-1})
  Matrix dxg;
};

/// dg is w.r.t. the ranking score; the stream gradients are w.r.t. the
/// stream logits (pre-sigmoid).
inline RelationGrads relation_backward(RelationStage& p, const RelationTrace& t, const Matrix& dg, const Matrix& dss_pre,
                                       const Matrix& dsg_pre, const Matrix& dsv_pre) {
  const auto fo = t.fuse.output.rows();
  const Matrix drrm = fc_backward_batch(p.rrm.fc, t.rrm_in, t.g, dg, true);
  fc_backward_pre(p.rcm.semantic, t.xs, dss_pre, false);
  Matrix dxg = fc_backward_pre(p.rcm.geometric, t.xg, dsg_pre, true);
  Matrix dfused = fc_backward_pre(p.rcm.visual, t.fuse.output, dsv_pre, true);
  dfused += drrm.topRows(fo);
  dxg += drrm.bottomRows(drrm.rows() - fo);
  return {fc_stack_backward(p.fuse, t.fuse, dfused, true), dxg};
}

// ---------------------------------------------------------------------------
// Cascade localization over seed proposals.
// ---------------------------------------------------------------------------

struct CascadeRun {
  // lineage[l][t] is the stage-t instance of seed l (t = 0 is the seed);
  // nullopt once the lineage has been dropped.
  std::vector<std::vector<std::optional<Instance>>> lineage;
  std::vector<std::vector<Instance>> per_stage;  // stage 1..T outputs
  std::size_t dropped = 0;
};

inline CascadeRun run_cascade(const CascadeModel& m, const Tensor& grid, const ImageSize& img,
                              const std::vector<Instance>& seeds) {
  const auto T = std::size_t(m.config.stages);
  CascadeRun run;
  run.per_stage.resize(T);
  run.lineage.assign(seeds.size(), std::vector<std::optional<Instance>>(T + 1));
  for (std::size_t l = 0; l < seeds.size(); ++l) {
    Instance s = seeds[l];
    s.lineage = int(l);
    s.stage = 0;
    run.lineage[l][0] = s;
  }
  for (std::size_t t = 1; t <= T; ++t) {
    const StageParams& sp = m.stages[t - 1];
    for (std::size_t l = 0; l < seeds.size(); ++l) {
      const auto& prev = run.lineage[l][t - 1];
      if (!prev) continue;
      auto next = refine_stage(grid, *prev, sp.loc, img);
      if (!next) {
        ++run.dropped;
        continue;
      }
      if (m.mode == PipelineMode::segment) {
        std::optional<Vector> prev_pooled;
        if (t > 1) prev_pooled = Vector(roi_align(grid, prev->box, img).flat());
        next = segment_stage(grid, *next, sp.seg, prev_pooled ? &*prev_pooled : nullptr, img);
      }
      run.lineage[l][t] = next;
      run.per_stage[t - 1].push_back(*next);
    }
  }
  return run;
}

/// Stage-t instance of a lineage, falling back to its latest earlier stage.
inline const Instance& lineage_at(const std::vector<std::optional<Instance>>& lin, std::size_t t) {
  for (std::size_t s = std::min(t, lin.size() - 1) + 1; s-- > 0;)
    if (lin[s]) return *lin[s];
  throw std::logic_error("lineage without a seed");
}

inline Vector geometric_input(const CascadeModel& m, const Instance& h, const Instance& o) {
  return conv_pool_forward(spatial_pair_encoding(h, o, m.rep), m.geo);
}

}  // namespace choi
