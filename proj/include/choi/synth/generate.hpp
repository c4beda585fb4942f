#pragma once

#include "choi/synth/scene.hpp"

#include <cstdio>

namespace choi {

struct SceneSpec {
  ImageSize size{128, 128};
  Vocabulary vocab = default_vocabulary();
  int min_humans = 1, max_humans = 2;
  int max_interactions = 2;   // planned interactions per human
  double free_object_rate = 0.5;
  double jitter = 0.06;        // proposal edge noise, relative to box size
  double occlusion_rate = 0.0;  // chance per human of a corner distractor
  int background_proposals = 2;
  double noise = 0.05;
  std::size_t grid_h = 32, grid_w = 32;
  std::uint64_t seed = 7;

  std::size_t channels() const { return vocab.num_classes() + vocab.num_verbs() + 2; }

  void validate() const {
    vocab.validate();
    if (vocab.num_classes() < 5 || vocab.num_verbs() < 6)
      throw std::invalid_argument("scene spec: the built-in verb rules need the default 5-class / 6-verb world");
    if (min_humans < 1 || max_humans < min_humans || max_humans > 2)
      throw std::invalid_argument("scene spec: humans per scene must satisfy 1 <= min <= max <= 2");
    if (size.width < 96 || size.height < 96) throw std::invalid_argument("scene spec: entities do not fit below 96x96");
    if (jitter < 0 || noise < 0 || occlusion_rate < 0 || occlusion_rate > 1)
      throw std::invalid_argument("scene spec: jitter, noise and occlusion rate must be non-negative");
    if (grid_h == 0 || grid_w == 0 || size.width % grid_w || size.height % grid_h)
      throw std::invalid_argument("scene spec: grid must evenly divide the image");
  }
};

// ---------------------------------------------------------------------------
// Verb rules. Applied to every (person, other entity) pair of a finished scene.
// ---------------------------------------------------------------------------

constexpr int kContactRadius = 2;
constexpr double kFaceZoneMargin = 6.0;

inline bool in_contact(const Entity& h, const Entity& o) {
  return masks_overlap(dilate(h.mask, kContactRadius), o.mask);
}

/// Horizontal gap between boxes (negative when they overlap in x).
inline double horizontal_gap(const Box& a, const Box& b) { return std::max(b.x1 - a.x2, a.x1 - b.x2); }

inline double vertical_overlap(const Box& a, const Box& b) { return std::min(a.y2, b.y2) - std::max(a.y1, b.y1); }

inline std::vector<int> rule_verbs(const Entity& h, const Entity& o) {
  using namespace world;
  std::vector<int> verbs;
  const bool contact = in_contact(h, o);
  const double gap = horizontal_gap(h.box, o.box);
  if (!contact && gap >= 1.0 && gap <= 10.0 &&
      vertical_overlap(h.box, o.box) >= 0.5 * std::min(h.box.height(), o.box.height()))
    verbs.push_back(next_to);
  if (o.class_id == person || !contact) return verbs;
  const double rel_y = (o.box.cy() - h.box.y1) / h.box.height();
  const bool at_face = h.face && expand_box(*h.face, kFaceZoneMargin).contains(o.box.cx(), o.box.cy());
  if (o.class_id == chair && rel_y >= 0.55) verbs.push_back(on);
  if ((o.class_id == ball || o.class_id == cup || o.class_id == phone) && !at_face && rel_y >= 0.3 && rel_y <= 0.7)
    verbs.push_back(hold);
  if (o.class_id == cup && at_face) verbs.push_back(drink);
  if (o.class_id == phone && at_face) verbs.push_back(call);
  if (o.class_id == ball && rel_y >= 0.75) verbs.push_back(kick);
  return verbs;
}

/// Ground-truth triplets implied by the rules, ordered by (human, object, verb) entity order.
inline std::vector<Triplet> apply_rules(const std::vector<Entity>& entities) {
  std::vector<Triplet> out;
  for (const auto& h : entities) {
    if (h.class_id != kPersonClass) continue;
    for (const auto& o : entities) {
      if (o.id == h.id) continue;
      for (int v : rule_verbs(h, o)) out.push_back({h.id, v, o.id});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scene construction.
// ---------------------------------------------------------------------------

namespace detail {

inline Box sized_box(double cx, double cy, double w, double h) { return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}; }

inline bool inside_image(const Box& b, const ImageSize& img, double margin = 1.0) {
  return b.x1 >= margin && b.y1 >= margin && b.x2 <= double(img.width) - margin && b.y2 <= double(img.height) - margin;
}

inline Box integer_box(const Box& b) {
  return {std::round(b.x1), std::round(b.y1), std::round(b.x2), std::round(b.y2)};
}

inline std::pair<double, double> object_size(int cls, Rng& rng) {
  using namespace world;
  switch (cls) {
    case ball: {
      const double d = rng.integer(10, 12);
      return {d, d};
    }
    case cup:
      return {double(rng.integer(8, 10)), double(rng.integer(10, 12))};
    case phone:
      return {double(rng.integer(6, 8)), double(rng.integer(10, 12))};
    case chair:
      return {double(rng.integer(20, 26)), double(rng.integer(18, 24))};
    default:
      return {double(rng.integer(20, 26)), double(rng.integer(56, 72))};
  }
}

inline BitMask entity_mask(int cls, const Box& box, const ImageSize& img) {
  return (cls == world::person || cls == world::ball) ? ellipse_mask(box, img) : box_mask(box, img);
}

struct Builder {
  const SceneSpec& spec;
  Rng& rng;
  std::vector<Entity> entities;

  bool clear_of_others(const Box& b, int except = -1) const {
    for (const auto& e : entities)
      if (e.id != except && intersection_area(expand_box(b, 1.0), e.box) > 0) return false;
    return true;
  }

  Entity& add(int cls, const Box& box) {
    Entity e{int(entities.size()), cls, box, entity_mask(cls, box, spec.size), std::nullopt};
    if (cls == world::person) {
      const double w = box.width(), h = box.height();
      e.face = Box{std::round(box.cx() - 0.18 * w), std::round(box.y1 + 0.04 * h), std::round(box.cx() + 0.18 * w),
                   std::round(box.y1 + 0.20 * h)};
    }
    entities.push_back(std::move(e));
    return entities.back();
  }

  /// Candidate object box realizing `verb` for human `h`.
  Box plan(const Entity& h, int verb, int cls) {
    using namespace world;
    const auto [ow, oh] = object_size(cls, rng);
    const Box& hb = h.box;
    const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
    const double edge_x = side > 0 ? hb.x2 : hb.x1;
    switch (verb) {
      case drink:
      case call:
        return sized_box(h.face->cx() + side * rng.uniform(2.0, 5.0), h.face->cy() + rng.uniform(-2.0, 2.0), ow, oh);
      case hold:
        return sized_box(edge_x + side * (ow / 2 - rng.uniform(3.0, 5.0)), hb.y1 + rng.uniform(0.4, 0.6) * hb.height(),
                         ow, oh);
      case kick:
        return sized_box(edge_x - side * rng.uniform(2.0, 5.0) + side * (ow / 2 - 4.0),
                         hb.y1 + rng.uniform(0.85, 0.95) * hb.height(), ow, oh);
      case on:
        return sized_box(hb.cx() + rng.uniform(-3.0, 3.0), hb.y1 + rng.uniform(0.7, 0.8) * hb.height() + oh / 2 - 4.0, ow,
                         oh);
      case next_to:
        return sized_box(edge_x + side * (ow / 2 + rng.uniform(2.0, 8.0)), hb.y1 + rng.uniform(0.35, 0.8) * hb.height(),
                         ow, oh);
      default:  // no interaction: somewhere away from the human
        return sized_box(rng.uniform(ow, double(spec.size.width) - ow), rng.uniform(oh, double(spec.size.height) - oh), ow,
                         oh);
    }
  }

  /// Object class compatible with a planned verb.
  int class_for(int verb) {
    using namespace world;
    switch (verb) {
      case drink: return cup;
      case call: return phone;
      case kick: return ball;
      case on: return chair;
      case hold: return std::array{ball, cup, phone}[std::size_t(rng.integer(0, 2))];
      default: return rng.integer(1, int(spec.vocab.num_classes()) - 1);
    }
  }

  bool place_object(const Entity& h, int verb, int tries = 30) {
    for (int k = 0; k < tries; ++k) {
      const int cls = class_for(verb);
      const Box b = integer_box(plan(h, verb, cls));
      if (!inside_image(b, spec.size)) continue;
      // Planned contact objects may touch their human but nothing else.
      bool ok = true;
      for (const auto& e : entities)
        if (e.id != h.id && intersection_area(expand_box(b, 1.0), e.box) > 0) ok = false;
      if (!ok) continue;
      Entity probe{int(entities.size()), cls, b, entity_mask(cls, b, spec.size), std::nullopt};
      const auto verbs = rule_verbs(h, probe);
      if (verb >= 0 && std::find(verbs.begin(), verbs.end(), verb) == verbs.end()) continue;
      if (verb < 0 && (!verbs.empty() || intersection_area(expand_box(b, 12.0), h.box) > 0)) continue;
      add(cls, b);
      return true;
    }
    return false;
  }

  /// Distractor overlapping a top corner of the human box without reaching its mask.
  bool place_distractor(const Entity& h) {
    for (int k = 0; k < 30; ++k) {
      const int cls = rng.integer(1, int(spec.vocab.num_classes()) - 1);
      const auto [ow, oh] = object_size(cls == world::chair ? world::cup : cls, rng);
      const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
      const double cx = (side > 0 ? h.box.x2 : h.box.x1) - side * rng.uniform(1.0, 3.0);
      const Box b = integer_box(sized_box(cx, h.box.y1 + rng.uniform(1.0, 3.0), ow, oh));
      if (!inside_image(b, spec.size)) continue;
      bool ok = true;
      for (const auto& e : entities)
        if (e.id != h.id && intersection_area(expand_box(b, 1.0), e.box) > 0) ok = false;
      if (!ok) continue;
      Entity probe{int(entities.size()), cls, b, entity_mask(cls, b, spec.size), std::nullopt};
      if (masks_overlap(dilate(h.mask, kContactRadius + 1), probe.mask) || !rule_verbs(h, probe).empty()) continue;
      add(cls, b);
      return true;
    }
    return false;
  }
};

}  // namespace detail

inline Proposal jittered_proposal(const Entity& e, double jitter, const ImageSize& img, Rng& rng) {
  for (int k = 0; k < 50; ++k) {
    const double w = e.box.width(), h = e.box.height();
    Box b{e.box.x1 + rng.normal(0, jitter * w), e.box.y1 + rng.normal(0, jitter * h), e.box.x2 + rng.normal(0, jitter * w),
          e.box.y2 + rng.normal(0, jitter * h)};
    b = clip_box(b, img);
    if (b.width() > 2 && b.height() > 2 && box_iou(b, e.box) > 0.3) return {e.class_id, b, box_iou(b, e.box), e.id};
  }
  return {e.class_id, e.box, 1.0, e.id};
}

inline Scene generate_scene(const SceneSpec& spec, std::size_t index, Rng& rng) {
  using namespace world;
  detail::Builder b{spec, rng, {}};
  const ImageSize img = spec.size;
  const int nh = rng.integer(spec.min_humans, spec.max_humans);
  const double slot_w = double(img.width) / nh;
  for (int i = 0; i < nh; ++i) {
    for (int k = 0; k < 50; ++k) {
      const auto [w, h] = detail::object_size(person, rng);
      const double x1 = std::round(rng.uniform(i * slot_w + 10, (i + 1) * slot_w - 10 - w));
      const double y1 = std::round(rng.uniform(14, double(img.height) - 6 - h));
      const Box box{x1, y1, x1 + w, y1 + h};
      if (box.x1 < i * slot_w + 2 || !detail::inside_image(box, img, 4) || !b.clear_of_others(expand_box(box, 12)))
        continue;
      b.add(person, box);
      break;
    }
  }
  // Occasionally stand the two humans side by side.
  if (nh == 2 && b.entities.size() == 2 && rng.bernoulli(0.25)) {
    Entity& right = b.entities[1];
    const double gap = rng.integer(2, 8);
    const double w = right.box.width();
    const Box moved{b.entities[0].box.x2 + gap, right.box.y1, b.entities[0].box.x2 + gap + w, right.box.y2};
    if (detail::inside_image(moved, img)) {
      right.box = moved;
      right.mask = detail::entity_mask(person, moved, img);
      right.face = Box{std::round(moved.cx() - 0.18 * w), std::round(moved.y1 + 0.04 * moved.height()),
                       std::round(moved.cx() + 0.18 * w), std::round(moved.y1 + 0.20 * moved.height())};
    }
  }
  const std::size_t humans = b.entities.size();
  if (humans == 0) throw std::runtime_error("scene spec infeasible: no room for a human");
  for (std::size_t i = 0; i < humans; ++i) {
    const Entity h = b.entities[i];
    if (rng.bernoulli(spec.occlusion_rate)) b.place_distractor(h);
    const int n = rng.integer(1, spec.max_interactions);
    for (int k = 0; k < n; ++k) b.place_object(h, rng.integer(0, int(spec.vocab.num_verbs()) - 1));
  }
  if (rng.bernoulli(spec.free_object_rate)) b.place_object(b.entities[0], -1);

  Scene s;
  char id[32];
  std::snprintf(id, sizeof id, "scene_%05zu", index);
  s.image_id = id;
  s.size = img;
  s.entities = std::move(b.entities);
  s.triplets = apply_rules(s.entities);
  for (const auto& e : s.entities) s.proposals.push_back(jittered_proposal(e, spec.jitter, img, rng));
  for (int k = 0, placed = 0; k < 50 && placed < spec.background_proposals; ++k) {
    const double w = rng.integer(10, 28), h = rng.integer(10, 28);
    const double x1 = std::round(rng.uniform(1, double(img.width) - w - 1));
    const double y1 = std::round(rng.uniform(1, double(img.height) - h - 1));
    const Box box{x1, y1, x1 + w, y1 + h};
    bool clear = true;
    for (const auto& e : s.entities)
      if (box_iou(box, e.box) > 0.05 || intersection_area(box, e.box) > 0.25 * box.area()) clear = false;
    if (!clear) continue;
    s.proposals.push_back({rng.integer(0, int(spec.vocab.num_classes()) - 1), box, 0.0, -1});
    ++placed;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Feature grid: planted class, verb, face and part evidence plus noise.
// Channel layout: [classes][verbs][face][part].
// ---------------------------------------------------------------------------

constexpr double kVerbRegionMargin = 6.0;

/// Region painted with the evidence of one annotated pair.
inline Box interaction_region(const Box& h, const Box& o) {
  return intersect_box(expand_box(h, kVerbRegionMargin), expand_box(o, kVerbRegionMargin));
}

inline Tensor render_feature_grid(const Scene& s, const Vocabulary& vocab, std::size_t C, std::size_t gh,
                                  std::size_t gw, double noise, Rng& rng) {
  const std::size_t nc = vocab.num_classes(), nv = vocab.num_verbs();
  if (C < nc + nv + 2)
    throw std::invalid_argument("render_feature_grid: need at least " + std::to_string(nc + nv + 2) + " channels");
  const std::size_t face_ch = nc + nv, part_ch = nc + nv + 1;
  Tensor g = Tensor::grid(C, gh, gw);
  const double sx = double(s.size.width) / double(gw), sy = double(s.size.height) / double(gh);
  auto paint_box = [&](std::size_t ch, const Box& b, double v) {
    for (std::size_t y = 0; y < gh; ++y)
      for (std::size_t x = 0; x < gw; ++x)
        if (b.contains((x + 0.5) * sx, (y + 0.5) * sy)) g.at(ch, y, x) = std::max(g.at(ch, y, x), v);
  };
  for (const auto& e : s.entities) {
    const BitMask cells = downsample_mask(e.mask, gh, gw);
    for (std::size_t y = 0; y < gh; ++y)
      for (std::size_t x = 0; x < gw; ++x) {
        if (!cells.get(x, y)) continue;
        g.at(std::size_t(e.class_id), y, x) = 1.0;
        if (e.class_id == kPersonClass) {
          const double level = (y + 0.5) * sy < e.box.cy() ? 1.0 : 0.5;
          g.at(part_ch, y, x) = std::max(g.at(part_ch, y, x), level);
        }
      }
    if (e.face) paint_box(face_ch, *e.face, 1.0);
  }
  for (const auto& t : s.triplets)
    paint_box(nc + std::size_t(t.verb), interaction_region(s.entity(t.human).box, s.entity(t.object).box), 1.0);
  for (double& v : g.values()) {
    if (noise > 0) v += rng.normal(0.0, noise);
    v = double(float(v));  // stored as float32 on disk
  }
  return g;
}

/// Scenes and grids for `n` images; scene i draws from its own derived stream.
inline std::vector<Sample> generate_dataset(const SceneSpec& spec, std::size_t n, std::size_t first_index = 0) {
  spec.validate();
  std::vector<Sample> out;
  out.reserve(n);
  Rng root(spec.seed);
  for (std::size_t i = 0; i < first_index + n; ++i) {
    Rng scene_rng = root.derive(i);
    if (i < first_index) continue;
    Sample smp;
    smp.scene = generate_scene(spec, i, scene_rng);
    smp.grid = render_feature_grid(smp.scene, spec.vocab, spec.channels(), spec.grid_h, spec.grid_w, spec.noise, scene_rng);
    out.push_back(std::move(smp));
  }
  return out;
}

inline std::vector<TripletLabel> triplet_labels(const std::vector<Sample>& data) {
  std::vector<TripletLabel> out;
  for (const auto& s : data)
    for (const auto& t : s.scene.triplets) out.push_back({s.scene.entity(t.object).class_id, t.verb});
  return out;
}

}  // namespace choi
