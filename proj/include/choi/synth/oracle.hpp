#pragma once

// Brute-force reference implementations, written independently of the main
// path (plain loops over std::vector, own IoU), plus the seeded comparison
// suite that pits them against the library.

#include "choi/features/visual.hpp"
#include "choi/interaction/relation.hpp"
#include "choi/metrics/evaluate.hpp"

#include <cmath>
#include <vector>

namespace choi::oracle {

constexpr std::size_t kMaxGridSide = 4;
constexpr std::size_t kMaxPredictions = 10;

class BoundsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Grid = std::vector<std::vector<std::vector<double>>>;  // [c][y][x]

/// Attention enhancement by explicit double loops over pixels.
inline Grid ihsm(const Grid& h) {
  const std::size_t C = h.size(), H = h.at(0).size(), W = h.at(0).at(0).size();
  if (H > kMaxGridSide || W > kMaxGridSide) throw BoundsError("oracle ihsm: grid larger than 4x4");
  const std::size_t P = H * W;
  auto px = [&](std::size_t c, std::size_t p) { return h[c][p / W][p % W]; };
  Grid out = h;
  for (std::size_t i = 0; i < P; ++i) {
    std::vector<double> logits(P);
    double mx = -1e300;
    for (std::size_t j = 0; j < P; ++j) {
      double d = 0;
      for (std::size_t c = 0; c < C; ++c) d += px(c, i) * px(c, j);
      logits[j] = d;
      mx = std::max(mx, d);
    }
    double z = 0;
    for (std::size_t j = 0; j < P; ++j) z += std::exp(logits[j] - mx);
    for (std::size_t c = 0; c < C; ++c) {
      double ctx = 0;
      for (std::size_t j = 0; j < P; ++j) ctx += std::exp(logits[j] - mx) / z * px(c, j);
      out[c][i / W][i % W] += ctx;
    }
  }
  return out;
}

inline double hinge(const std::vector<double>& pos, const std::vector<double>& neg, double margin) {
  double total = 0;
  for (double p : pos)
    for (double n : neg) total += std::max(0.0, n - p + margin);
  return total;
}

inline std::vector<double> fuse(const std::vector<double>& sv, const std::vector<double>& sg,
                                const std::vector<double>& ss) {
  std::vector<double> out(sv.size());
  for (std::size_t i = 0; i < sv.size(); ++i) out[i] = (sv[i] + sg[i]) * ss[i];
  return out;
}

inline double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

/// Rank of each prediction under score-descending, index-ascending order.
inline std::vector<std::size_t> ranked(const std::vector<TripletRecord>& preds) {
  std::vector<std::size_t> order;
  std::vector<bool> taken(preds.size(), false);
  for (std::size_t r = 0; r < preds.size(); ++r) {
    std::size_t best = preds.size();
    for (std::size_t i = 0; i < preds.size(); ++i)
      if (!taken[i] && (best == preds.size() || preds[i].score > preds[best].score)) best = i;
    taken[best] = true;
    order.push_back(best);
  }
  return order;
}

/// Greedy matching over predictions in the given order (box IoU).
inline std::vector<int> match(const std::vector<TripletRecord>& preds, const std::vector<TripletRecord>& gts,
                              double thr) {
  if (preds.size() > kMaxPredictions) throw BoundsError("oracle match: more than 10 predictions");
  std::vector<int> out(preds.size(), -1);
  std::vector<int> owner(gts.size(), -1);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (owner[g] != -1) continue;
      if (preds[i].verb != gts[g].verb) continue;
      if (iou(preds[i].h_box, gts[g].h_box) < thr) continue;
      if (iou(preds[i].o_box, gts[g].o_box) < thr) continue;
      owner[g] = int(i);
      out[i] = int(g);
      break;
    }
  }
  return out;
}

/// AP of one verb in one image: sum over true positives of the best precision
/// reached at that recall or beyond, divided by the ground-truth count.
inline double ap_single_image(const std::vector<TripletRecord>& preds, const std::vector<TripletRecord>& gts, int verb,
                              double thr) {
  std::vector<TripletRecord> p, g;
  for (const auto& x : preds)
    if (x.verb == verb) p.push_back(x);
  for (const auto& x : gts)
    if (x.verb == verb) g.push_back(x);
  if (g.empty()) return 0.0;
  const auto order = ranked(p);
  std::vector<TripletRecord> sorted;
  for (auto i : order) sorted.push_back(p[i]);
  const auto m = match(sorted, g, thr);
  std::vector<double> precision(sorted.size());
  int tp = 0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    tp += m[k] >= 0;
    precision[k] = double(tp) / double(k + 1);
  }
  double ap = 0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    if (m[k] < 0) continue;
    double best = 0;
    for (std::size_t j = k; j < sorted.size(); ++j) best = std::max(best, precision[j]);
    ap += best / double(g.size());
  }
  return ap;
}

/// Single-image R@K with box IoU; groups are {geometric, non-geometric}.
inline double recall_single_image(const std::vector<TripletRecord>& preds, const std::vector<TripletRecord>& gts,
                                  const std::vector<bool>& geometric, int k) {
  const auto order = ranked(preds);
  std::vector<TripletRecord> top;
  for (std::size_t r = 0; r < order.size() && int(r) < k; ++r) top.push_back(preds[order[r]]);
  double sum = 0;
  int cells = 0;
  for (double thr : {0.25, 0.5, 0.75}) {
    const auto m = match(top, gts, thr);
    for (int grp = 0; grp < 2; ++grp) {
      int total = 0, hit = 0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if ((geometric[std::size_t(gts[g].verb)] ? 0 : 1) != grp) continue;
        ++total;
        for (int x : m) hit += x == int(g);
      }
      if (total) sum += double(hit) / total, ++cells;
    }
  }
  return cells ? sum / cells : 0.0;
}

// ---------------------------------------------------------------------------
// Seeded comparison suite.
// ---------------------------------------------------------------------------

struct SuiteResult {
  std::string name;
  std::size_t instances = 0;
  double max_abs_diff = 0.0;
  std::size_t mismatches = 0;  // exact comparisons (matching)
  bool passed(double tol) const { return instances > 0 && mismatches == 0 && max_abs_diff <= tol; }
};

inline Tensor to_tensor(const Grid& g) {
  Tensor t = Tensor::grid(g.size(), g[0].size(), g[0][0].size());
  for (std::size_t c = 0; c < g.size(); ++c)
    for (std::size_t y = 0; y < g[0].size(); ++y)
      for (std::size_t x = 0; x < g[0][0].size(); ++x) t.at(c, y, x) = g[c][y][x];
  return t;
}

inline Box random_box(Rng& rng, double extent = 20.0) {
  const double x = rng.uniform(0, extent), y = rng.uniform(0, extent);
  return {x, y, x + rng.uniform(2, extent), y + rng.uniform(2, extent)};
}

/// Small relation-detection instance: GT triplets and predictions that are
/// perturbed copies or random boxes, with deliberately repeated scores.
inline std::pair<std::vector<TripletRecord>, std::vector<TripletRecord>> random_detection_case(Rng& rng, int verbs) {
  std::vector<TripletRecord> gts, preds;
  const int ng = rng.integer(0, 5), np = rng.integer(0, int(kMaxPredictions));
  for (int i = 0; i < ng; ++i) gts.push_back({random_box(rng), random_box(rng), nullptr, nullptr, rng.integer(0, verbs - 1), 1.0});
  for (int i = 0; i < np; ++i) {
    TripletRecord p;
    if (!gts.empty() && rng.bernoulli(0.7)) {
      const auto& g = gts[std::size_t(rng.integer(0, ng - 1))];
      auto nudge = [&](Box b) {
        const double s = rng.uniform(0, 4);
        return Box{b.x1 + rng.uniform(-s, s), b.y1 + rng.uniform(-s, s), b.x2 + rng.uniform(-s, s), b.y2 + rng.uniform(-s, s)};
      };
      p = {nudge(g.h_box), nudge(g.o_box), nullptr, nullptr, rng.bernoulli(0.8) ? g.verb : rng.integer(0, verbs - 1), 0};
    } else {
      p = {random_box(rng), random_box(rng), nullptr, nullptr, rng.integer(0, verbs - 1), 0};
    }
    p.score = rng.bernoulli(0.3) ? 0.5 : std::round(rng.uniform(0, 1) * 20) / 20;  // frequent ties
    preds.push_back(p);
  }
  return {preds, gts};
}

inline std::vector<SuiteResult> run_oracle_suite(std::size_t n = 500, std::uint64_t seed = 2024) {
  std::vector<SuiteResult> out;
  Rng rng(seed);

  SuiteResult att{"ihsm", n};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t C = std::size_t(rng.integer(1, 4)), H = std::size_t(rng.integer(1, 4)),
                      W = std::size_t(rng.integer(1, 4));
    Grid g(C, std::vector<std::vector<double>>(H, std::vector<double>(W)));
    for (auto& ch : g)
      for (auto& row : ch)
        for (double& v : row) v = rng.uniform(-1.5, 1.5);
    const Grid ref = ihsm(g);
    const Tensor got = ihsm_enhance(to_tensor(g)).enhanced;
    const Tensor want = to_tensor(ref);
    for (std::size_t k = 0; k < got.size(); ++k) att.max_abs_diff = std::max(att.max_abs_diff, std::abs(got[k] - want[k]));
  }
  out.push_back(att);

  SuiteResult hin{"hinge", n};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> p(std::size_t(rng.integer(0, 6))), q(std::size_t(rng.integer(0, 6)));
    for (double& v : p) v = rng.uniform(0, 1);
    for (double& v : q) v = rng.uniform(0, 1);
    const double margin = rng.uniform(0.05, 0.5);
    const double got = pairwise_hinge_loss(Eigen::Map<Vector>(p.data(), Eigen::Index(p.size())),
                                           Eigen::Map<Vector>(q.data(), Eigen::Index(q.size())), margin)
                           .loss;
    hin.max_abs_diff = std::max(hin.max_abs_diff, std::abs(got - hinge(p, q, margin)));
  }
  out.push_back(hin);

  SuiteResult fus{"fusion", n};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t N = std::size_t(rng.integer(1, 8));
    std::vector<double> a(N), b(N), c(N);
    for (std::size_t k = 0; k < N; ++k) a[k] = rng.uniform(0, 1), b[k] = rng.uniform(0, 1), c[k] = rng.uniform(0, 1);
    auto vec = [](std::vector<double>& v) { return Vector(Eigen::Map<Vector>(v.data(), Eigen::Index(v.size()))); };
    const Vector got = fuse_scores(vec(a), vec(b), vec(c));
    const auto want = fuse(a, b, c);
    for (std::size_t k = 0; k < N; ++k) fus.max_abs_diff = std::max(fus.max_abs_diff, std::abs(got[Eigen::Index(k)] - want[k]));
  }
  out.push_back(fus);

  const int verbs = 3;
  const std::vector<bool> geometric{true, false, false};
  SuiteResult mat{"matching", n}, ap{"average_precision", n}, rec{"recall_at_k", n};
  for (std::size_t i = 0; i < n; ++i) {
    auto [preds, gts] = random_detection_case(rng, verbs);
    const double thr = std::array{0.25, 0.5, 0.75}[std::size_t(rng.integer(0, 2))];
    std::vector<TripletRecord> sorted;
    for (auto k : ranked(preds)) sorted.push_back(preds[k]);
    if (match_triplets(sorted, gts, thr, MatchMode::box) != match(sorted, gts, thr)) ++mat.mismatches;

    const std::vector<ImageTriplets> P{{"x", preds}}, G{{"x", gts}};
    const ApResult got = map_rel(P, G, std::size_t(verbs), thr, MatchMode::box);
    for (int v = 0; v < verbs; ++v) {
      const double want = ap_single_image(preds, gts, v, thr);
      const double have = got.per_verb[std::size_t(v)].value_or(0.0);
      ap.max_abs_diff = std::max(ap.max_abs_diff, std::abs(have - want));
    }
    const int k = rng.integer(1, 12);
    const double want_r = recall_single_image(preds, gts, geometric, k);
    rec.max_abs_diff =
        std::max(rec.max_abs_diff, std::abs(recall_at_k(P, G, geometric, k, MatchMode::box).value - want_r));
  }
  out.push_back(mat);
  out.push_back(ap);
  out.push_back(rec);
  return out;
}

}  // namespace choi::oracle
