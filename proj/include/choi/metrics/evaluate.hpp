#pragma once

#include "choi/geometry/mask.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <iomanip>
#include <memory>
#include <numeric>
#include <sstream>

namespace choi {

enum class MatchMode { box, mask };

inline const char* to_string(MatchMode m) { return m == MatchMode::box ? "box" : "mask"; }

/// A scored (prediction) or unscored (ground truth) triplet.
struct TripletRecord {
  Box h_box, o_box;
  std::shared_ptr<const BitMask> h_mask, o_mask;
  int verb = 0;
  double score = 0.0;
};

struct ImageTriplets {
  std::string image_id;
  std::vector<TripletRecord> triplets;
};

inline double side_iou(const Box& a, const BitMask* am, const Box& b, const BitMask* bm, MatchMode mode) {
  if (mode == MatchMode::box) return box_iou(a, b);
  if (!am || !bm) throw std::invalid_argument("mask matching needs masks on both prediction and ground truth");
  return mask_iou(*am, *bm);
}

inline bool triplet_hit(const TripletRecord& p, const TripletRecord& g, double thr, MatchMode mode) {
  return p.verb == g.verb && side_iou(p.h_box, p.h_mask.get(), g.h_box, g.h_mask.get(), mode) >= thr &&
         side_iou(p.o_box, p.o_mask.get(), g.o_box, g.o_mask.get(), mode) >= thr;
}

/// Score-descending order with ties broken by input position.
inline std::vector<std::size_t> score_order(const std::vector<TripletRecord>& preds) {
  std::vector<std::size_t> idx(preds.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
  return idx;
}

/// Greedy matching of already-sorted predictions within one image. Returns,
/// per prediction, the index of the ground truth it claimed or -1.
inline std::vector<int> match_triplets(const std::vector<TripletRecord>& preds, const std::vector<TripletRecord>& gts,
                                       double thr, MatchMode mode) {
  std::vector<int> matched(preds.size(), -1);
  std::vector<bool> used(gts.size(), false);
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t g = 0; g < gts.size(); ++g)
      if (!used[g] && triplet_hit(preds[i], gts[g], thr, mode)) {
        used[g] = true;
        matched[i] = int(g);
        break;
      }
  return matched;
}

/// Area under the all-point precision envelope.
inline double average_precision(const std::vector<bool>& tp_in_rank_order, std::size_t num_gt) {
  if (num_gt == 0) return 0.0;
  const std::size_t n = tp_in_rank_order.size();
  std::vector<double> prec(n), rec(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += tp_in_rank_order[i];
    prec[i] = double(tp) / double(i + 1);
    rec[i] = double(tp) / double(num_gt);
  }
  for (std::size_t i = n; i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0.0, prev_rec = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (rec[i] - prev_rec) * prec[i];
    prev_rec = rec[i];
  }
  return ap;
}

struct ApResult {
  std::vector<std::optional<double>> per_verb;  // nullopt: verb has no ground truth
  double mean = 0.0;
};

/// Per-verb AP over all images (global score order, ties by flattened input
/// position) and its mean over verbs that have ground truth. Images are
/// aligned by position.
inline ApResult map_rel(const std::vector<ImageTriplets>& preds, const std::vector<ImageTriplets>& gts,
                        std::size_t num_verbs, double thr = 0.5, MatchMode mode = MatchMode::box) {
  if (num_verbs == 0) throw std::invalid_argument("map_rel: empty verb vocabulary");
  if (preds.size() != gts.size()) throw std::invalid_argument("map_rel: prediction and ground-truth image counts differ");
  ApResult out;
  out.per_verb.resize(num_verbs);
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t v = 0; v < num_verbs; ++v) {
    struct Ref {
      double score;
      std::size_t img, idx;
    };
    std::vector<Ref> refs;
    std::size_t num_gt = 0;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      for (const auto& g : gts[i].triplets) num_gt += g.verb == int(v);
      for (std::size_t k = 0; k < preds[i].triplets.size(); ++k)
        if (preds[i].triplets[k].verb == int(v)) refs.push_back({preds[i].triplets[k].score, i, k});
    }
    if (num_gt == 0) continue;
    std::stable_sort(refs.begin(), refs.end(), [](const Ref& a, const Ref& b) { return a.score > b.score; });
    std::vector<std::vector<bool>> used(gts.size());
    for (std::size_t i = 0; i < gts.size(); ++i) used[i].assign(gts[i].triplets.size(), false);
    std::vector<bool> tp;
    tp.reserve(refs.size());
    for (const auto& r : refs) {
      const auto& p = preds[r.img].triplets[r.idx];
      bool hit = false;
      for (std::size_t g = 0; g < gts[r.img].triplets.size() && !hit; ++g)
        if (!used[r.img][g] && triplet_hit(p, gts[r.img].triplets[g], thr, mode)) used[r.img][g] = hit = true;
      tp.push_back(hit);
    }
    const double ap = average_precision(tp, num_gt);
    out.per_verb[v] = ap;
    sum += ap;
    ++counted;
  }
  out.mean = counted ? sum / double(counted) : 0.0;
  return out;
}

constexpr std::array<int, 3> kRecallKs{20, 50, 100};
constexpr std::array<double, 3> kRecallThresholds{0.25, 0.5, 0.75};

struct RecallResult {
  int k = 0;
  // [threshold][group]; group 0 = geometric, 1 = non-geometric; nullopt when
  // the group has no ground truth anywhere.
  std::array<std::array<std::optional<double>, 2>, 3> cells{};
  double value = 0.0;
};

/// R@K: per image keep the top-K predictions, match greedily per threshold,
/// pool matched/total counts per (threshold, group), then average the cells
/// that have ground truth.
inline RecallResult recall_at_k(const std::vector<ImageTriplets>& preds, const std::vector<ImageTriplets>& gts,
                                const std::vector<bool>& verb_geometric, int k, MatchMode mode = MatchMode::mask) {
  if (preds.size() != gts.size()) throw std::invalid_argument("recall_at_k: prediction and ground-truth image counts differ");
  if (k < 1) throw std::invalid_argument("recall_at_k: K must be >= 1");
  RecallResult out;
  out.k = k;
  std::array<std::array<std::size_t, 2>, 3> hit{}, total{};
  for (std::size_t i = 0; i < gts.size(); ++i) {
    std::vector<TripletRecord> top;
    for (auto idx : score_order(preds[i].triplets)) {
      if (top.size() == std::size_t(k)) break;
      top.push_back(preds[i].triplets[idx]);
    }
    for (std::size_t t = 0; t < kRecallThresholds.size(); ++t) {
      const auto m = match_triplets(top, gts[i].triplets, kRecallThresholds[t], mode);
      std::vector<bool> claimed(gts[i].triplets.size(), false);
      for (int g : m)
        if (g >= 0) claimed[std::size_t(g)] = true;
      for (std::size_t g = 0; g < gts[i].triplets.size(); ++g) {
        const int verb = gts[i].triplets[g].verb;
        if (verb < 0 || std::size_t(verb) >= verb_geometric.size())
          throw std::out_of_range("recall_at_k: verb outside vocabulary");
        const std::size_t grp = verb_geometric[std::size_t(verb)] ? 0 : 1;
        ++total[t][grp];
        hit[t][grp] += claimed[g];
      }
    }
  }
  double sum = 0.0;
  std::size_t cells = 0;
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t grp = 0; grp < 2; ++grp)
      if (total[t][grp] > 0) {
        const double r = double(hit[t][grp]) / double(total[t][grp]);
        out.cells[t][grp] = r;
        sum += r;
        ++cells;
      }
  out.value = cells ? sum / double(cells) : 0.0;
  return out;
}

struct MetricReport {
  std::vector<std::string> verbs;
  ApResult ap;
  MatchMode ap_mode = MatchMode::box;
  std::vector<RecallResult> recall;  // empty when R@K was not computed
  MatchMode recall_mode = MatchMode::mask;
  double recall_mean = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["map_rel"] = ap.mean;
    j["ap_mode"] = to_string(ap_mode);
    nlohmann::json pv = nlohmann::json::object();
    for (std::size_t v = 0; v < verbs.size(); ++v)
      pv[verbs[v]] = ap.per_verb[v] ? nlohmann::json(*ap.per_verb[v]) : nlohmann::json(nullptr);
    j["per_verb_ap"] = pv;
    if (!recall.empty()) {
      j["recall_mode"] = to_string(recall_mode);
      nlohmann::json rk = nlohmann::json::object();
      for (const auto& r : recall) {
        nlohmann::json cell = nlohmann::json::object();
        for (std::size_t t = 0; t < 3; ++t)
          for (std::size_t g = 0; g < 2; ++g) {
            std::ostringstream key;
            key << (g == 0 ? "geometric" : "non_geometric") << "@" << kRecallThresholds[t];
            cell[key.str()] = r.cells[t][g] ? nlohmann::json(*r.cells[t][g]) : nlohmann::json(nullptr);
          }
        rk["R@" + std::to_string(r.k)] = {{"value", r.value}, {"cells", cell}};
      }
      j["recall"] = rk;
      j["recall_mean"] = recall_mean;
    }
    return j;
  }

  std::string to_text() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << std::left << std::setw(16) << "verb" << std::right << std::setw(10) << "AP" << '\n';
    for (std::size_t v = 0; v < verbs.size(); ++v) {
      os << std::left << std::setw(16) << verbs[v] << std::right << std::setw(10);
      if (ap.per_verb[v])
        os << *ap.per_verb[v];
      else
        os << "n/a";
      os << '\n';
    }
    os << std::left << std::setw(16) << "mAP_rel" << std::right << std::setw(10) << ap.mean << '\n';
    if (!recall.empty()) {
      os << '\n' << std::left << std::setw(16) << "recall (" + std::string(to_string(recall_mode)) + ")";
      for (const auto& r : recall) os << std::right << std::setw(10) << ("R@" + std::to_string(r.k));
      os << std::right << std::setw(10) << "Mean" << '\n' << std::left << std::setw(16) << "";
      for (const auto& r : recall) os << std::right << std::setw(10) << r.value;
      os << std::right << std::setw(10) << recall_mean << '\n';
    }
    return os.str();
  }
};

inline MetricReport evaluate(const std::vector<ImageTriplets>& preds, const std::vector<ImageTriplets>& gts,
                             const std::vector<std::string>& verbs, const std::vector<bool>& verb_geometric,
                             MatchMode ap_mode, std::optional<MatchMode> recall_mode) {
  MetricReport rep;
  rep.verbs = verbs;
  rep.ap_mode = ap_mode;
  rep.ap = map_rel(preds, gts, verbs.size(), 0.5, ap_mode);
  if (recall_mode) {
    rep.recall_mode = *recall_mode;
    double s = 0.0;
    for (int k : kRecallKs) {
      rep.recall.push_back(recall_at_k(preds, gts, verb_geometric, k, *recall_mode));
      s += rep.recall.back().value;
    }
    rep.recall_mean = s / double(kRecallKs.size());
  }
  return rep;
}

}  // namespace choi
