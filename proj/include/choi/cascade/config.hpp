#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace choi {

/// Stage count, per-stage IoU thresholds and loss weights, inference constants.
struct CascadeConfig {
  int stages = 3;
  std::vector<double> iou_thresholds{0.5, 0.6, 0.7};
  double merge_threshold = 0.3;
  std::vector<double> loc_weights{1.0, 0.5, 0.25};       // beta
  std::vector<double> relation_weights{1.0, 0.5, 0.25};  // gamma
  std::vector<double> seg_weights{1.0, 0.5, 0.25};
  int top_k = 64;
  double rank_margin = 0.2;

  void validate() const {
    const auto T = static_cast<std::size_t>(stages);
    if (stages < 1) throw std::invalid_argument("cascade: need at least one stage");
    if (iou_thresholds.size() != T || loc_weights.size() != T || relation_weights.size() != T ||
        seg_weights.size() != T)
      throw std::invalid_argument("cascade: per-stage lists must have " + std::to_string(stages) + " entries");
    for (std::size_t t = 0; t < T; ++t) {
      if (!(iou_thresholds[t] > 0.0 && iou_thresholds[t] < 1.0))
        throw std::invalid_argument("cascade: IoU thresholds must lie in (0, 1)");
      if (t > 0 && !(iou_thresholds[t] > iou_thresholds[t - 1]))
        throw std::invalid_argument("cascade: IoU thresholds must be strictly increasing");
    }
    if (merge_threshold < 0.0 || merge_threshold > 1.0)
      throw std::invalid_argument("cascade: merge threshold must lie in [0, 1]");
    if (top_k < 1) throw std::invalid_argument("cascade: top_k must be >= 1");
    if (!(rank_margin > 0.0)) throw std::invalid_argument("cascade: ranking margin must be positive");
  }

  /// The default schedule truncated or extended to T stages
  /// (thresholds beyond the third continue 0.75, 0.8, ...).
  static CascadeConfig with_stages(int T) {
    if (T < 1 || T > 6) throw std::invalid_argument("cascade: default schedule covers 1..6 stages");
    CascadeConfig c;
    c.stages = T;
    const std::vector<double> mu{0.5, 0.6, 0.7, 0.75, 0.8, 0.85};
    c.iou_thresholds.assign(mu.begin(), mu.begin() + T);
    c.loc_weights.clear();
    double w = 1.0;
    for (int t = 0; t < T; ++t, w *= 0.5) c.loc_weights.push_back(w);
    c.relation_weights = c.loc_weights;
    c.seg_weights = c.loc_weights;
    return c;
  }
};

}  // namespace choi
