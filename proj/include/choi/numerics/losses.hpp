#pragma once

#include "choi/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace choi {

constexpr double kBceClamp = 1e-7;

struct LossGrad {
  double loss = 0.0;
  Vector grad;  // d loss / d scores
};

/// Summed binary cross-entropy over elements; scores are clamped before the log.
inline LossGrad binary_cross_entropy(const Vector& scores, const Vector& targets) {
  if (scores.size() != targets.size())
    throw ShapeError("bce: " + std::to_string(scores.size()) + " scores vs " + std::to_string(targets.size()) +
                     " targets");
  LossGrad out{0.0, Vector::Zero(scores.size())};
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const double p = std::clamp(scores[i], kBceClamp, 1.0 - kBceClamp);
    const double t = targets[i];
    out.loss -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    // Zero gradient where the clamp is active.
    if (scores[i] > kBceClamp && scores[i] < 1.0 - kBceClamp) out.grad[i] = (p - t) / (p * (1.0 - p));
  }
  return out;
}

struct HingeGrad {
  double loss = 0.0;
  Vector grad_pos;
  Vector grad_neg;
};

/// sum_{p in pos} sum_{n in neg} max(0, n - p + margin). Subgradient 0 at the kink.
inline HingeGrad pairwise_hinge_loss(const Vector& pos, const Vector& neg, double margin) {
  if (!(margin > 0.0)) throw std::invalid_argument("pairwise_hinge_loss: margin must be positive");
  HingeGrad out{0.0, Vector::Zero(pos.size()), Vector::Zero(neg.size())};
  for (Eigen::Index i = 0; i < pos.size(); ++i)
    for (Eigen::Index j = 0; j < neg.size(); ++j) {
      const double slack = neg[j] - pos[i] + margin;
      if (slack > 0.0) {
        out.loss += slack;
        out.grad_pos[i] -= 1.0;
        out.grad_neg[j] += 1.0;
      }
    }
  return out;
}

/// Smooth-L1 (Huber with beta) summed over elements.
inline LossGrad smooth_l1(const Vector& pred, const Vector& target, double beta = 1.0) {
  if (pred.size() != target.size()) throw ShapeError("smooth_l1: length mismatch");
  LossGrad out{0.0, Vector::Zero(pred.size())};
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    if (std::abs(d) < beta) {
      out.loss += 0.5 * d * d / beta;
      out.grad[i] = d / beta;
    } else {
      out.loss += std::abs(d) - 0.5 * beta;
      out.grad[i] = d > 0 ? 1.0 : -1.0;
    }
  }
  return out;
}

}  // namespace choi
