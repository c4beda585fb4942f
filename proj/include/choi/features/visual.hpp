#pragma once

#include "choi/numerics/conv.hpp"
#include "choi/numerics/layers.hpp"

namespace choi {

// ---------------------------------------------------------------------------
// Implicit human semantic mining.
//
// For every pixel i of the human feature H (C x P, P = H*W):
//   a_ij = exp(h_i . h_j) / sum_k exp(h_i . h_k)     (raw dot products)
//   c_i  = sum_j a_ij h_j
//   Hbar = H + C
// The attention rows act as soft part-label maps over the human region.
// ---------------------------------------------------------------------------

struct IhsmResult {
  Tensor enhanced;   // Hbar, same shape as H
  RowMatrix attention;  // P x P, rows sum to one
};

inline IhsmResult ihsm_enhance(const Tensor& H) {
  if (H.rank() != 3) throw ShapeError("ihsm: expected a (C, H, W) grid, got " + shape_str(H.shape()));
  const auto X = H.matrix();  // C x P
  const RowMatrix S = X.transpose() * X;
  IhsmResult r{H, softmax_rows(S)};
  r.enhanced.matrix() += X * r.attention.transpose();
  return r;
}

/// dH given dHbar and the forward attention.
inline Tensor ihsm_backward(const Tensor& H, const RowMatrix& A, const Tensor& dHbar) {
  const auto X = H.matrix();
  const auto G = dHbar.matrix();
  Tensor dH = dHbar;
  auto dX = dH.matrix();
  dX += G * A;
  const RowMatrix dA = G.transpose() * X;
  RowMatrix dS = A.array() * (dA.colwise() - (dA.array() * A.array()).rowwise().sum().matrix()).array();
  dX += X * (dS + dS.transpose());
  return dH;
}

// ---------------------------------------------------------------------------
// Explicit facial region attending.
// ---------------------------------------------------------------------------

/// Attention input: flatten([F, O]) along channels.
inline Vector efra_input(const Tensor& F, const Tensor& O) {
  require_same_shape(F, O, "efra");
  Vector x(Eigen::Index(F.size() + O.size()));
  x << F.flat(), O.flat();
  return x;
}

/// alpha = sigmoid(FC_x2([F, O])), alphabar = sigmoid(FC_x2([Fbar, O])).
inline std::pair<double, double> efra_attend(const Tensor& F, const Tensor& Fbar, const Tensor& O,
                                             const FCStack& fc_face, const FCStack& fc_nonface) {
  require_same_shape(F, Fbar, "efra");
  const Vector a = fc_stack_forward(efra_input(F, O), fc_face).output.col(0);
  const Vector ab = fc_stack_forward(efra_input(Fbar, O), fc_nonface).output.col(0);
  if (a.size() != 1 || ab.size() != 1) throw ShapeError("efra: attention stacks must output one score");
  return {a[0], ab[0]};
}

/// Obar = O + alpha F + alphabar Fbar.
inline Tensor efra_enhance(const Tensor& O, const Tensor& F, const Tensor& Fbar, double alpha, double alpha_bar) {
  require_same_shape(O, F, "efra_enhance");
  require_same_shape(O, Fbar, "efra_enhance");
  Tensor out = O;
  out.flat() += alpha * F.flat() + alpha_bar * Fbar.flat();
  return out;
}

/// X_v = [Hbar, Obar, U] along channels.
inline Tensor assemble_visual(const Tensor& Hbar, const Tensor& Obar, const Tensor& U) {
  require_same_shape(Hbar, Obar, "assemble_visual");
  require_same_shape(Hbar, U, "assemble_visual");
  return concat_channels({&Hbar, &Obar, &U});
}

/// Xbar_v = FC_x2(X_v^t + X_v^{t-1}); the first stage passes zeros as predecessor.
inline Vector cross_stage_fuse(const Tensor& xv, const Tensor& xv_prev, const FCStack& fc) {
  require_same_shape(xv, xv_prev, "cross_stage_fuse");
  const Vector sum = xv.flat() + xv_prev.flat();
  return fc_stack_forward(sum, fc).output.col(0);
}

/// X_g from the two-channel spatial map.
inline Vector geometric_feature(const Tensor& pair_map, const ConvPoolEncoder& enc) {
  if (pair_map.rank() != 3 || pair_map.channels() != 2)
    throw ShapeError("geometric_feature: expected a (2, H, W) map, got " + shape_str(pair_map.shape()));
  return conv_pool_forward(pair_map, enc);
}

}  // namespace choi
