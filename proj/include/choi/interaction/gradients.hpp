#pragma once

#include "choi/geometry/roi.hpp"
#include "choi/interaction/model.hpp"
#include "choi/numerics/gradcheck.hpp"
#include "choi/numerics/losses.hpp"

namespace choi {

// Finite-difference suites for every learned or differentiated operation.
// Each suite draws `points` seeded random points, checks all entries of every
// input and parameter block, and reports the worst relative error seen.

namespace gradsuite {

inline void fill_uniform(Tensor& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (double& v : t.values()) v = rng.uniform(lo, hi);
}

inline Param random_param(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Param p(std::move(shape));
  fill_uniform(p.value, rng, lo, hi);
  return p;
}

inline FCLayer random_fc(std::size_t in, std::size_t out, Activation act, Rng& rng) {
  FCLayer l = FCLayer::glorot(in, out, act, rng);
  fill_uniform(l.bias.value, rng, -0.5, 0.5);
  return l;
}

inline FCStack random_stack(std::size_t in, std::size_t hidden, std::size_t out, Activation last, Rng& rng) {
  return {random_fc(in, hidden, Activation::none, rng), random_fc(hidden, out, last, rng)};
}

inline double project(const Vector& r, const Vector& y) { return r.dot(y); }

/// Keeps the worst report of a suite.
inline void keep_worst(GradCheckReport& acc, const GradCheckReport& r) {
  acc.checked += r.checked;
  if (r.max_rel_error >= acc.max_rel_error) {
    acc.max_rel_error = r.max_rel_error;
    acc.worst_entry = r.worst_entry;
  }
}

// --- one point per op ------------------------------------------------------

inline GradCheckReport fc_point(Rng& rng, double tol) {
  const std::size_t in = std::size_t(rng.integer(2, 6)), out = std::size_t(rng.integer(1, 4));
  FCLayer l = random_fc(in, out, rng.bernoulli(0.5) ? Activation::sigmoid : Activation::none, rng);
  Param x = random_param({in}, rng);
  const Vector r = random_projection(out, rng);
  ParamStore ps;
  ps.add("fc", l);
  ps.add("x", x);
  return finite_diff_check(
      "fc",
      {[&] { return project(r, fc_forward(x.value.flat(), l)); },
       [&] {
         const Vector xv = x.value.flat();
         const Vector y = fc_forward(xv, l);
         x.grad.flat() += fc_backward(l, xv, y, r, true);
       }},
      ps, tol);
}

inline GradCheckReport conv_pool_point(Rng& rng, double tol) {
  ConvPoolEncoder e = ConvPoolEncoder::glorot(2, 8, 8, 2, 3, 3, 4, rng);
  fill_uniform(e.conv1.bias.value, rng, -0.3, 0.3);
  fill_uniform(e.conv2.bias.value, rng, -0.3, 0.3);
  Param x = random_param({2, 8, 8}, rng);
  // Max-pool is piecewise; redraw until every window has a clear winner.
  auto margin_ok = [&] {
    const ConvPoolTrace t = conv_pool_trace(x.value, e);
    return maxpool2_min_margin(t.conv1_out) > 5e-2 && maxpool2_min_margin(t.conv2_out) > 5e-2;
  };
  for (int tries = 0; tries < 200 && !margin_ok(); ++tries) fill_uniform(x.value, rng);
  const Vector r = random_projection(4, rng);
  ParamStore ps;
  ps.add("enc", e);
  ps.add("x", x);
  return finite_diff_check(
      "conv_pool",
      {[&] { return project(r, conv_pool_forward(x.value, e)); },
       [&] {
         const ConvPoolTrace t = conv_pool_trace(x.value, e);
         x.grad.flat() += conv_pool_backward(e, t, r, true).flat();
       }},
      ps, tol);
}

inline GradCheckReport roi_align_point(Rng& rng, double tol) {
  const ImageSize img{32, 32};
  Param grid = random_param({2, 8, 8}, rng);
  const double x1 = rng.uniform(0, 20), y1 = rng.uniform(0, 20);
  const Box box{x1, y1, x1 + rng.uniform(3, 12), y1 + rng.uniform(3, 12)};
  const Tensor probe = roi_align(grid.value, box, img, 3, 3);
  const Vector r = random_projection(probe.size(), rng);
  ParamStore ps;
  ps.add("grid", grid);
  return finite_diff_check(
      "roi_align",
      {[&] { return project(r, roi_align(grid.value, box, img, 3, 3).flat()); },
       [&] { grid.grad.flat() += roi_align_backward(grid.value.shape(), box, img, from_vector(r, probe.shape())).flat(); }},
      ps, tol);
}

inline GradCheckReport ihsm_point(Rng& rng, double tol) {
  Param h = random_param({3, 3, 3}, rng);
  const Vector r = random_projection(h.value.size(), rng);
  ParamStore ps;
  ps.add("H", h);
  return finite_diff_check("ihsm",
                           {[&] { return project(r, ihsm_enhance(h.value).enhanced.flat()); },
                            [&] {
                              const IhsmResult res = ihsm_enhance(h.value);
                              h.grad.flat() +=
                                  ihsm_backward(h.value, res.attention, from_vector(r, h.value.shape())).flat();
                            }},
                           ps, tol);
}

/// Obar = O + alpha F + alpha_bar Fbar with both attention stacks, gradients
/// to the stacks and to F, Fbar, O.
inline GradCheckReport efra_point(Rng& rng, double tol) {
  const Shape shape{2, 2, 2};
  Param F = random_param(shape, rng), Fb = random_param(shape, rng), O = random_param(shape, rng);
  FCStack face = random_stack(16, 4, 1, Activation::sigmoid, rng);
  FCStack nonface = random_stack(16, 4, 1, Activation::sigmoid, rng);
  const Vector r = random_projection(O.value.size(), rng);
  ParamStore ps;
  ps.add("efra.face", face);
  ps.add("efra.nonface", nonface);
  ps.add("F", F);
  ps.add("Fbar", Fb);
  ps.add("O", O);
  auto forward = [&] {
    const auto [a, ab] = efra_attend(F.value, Fb.value, O.value, face, nonface);
    return efra_enhance(O.value, F.value, Fb.value, a, ab);
  };
  return finite_diff_check(
      "efra",
      {[&] { return project(r, forward().flat()); },
       [&] {
         const FCStackTrace tf = fc_stack_forward(efra_input(F.value, O.value), face);
         const FCStackTrace tn = fc_stack_forward(efra_input(Fb.value, O.value), nonface);
         const double a = tf.output(0, 0), ab = tn.output(0, 0);
         const auto n = Eigen::Index(O.value.size());
         const Matrix da = Matrix::Constant(1, 1, r.dot(F.value.flat()));
         const Matrix dab = Matrix::Constant(1, 1, r.dot(Fb.value.flat()));
         const Matrix dxf = fc_stack_backward(face, tf, da, true);
         const Matrix dxn = fc_stack_backward(nonface, tn, dab, true);
         O.grad.flat() += r + dxf.col(0).tail(n) + dxn.col(0).tail(n);
         F.grad.flat() += a * r + dxf.col(0).head(n);
         Fb.grad.flat() += ab * r + dxn.col(0).head(n);
       }},
      ps, tol);
}

inline GradCheckReport rrm_point(Rng& rng, double tol) {
  const std::size_t vd = 5, gd = 3;
  RRMHead head{random_fc(vd + gd, 1, Activation::sigmoid, rng)};
  Param xv = random_param({vd}, rng), xg = random_param({gd}, rng);
  ParamStore ps;
  ps.add("rrm", head.fc);
  ps.add("x_v", xv);
  ps.add("x_g", xg);
  auto score = [&] {
    RelationFeatures f;
    f.x_v_fused = Vector(xv.value.flat());
    f.x_g = xg.value.flat();
    return rank_score(f, head);
  };
  return finite_diff_check("rrm",
                           {score,
                            [&] {
                              const Vector in = rrm_input(xv.value.flat(), xg.value.flat());
                              const Vector y = fc_forward(in, head.fc);
                              const Vector dx = fc_backward(head.fc, in, y, Vector::Ones(1), true);
                              xv.grad.flat() += dx.head(Eigen::Index(vd));
                              xg.grad.flat() += dx.tail(Eigen::Index(gd));
                            }},
                           ps, tol);
}

inline GradCheckReport rcm_point(Rng& rng, double tol) {
  const std::size_t N = 3, gd = 4, vd = 5;
  RCMHeads heads{random_fc(N, N, Activation::sigmoid, rng), random_fc(gd, N, Activation::sigmoid, rng),
                 random_fc(vd, N, Activation::sigmoid, rng)};
  Param xs = random_param({N}, rng, 0.0, 1.0), xg = random_param({gd}, rng), xv = random_param({vd}, rng);
  const Vector rs = random_projection(N, rng), rg = random_projection(N, rng), rv = random_projection(N, rng);
  ParamStore ps;
  ps.add("rcm.semantic", heads.semantic);
  ps.add("rcm.geometric", heads.geometric);
  ps.add("rcm.visual", heads.visual);
  ps.add("x_s", xs);
  ps.add("x_g", xg);
  ps.add("x_v", xv);
  auto features = [&] {
    RelationFeatures f;
    f.x_s = xs.value.flat();
    f.x_g = xg.value.flat();
    f.x_v_fused = Vector(xv.value.flat());
    return f;
  };
  return finite_diff_check(
      "rcm",
      {[&] {
         const StreamScores s = classify_relation(features(), heads);
         return rs.dot(s.semantic) + rg.dot(s.geometric) + rv.dot(s.visual);
       },
       [&] {
         const StreamScores s = classify_relation(features(), heads);
         xs.grad.flat() += fc_backward(heads.semantic, xs.value.flat(), s.semantic, rs, true);
         xg.grad.flat() += fc_backward(heads.geometric, xg.value.flat(), s.geometric, rg, true);
         xv.grad.flat() += fc_backward(heads.visual, xv.value.flat(), s.visual, rv, true);
       }},
      ps, tol);
}

inline GradCheckReport hinge_point(Rng& rng, double tol, double margin) {
  Param pos = random_param({std::size_t(rng.integer(1, 4))}, rng, 0.0, 1.0);
  Param neg = random_param({std::size_t(rng.integer(1, 4))}, rng, 0.0, 1.0);
  // Stay away from the kinks so central differences see one linear piece.
  auto clear = [&] {
    for (double p : pos.value.values())
      for (double n : neg.value.values())
        if (std::abs(n - p + margin) <= 1e-2) return false;
    return true;
  };
  while (!clear()) fill_uniform(neg.value, rng, 0.0, 1.0);
  ParamStore ps;
  ps.add("pos", pos);
  ps.add("neg", neg);
  return finite_diff_check("hinge",
                           {[&] { return pairwise_hinge_loss(pos.value.flat(), neg.value.flat(), margin).loss; },
                            [&] {
                              const HingeGrad h = pairwise_hinge_loss(pos.value.flat(), neg.value.flat(), margin);
                              pos.grad.flat() += h.grad_pos;
                              neg.grad.flat() += h.grad_neg;
                            }},
                           ps, tol);
}

inline GradCheckReport bce_point(Rng& rng, double tol) {
  const std::size_t n = std::size_t(rng.integer(1, 6));
  Param scores = random_param({n}, rng, 0.1, 0.9);
  Vector targets(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < targets.size(); ++i) targets[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  ParamStore ps;
  ps.add("scores", scores);
  return finite_diff_check("bce",
                           {[&] { return binary_cross_entropy(scores.value.flat(), targets).loss; },
                            [&] { scores.grad.flat() += binary_cross_entropy(scores.value.flat(), targets).grad; }},
                           ps, tol);
}

}  // namespace gradsuite

struct GradSuiteOptions {
  int points = 10;
  std::uint64_t seed = 11;
  double tolerance = 1e-4;
  double rank_margin = 0.2;
};

/// One report per operation, each the worst over `points` seeded points.
inline std::vector<GradCheckReport> run_gradient_suite(const GradSuiteOptions& opt = {}) {
  using namespace gradsuite;
  using PointFn = std::function<GradCheckReport(Rng&)>;
  const double tol = opt.tolerance;
  const std::vector<std::pair<std::string, PointFn>> ops{
      {"fc", [&](Rng& r) { return fc_point(r, tol); }},
      {"conv_pool", [&](Rng& r) { return conv_pool_point(r, tol); }},
      {"roi_align", [&](Rng& r) { return roi_align_point(r, tol); }},
      {"ihsm", [&](Rng& r) { return ihsm_point(r, tol); }},
      {"efra", [&](Rng& r) { return efra_point(r, tol); }},
      {"rrm", [&](Rng& r) { return rrm_point(r, tol); }},
      {"rcm", [&](Rng& r) { return rcm_point(r, tol); }},
      {"hinge", [&](Rng& r) { return hinge_point(r, tol, opt.rank_margin); }},
      {"bce", [&](Rng& r) { return bce_point(r, tol); }},
  };
  std::vector<GradCheckReport> out;
  Rng root(opt.seed);
  for (std::size_t k = 0; k < ops.size(); ++k) {
    GradCheckReport acc;
    acc.name = ops[k].first;
    acc.tolerance = tol;
    for (int p = 0; p < opt.points; ++p) {
      Rng rng = root.derive(k * 1000 + std::size_t(p));
      keep_worst(acc, ops[k].second(rng));
    }
    out.push_back(acc);
  }
  return out;
}

}  // namespace choi
