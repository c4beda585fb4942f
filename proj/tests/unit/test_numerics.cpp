#include "choi/numerics/checkpoint.hpp"
#include "choi/numerics/gradcheck.hpp"
#include "choi/numerics/losses.hpp"
#include "choi/numerics/params.hpp"

#include "support.hpp"

#include <cmath>

using namespace choi;
using choi::testing::random_tensor;
using choi::testing::random_vector;

namespace {

// Reference loops, written without Eigen products.

Vector naive_fc(const FCLayer& l, const Vector& x) {
  Vector y(static_cast<Eigen::Index>(l.out_dim()));
  for (std::size_t o = 0; o < l.out_dim(); ++o) {
    double acc = l.bias.value[o];
    for (std::size_t i = 0; i < l.in_dim(); ++i) acc += l.weight.value[o * l.in_dim() + i] * x[Eigen::Index(i)];
    if (l.activation == Activation::sigmoid) acc = 1.0 / (1.0 + std::exp(-acc));
    y[Eigen::Index(o)] = acc;
  }
  return y;
}

Tensor naive_conv(const Tensor& x, const ConvLayer& l) {
  const std::size_t C = x.channels(), H = x.height(), W = x.width(), K = l.ksize(), O = l.out_channels();
  const long pad = long(K / 2);
  Tensor y = Tensor::grid(O, H, W);
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        double acc = l.bias.value[o];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t ky = 0; ky < K; ++ky)
            for (std::size_t kx = 0; kx < K; ++kx) {
              const long yy = long(i) + long(ky) - pad, xx = long(j) + long(kx) - pad;
              if (yy < 0 || xx < 0 || yy >= long(H) || xx >= long(W)) continue;
              acc += l.kernel.value[((o * C + c) * K + ky) * K + kx] * x.at(c, std::size_t(yy), std::size_t(xx));
            }
        y.at(o, i, j) = acc;
      }
  return y;
}

}  // namespace

TEST(Tensor, ShapeMismatchThrows) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  const Tensor a = Tensor::grid(2, 3, 3), b = Tensor::grid(3, 3, 3);
  EXPECT_THROW(require_same_shape(a, b, "t"), ShapeError);
}

TEST(Tensor, ConcatThenSliceRecoversParts) {
  Rng rng(3);
  const Tensor a = random_tensor({2, 4, 5}, rng), b = random_tensor({3, 4, 5}, rng);
  const Tensor ab = concat_channels({&a, &b});
  ASSERT_EQ(ab.shape(), (Shape{5, 4, 5}));
  EXPECT_EQ(slice_channels(ab, 0, 2), a);
  EXPECT_EQ(slice_channels(ab, 2, 3), b);
  EXPECT_THROW(slice_channels(ab, 4, 2), ShapeError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.uniform(), b.uniform());
  Rng c(42), d(42);
  EXPECT_EQ(c.derive(5).uniform(), d.derive(5).uniform());
}

TEST(FcForward, IdentityWeightsPassInputThrough) {
  FCLayer l(2, 2, Activation::none);
  l.weight.value.matrix() = RowMatrix::Identity(2, 2);
  const Vector y = fc_forward(Vector{{1.0, 2.0}}, l);
  EXPECT_EQ(y, (Vector{{1.0, 2.0}}));
}

TEST(FcForward, ZeroWeightsSigmoidGivesHalf) {
  FCLayer l(4, 3, Activation::sigmoid);
  Rng rng(1);
  const Vector y = fc_forward(random_vector(4, rng, -50, 50), l);
  for (double v : y) EXPECT_EQ(v, 0.5);
}

TEST(FcForward, MatchesDoubleLoop) {
  Rng rng(7);
  for (auto act : {Activation::none, Activation::sigmoid}) {
    FCLayer l = FCLayer::glorot(9, 5, act, rng);
    for (double& v : l.bias.value.values()) v = rng.uniform(-1, 1);
    const Vector x = random_vector(9, rng);
    EXPECT_LE((fc_forward(x, l) - naive_fc(l, x)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(FcForward, WrongInputLengthThrows) {
  FCLayer l(3, 2, Activation::none);
  EXPECT_THROW(fc_forward(Vector::Zero(4), l), ShapeError);
}

TEST(FcForward, BatchColumnsMatchSingleCalls) {
  Rng rng(8);
  FCLayer l = FCLayer::glorot(6, 4, Activation::sigmoid, rng);
  Matrix X(6, 3);
  for (Eigen::Index c = 0; c < 3; ++c) X.col(c) = random_vector(6, rng);
  const Matrix Y = fc_forward_batch(X, l);
  for (Eigen::Index c = 0; c < 3; ++c) EXPECT_LE((Y.col(c) - fc_forward(X.col(c), l)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(FcBackward, MatchesFiniteDifferences) {
  Rng rng(21);
  for (auto act : {Activation::none, Activation::sigmoid}) {
    FCLayer l = FCLayer::glorot(5, 4, act, rng);
    Param x({5});
    x.value = random_tensor({5}, rng);
    const Vector r = random_projection(4, rng);
    ParamStore ps;
    ps.add("fc", l);
    ps.add("x", x);
    ScalarMap op{[&] { return r.dot(fc_forward(x.value.flat(), l)); },
                 [&] {
                   const Vector xv = x.value.flat();
                   const Vector y = fc_forward(xv, l);
                   x.grad.flat() = fc_backward(l, xv, y, r);
                 }};
    const auto rep = finite_diff_check("fc", op, ps);
    EXPECT_TRUE(rep.passed()) << rep.worst_entry << " " << rep.max_rel_error;
  }
}

TEST(ConvPool, ZeroInputZeroBiasGivesZero) {
  Rng rng(2);
  const auto enc = ConvPoolEncoder::glorot(2, 8, 8, 3, 4, 3, 16, rng);
  const Vector y = conv_pool_forward(Tensor::grid(2, 8, 8), enc);
  EXPECT_EQ(y.size(), 16);
  EXPECT_EQ(y.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ConvPool, UnitOneByOneKernelsPropagateConstants) {
  ConvPoolEncoder e;
  e.conv1 = ConvLayer(1, 1, 1);
  e.conv2 = ConvLayer(1, 1, 1);
  e.conv1.kernel.value.fill(1.0);
  e.conv2.kernel.value.fill(1.0);
  e.fc = FCLayer(4, 4, Activation::none);
  e.fc.weight.value.matrix() = RowMatrix::Identity(4, 4);
  e.in_height = e.in_width = 8;
  const Vector y = conv_pool_forward(Tensor::grid(1, 8, 8, 2.5), e);
  EXPECT_EQ(y, Vector::Constant(4, 2.5));
}

TEST(Conv, MatchesDirectConvolution) {
  Rng rng(5);
  for (std::size_t k : {1u, 3u, 5u}) {
    ConvLayer l(3, 4, k);
    l.kernel.value = random_tensor(l.kernel.value.shape(), rng);
    l.bias.value = random_tensor({4}, rng);
    const Tensor x = random_tensor({3, 6, 7}, rng);
    const Tensor got = conv_forward(x, l), want = naive_conv(x, l);
    ASSERT_EQ(got.shape(), want.shape());
    EXPECT_LE((got.flat() - want.flat()).cwiseAbs().maxCoeff(), 1e-12) << "k=" << k;
  }
  EXPECT_THROW(ConvLayer(1, 1, 2), ShapeError);
}

TEST(ConvPool, SpatialMapEncodesTo256) {
  Rng rng(3);
  const auto enc = ConvPoolEncoder::glorot(2, 64, 64, 4, 8, 3, 256, rng);
  EXPECT_EQ(conv_pool_forward(random_tensor({2, 64, 64}, rng), enc).size(), 256);
}

TEST(MaxPool, FirstMaximumWinsTies) {
  const Tensor x = Tensor::grid(1, 2, 2, 1.0);
  const auto t = maxpool2_forward(x);
  EXPECT_EQ(t.argmax[0], 0u);
  EXPECT_EQ(maxpool2_min_margin(x), 0.0);
}

TEST(SoftmaxRows, UniformRow) {
  const RowMatrix s = softmax_rows(RowMatrix::Zero(1, 3));
  for (Eigen::Index j = 0; j < 3; ++j) EXPECT_NEAR(s(0, j), 1.0 / 3.0, 1e-15);
}

TEST(SoftmaxRows, LargeEqualLogitsDoNotOverflow) {
  RowMatrix m(1, 2);
  m << 1000, 1000;
  const RowMatrix s = softmax_rows(m);
  EXPECT_EQ(s(0, 0), 0.5);
  EXPECT_EQ(s(0, 1), 0.5);
}

TEST(SoftmaxRows, MatchesDirectFormula) {
  RowMatrix m(1, 3);
  m << 1, 2, 3;
  const RowMatrix s = softmax_rows(m);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(s(0, j), std::exp(double(j + 1)) / z, 1e-15);
}

TEST(SoftmaxRows, RowsSumToOne) {
  Rng rng(9);
  RowMatrix m(5, 7);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-30, 30);
  const RowMatrix s = softmax_rows(m);
  for (Eigen::Index r = 0; r < 5; ++r) EXPECT_NEAR(s.row(r).sum(), 1.0, 1e-12);
  EXPECT_GE(s.minCoeff(), 0.0);
}

TEST(Bce, PerfectPredictionAtClampIsNearZero) {
  const Vector t{{1.0, 0.0, 1.0, 0.0}};
  const auto r = binary_cross_entropy(t, t);
  EXPECT_LE(r.loss, 2e-7 * 4);
  EXPECT_GE(r.loss, 0.0);
}

TEST(Bce, MidpointCostsLn2) {
  const auto r = binary_cross_entropy(Vector::Constant(3, 0.5), Vector::Ones(3));
  EXPECT_NEAR(r.loss, 3 * std::log(2.0), 1e-15);
}

TEST(Bce, MatchesElementwiseSum) {
  Rng rng(4);
  const Vector s = random_vector(20, rng, 0.01, 0.99);
  Vector t(20);
  for (Eigen::Index i = 0; i < 20; ++i) t[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  double want = 0.0;
  for (Eigen::Index i = 0; i < 20; ++i) want += t[i] > 0.5 ? -std::log(s[i]) : -std::log(1.0 - s[i]);
  const auto r = binary_cross_entropy(s, t);
  EXPECT_NEAR(r.loss, want, 1e-12);
  for (Eigen::Index i = 0; i < 20; ++i) {
    const double g = t[i] > 0.5 ? -1.0 / s[i] : 1.0 / (1.0 - s[i]);
    EXPECT_NEAR(r.grad[i], g, 1e-9);
  }
  EXPECT_THROW(binary_cross_entropy(s, Vector::Zero(3)), ShapeError);
}

TEST(Hinge, MarginSatisfiedIsZero) {
  const auto r = pairwise_hinge_loss(Vector{{0.9}}, Vector{{0.1}}, 0.2);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.grad_pos[0], 0.0);
}

TEST(Hinge, ViolatedPairHandValue) {
  const auto r = pairwise_hinge_loss(Vector{{0.5}}, Vector{{0.6}}, 0.2);
  EXPECT_NEAR(r.loss, 0.3, 1e-15);
  EXPECT_EQ(r.grad_pos[0], -1.0);
  EXPECT_EQ(r.grad_neg[0], 1.0);
}

TEST(Hinge, NonNegativeAndMonotoneInMargin) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector p = random_vector(4, rng, 0, 1), n = random_vector(6, rng, 0, 1);
    const double a = pairwise_hinge_loss(p, n, 0.1).loss, b = pairwise_hinge_loss(p, n, 0.3).loss;
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, b);
  }
  EXPECT_THROW(pairwise_hinge_loss(Vector::Zero(1), Vector::Zero(1), 0.0), std::invalid_argument);
}

TEST(SmoothL1, QuadraticInsideLinearOutside) {
  const auto r = smooth_l1(Vector{{0.5, 3.0}}, Vector{{0.0, 0.0}});
  EXPECT_NEAR(r.loss, 0.125 + 2.5, 1e-15);
  EXPECT_EQ(r.grad, (Vector{{0.5, 1.0}}));
}

TEST(Sgd, ZeroLearningRateLeavesParams) {
  Rng rng(1);
  Param p({3, 2});
  p.value = random_tensor({3, 2}, rng);
  p.grad = random_tensor({3, 2}, rng);
  const Tensor before = p.value;
  ParamStore ps;
  ps.add("p", p);
  sgd_step(ps, 0.0);
  EXPECT_EQ(p.value, before);
}

TEST(Sgd, ScalarRule) {
  Param p({1});
  p.value[0] = 1.0;
  p.grad[0] = 2.0;
  ParamStore ps;
  ps.add("p", p);
  sgd_step(ps, 0.1);
  EXPECT_NEAR(p.value[0], 0.8, 1e-15);
  EXPECT_EQ(p.grad[0], 0.0);
}

TEST(Sgd, MultiBlockEqualsPerBlock) {
  Rng rng(6);
  Param a({4}), b({2, 3});
  for (Param* p : {&a, &b}) {
    p->value = random_tensor(p->value.shape(), rng);
    p->grad = random_tensor(p->grad.shape(), rng);
  }
  Param a1 = a, b1 = b;
  ParamStore both, only_a, only_b;
  both.add("a", a);
  both.add("b", b);
  only_a.add("a", a1);
  only_b.add("b", b1);
  sgd_step(both, 0.3);
  sgd_step(only_a, 0.3);
  sgd_step(only_b, 0.3);
  EXPECT_EQ(a.value, a1.value);
  EXPECT_EQ(b.value, b1.value);
}

TEST(Sgd, NonFiniteGradientAbortsWithoutUpdate) {
  Param a({2}), b({2});
  a.grad[0] = 1.0;
  b.grad[1] = std::nan("");
  ParamStore ps;
  ps.add("a", a);
  ps.add("b", b);
  EXPECT_THROW(sgd_step(ps, 1.0), TrainingError);
  EXPECT_EQ(a.value[0], 0.0);
}

TEST(ClipGradNorm, ScalesToMaxNorm) {
  Param p({2});
  p.grad[0] = 3.0;
  p.grad[1] = 4.0;
  ParamStore ps;
  ps.add("p", p);
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(grad_norm(ps), 1.0, 1e-15);
}

TEST(GradCheck, DetectsAWrongGradient) {
  Param x({3});
  x.value.flat() = Vector{{0.3, -0.2, 0.9}};
  ParamStore ps;
  ps.add("x", x);
  ScalarMap op{[&] { return x.value.flat().squaredNorm(); }, [&] { x.grad.flat() = 3.0 * x.value.flat(); }};
  EXPECT_FALSE(finite_diff_check("bad", op, ps).passed());
  op.analytic = [&] { x.grad.flat() = 2.0 * x.value.flat(); };
  EXPECT_TRUE(finite_diff_check("good", op, ps).passed());
}

TEST(Checkpoint, RoundTripsAtFloatPrecision) {
  choi::testing::TempDir dir("ckpt");
  Rng rng(10);
  FCLayer l = FCLayer::glorot(5, 3, Activation::none, rng);
  ParamStore ps;
  ps.add("fc", l);
  save_checkpoint(ps, (dir / "m.json").string(), (dir / "m.bin").string(), {{"note", 1}});
  FCLayer l2(5, 3, Activation::none);
  ParamStore ps2;
  ps2.add("fc", l2);
  const auto extra = load_checkpoint(ps2, (dir / "m.json").string());
  EXPECT_EQ(extra.at("note"), 1);
  for (std::size_t i = 0; i < l.weight.value.size(); ++i)
    EXPECT_EQ(l2.weight.value[i], double(float(l.weight.value[i])));
}

TEST(Checkpoint, ShapeMismatchIsAFormatError) {
  choi::testing::TempDir dir("ckpt");
  FCLayer l(5, 3, Activation::none);
  ParamStore ps;
  ps.add("fc", l);
  save_checkpoint(ps, (dir / "m.json").string(), (dir / "m.bin").string(), {});
  FCLayer other(4, 3, Activation::none);
  ParamStore ps2;
  ps2.add("fc", other);
  EXPECT_THROW(load_checkpoint(ps2, (dir / "m.json").string()), FormatError);
}
