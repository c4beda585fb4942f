#include "choi/features/face.hpp"
#include "choi/features/semantic.hpp"
#include "choi/features/visual.hpp"

#include "support.hpp"

#include <cmath>
#include <map>

using namespace choi;
using choi::testing::random_tensor;
using choi::testing::random_vector;

namespace {

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Two stacked layers evaluated with explicit loops.
Vector naive_stack(const FCStack& s, const Vector& x) {
  auto layer = [](const FCLayer& l, const Vector& in) {
    Vector out(Eigen::Index(l.out_dim()));
    for (std::size_t o = 0; o < l.out_dim(); ++o) {
      double acc = l.bias.value[o];
      for (std::size_t i = 0; i < l.in_dim(); ++i) acc += l.weight.value[o * l.in_dim() + i] * in[Eigen::Index(i)];
      out[Eigen::Index(o)] = l.activation == Activation::sigmoid ? sigm(acc) : acc;
    }
    return out;
  };
  return layer(s.second, layer(s.first, x));
}

void randomize_biases(FCStack& s, Rng& rng) {
  for (double& v : s.first.bias.value.values()) v = rng.uniform(-0.5, 0.5);
  for (double& v : s.second.bias.value.values()) v = rng.uniform(-0.5, 0.5);
}

}  // namespace

TEST(Cooccurrence, SingleTripletIsOneHot) {
  const auto t = build_cooccurrence({{2, 5}}, 5, 6);
  Vector want = Vector::Zero(6);
  want[5] = 1.0;
  EXPECT_EQ(semantic_prior(2, t), want);
}

TEST(Cooccurrence, TwoVerbsSplitEvenly) {
  const auto t = build_cooccurrence({{1, 1}, {1, 3}}, 5, 6);
  const Vector row = semantic_prior(1, t);
  EXPECT_EQ(row[1], 0.5);
  EXPECT_EQ(row[3], 0.5);
  EXPECT_EQ(row.sum(), 1.0);
}

TEST(Cooccurrence, MatchesCountingOracle) {
  Rng rng(23);
  std::vector<TripletLabel> labels;
  std::map<std::pair<int, int>, int> counts;
  std::map<int, int> per_class;
  for (int i = 0; i < 400; ++i) {
    const TripletLabel l{rng.integer(0, 3), rng.integer(0, 5)};  // class 4 never seen
    labels.push_back(l);
    ++counts[{l.object_class, l.verb}];
    ++per_class[l.object_class];
  }
  const auto t = build_cooccurrence(labels, 5, 6);
  for (int c = 0; c < 4; ++c)
    for (int v = 0; v < 6; ++v)
      EXPECT_DOUBLE_EQ(semantic_prior(c, t)[v], double(counts[{c, v}]) / per_class[c]);
  EXPECT_EQ(semantic_prior(4, t), Vector::Constant(6, 1.0 / 6.0));
  EXPECT_EQ(semantic_prior(-1, t), Vector::Constant(6, 1.0 / 6.0));
}

TEST(Cooccurrence, RejectsEmptyAndOutOfRange) {
  EXPECT_THROW(build_cooccurrence({}, 5, 6), std::invalid_argument);
  EXPECT_THROW(build_cooccurrence({{5, 0}}, 5, 6), std::out_of_range);
  EXPECT_THROW(build_cooccurrence({{0, 6}}, 5, 6), std::out_of_range);
}

TEST(Cooccurrence, JsonRoundTrip) {
  const auto t = build_cooccurrence({{0, 0}, {2, 3}, {2, 3}, {4, 1}}, 5, 6);
  const auto back = CooccurrenceTable::from_json(t.to_json());
  EXPECT_EQ(back.counts(), t.counts());
}

TEST(GeometricFeature, ZeroMapGivesZero) {
  Rng rng(1);
  const auto enc = ConvPoolEncoder::glorot(2, 64, 64, 4, 8, 3, 256, rng);
  const Vector y = geometric_feature(Tensor::grid(2, 64, 64), enc);
  EXPECT_EQ(y.size(), 256);
  EXPECT_EQ(y.cwiseAbs().maxCoeff(), 0.0);
}

TEST(GeometricFeature, ChannelSwapChangesOutput) {
  Rng rng(2);
  const auto enc = ConvPoolEncoder::glorot(2, 64, 64, 4, 8, 3, 256, rng);
  const SpatialEntity h{Box{0, 0, 20, 60}}, o{Box{15, 30, 30, 45}};
  const Tensor ho = spatial_pair_encoding(h, o, Representation::box);
  const Tensor oh = spatial_pair_encoding(o, h, Representation::box);
  EXPECT_GT((geometric_feature(ho, enc) - geometric_feature(oh, enc)).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_THROW(geometric_feature(Tensor::grid(3, 64, 64), enc), ShapeError);
}

TEST(FaceRegion, AnnotationIsReturnedVerbatim) {
  Instance h;
  h.box = {10, 10, 50, 110};
  const Box ann{20, 12, 40, 30};
  const auto f = face_region(h, ann);
  EXPECT_EQ(f.box, ann);
  EXPECT_EQ(f.source, FaceRegion::Source::annotated);
}

TEST(FaceRegion, HeuristicOnTallBox) {
  Instance h;
  h.box = {0, 0, 100, 200};
  const auto f = face_region(h);
  EXPECT_EQ(f.box, (Box{25, 0, 75, 60}));
  EXPECT_EQ(f.source, FaceRegion::Source::heuristic);
}

TEST(FaceRegion, AlwaysInsideHuman) {
  Instance h;
  h.box = {10, 10, 50, 110};
  const auto f = face_region(h, Box{0, 0, 30, 30});
  EXPECT_EQ(f.box, (Box{10, 10, 30, 30}));
}

TEST(Ihsm, SinglePixelDoubles) {
  Tensor H = Tensor::grid(3, 1, 1);
  H.flat() << 0.5, -2.0, 1.0;
  const auto r = ihsm_enhance(H);
  EXPECT_EQ(r.attention.rows(), 1);
  EXPECT_EQ(r.attention(0, 0), 1.0);
  EXPECT_EQ(r.enhanced.flat(), 2.0 * H.flat());
}

TEST(Ihsm, IdenticalPixelsGiveUniformRows) {
  Tensor H = Tensor::grid(2, 3, 3);
  for (std::size_t p = 0; p < 9; ++p) H[p] = 0.7, H[9 + p] = -0.4;
  const auto r = ihsm_enhance(H);
  for (Eigen::Index i = 0; i < 9; ++i)
    for (Eigen::Index j = 0; j < 9; ++j) EXPECT_NEAR(r.attention(i, j), 1.0 / 9.0, 1e-15);
  EXPECT_LE((r.enhanced.flat() - 2.0 * H.flat()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Ihsm, MatchesDoubleLoop) {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor H = random_tensor({4, 2, 2}, rng, -2, 2);
    const auto r = ihsm_enhance(H);
    const std::size_t P = 4, C = 4;
    for (std::size_t i = 0; i < P; ++i) {
      std::vector<double> s(P);
      double z = 0;
      for (std::size_t j = 0; j < P; ++j) {
        double dot = 0;
        for (std::size_t c = 0; c < C; ++c) dot += H[c * P + i] * H[c * P + j];
        s[j] = std::exp(dot);
        z += s[j];
      }
      for (std::size_t c = 0; c < C; ++c) {
        double ctx = 0;
        for (std::size_t j = 0; j < P; ++j) ctx += s[j] / z * H[c * P + j];
        EXPECT_NEAR(r.enhanced[c * P + i], H[c * P + i] + ctx, 1e-12);
      }
      for (std::size_t j = 0; j < P; ++j) EXPECT_NEAR(r.attention(Eigen::Index(i), Eigen::Index(j)), s[j] / z, 1e-12);
    }
  }
}

TEST(Ihsm, AttentionRowsAreDistributions) {
  Rng rng(32);
  const auto r = ihsm_enhance(random_tensor({13, 7, 7}, rng, -1, 1));
  EXPECT_EQ(r.attention.rows(), 49);
  for (Eigen::Index i = 0; i < 49; ++i) EXPECT_NEAR(r.attention.row(i).sum(), 1.0, 1e-12);
  EXPECT_GE(r.attention.minCoeff(), 0.0);
}

TEST(Efra, ZeroWeightsGiveHalf) {
  const FCStack zero{FCLayer(8, 4, Activation::none), FCLayer(4, 1, Activation::sigmoid)};
  Rng rng(3);
  const Tensor F = random_tensor({1, 2, 2}, rng), Fb = random_tensor({1, 2, 2}, rng), O = random_tensor({1, 2, 2}, rng);
  const auto [a, ab] = efra_attend(F, Fb, O, zero, zero);
  EXPECT_EQ(a, 0.5);
  EXPECT_EQ(ab, 0.5);
}

TEST(Efra, AttentionMatchesDirectEvaluationAndStaysInUnitInterval) {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    FCStack face = FCStack::glorot(18, 5, 1, Activation::sigmoid, rng);
    FCStack nonface = FCStack::glorot(18, 5, 1, Activation::sigmoid, rng);
    randomize_biases(face, rng);
    randomize_biases(nonface, rng);
    const double scale = trial < 15 ? 1.0 : 40.0;
    const Tensor F = random_tensor({1, 3, 3}, rng, -scale, scale), Fb = random_tensor({1, 3, 3}, rng, -scale, scale);
    const Tensor O = random_tensor({1, 3, 3}, rng, -scale, scale);
    const auto [a, ab] = efra_attend(F, Fb, O, face, nonface);
    Vector x1(18), x2(18);
    x1 << F.flat(), O.flat();
    x2 << Fb.flat(), O.flat();
    EXPECT_NEAR(a, naive_stack(face, x1)[0], 1e-12);
    EXPECT_NEAR(ab, naive_stack(nonface, x2)[0], 1e-12);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
    if (scale == 1.0) {
      EXPECT_GT(a, 0.0);
      EXPECT_LT(a, 1.0);
    }
  }
}

TEST(EfraEnhance, HandCases) {
  Rng rng(5);
  const Tensor O = random_tensor({2, 3, 3}, rng), F = random_tensor({2, 3, 3}, rng), Fb = random_tensor({2, 3, 3}, rng);
  EXPECT_EQ(efra_enhance(O, F, Fb, 0.0, 0.0), O);
  EXPECT_LE((efra_enhance(O, O, Fb, 1.0, 0.0).flat() - 2.0 * O.flat()).cwiseAbs().maxCoeff(), 1e-15);
  const Tensor got = efra_enhance(O, F, Fb, 0.3, 0.8);
  for (std::size_t i = 0; i < O.size(); ++i) EXPECT_NEAR(got[i], O[i] + 0.3 * F[i] + 0.8 * Fb[i], 1e-15);
}

TEST(AssembleVisual, StacksChannels) {
  const Tensor a = Tensor::grid(1, 2, 2, 1), b = Tensor::grid(1, 2, 2, 2), c = Tensor::grid(1, 2, 2, 3);
  const Tensor x = assemble_visual(a, b, c);
  ASSERT_EQ(x.shape(), (Shape{3, 2, 2}));
  for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(x.at(ch, 1, 1), double(ch + 1));
  Rng rng(6);
  const Tensor h = random_tensor({13, 7, 7}, rng), o = random_tensor({13, 7, 7}, rng), u = random_tensor({13, 7, 7}, rng);
  const Tensor xv = assemble_visual(h, o, u);
  EXPECT_EQ(xv.channels(), 39u);
  EXPECT_EQ(slice_channels(xv, 0, 13), h);
  EXPECT_EQ(slice_channels(xv, 13, 13), o);
  EXPECT_EQ(slice_channels(xv, 26, 13), u);
}

TEST(CrossStageFuse, SamePredecessorDoublesInput) {
  Rng rng(7);
  FCStack fc = FCStack::glorot(12, 6, 5, Activation::none, rng);
  randomize_biases(fc, rng);
  const Tensor x = random_tensor({3, 2, 2}, rng);
  const Vector twice = 2.0 * x.flat();
  EXPECT_LE((cross_stage_fuse(x, x, fc) - fc_stack_forward(twice, fc).output.col(0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CrossStageFuse, MatchesMatmulOracle) {
  Rng rng(8);
  FCStack fc = FCStack::glorot(12, 6, 5, Activation::none, rng);
  randomize_biases(fc, rng);
  const Tensor x = random_tensor({3, 2, 2}, rng), p = random_tensor({3, 2, 2}, rng);
  const Vector sum = x.flat() + p.flat();
  EXPECT_LE((cross_stage_fuse(x, p, fc) - naive_stack(fc, sum)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(cross_stage_fuse(x, Tensor::grid(3, 2, 3), fc), ShapeError);
}

TEST(CrossStageFuse, FullWidthOutputIs1024) {
  Rng rng(9);
  const FCStack fc = FCStack::glorot(39 * 49, 64, 1024, Activation::none, rng);
  const Tensor x = random_tensor({39, 7, 7}, rng);
  EXPECT_EQ(cross_stage_fuse(x, Tensor::grid(39, 7, 7), fc).size(), 1024);
}
