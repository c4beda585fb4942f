#include "choi/cascade/localize.hpp"
#include "choi/numerics/gradcheck.hpp"

#include "support.hpp"

#include <cmath>

using namespace choi;
using choi::testing::random_tensor;

namespace {

const ImageSize kImg{128, 128};

Instance seed(const Box& b, int cls = 1, int lineage = 0) {
  Instance i;
  i.class_id = cls;
  i.box = b;
  i.lineage = lineage;
  return i;
}

StageHead zero_head() { return {FCLayer(13 * 49, 4, Activation::none), FCLayer(13 * 49, 1, Activation::none)}; }

Instance at_stage(int lineage, int stage, double conf) {
  Instance i = seed(Box{0, 0, 10, 10}, 1, lineage);
  i.stage = stage;
  i.confidence = conf;
  return i;
}

}  // namespace

TEST(CascadeConfig, DefaultsMatchTheProtocol) {
  const CascadeConfig c;
  EXPECT_EQ(c.stages, 3);
  EXPECT_EQ(c.iou_thresholds, (std::vector<double>{0.5, 0.6, 0.7}));
  EXPECT_EQ(c.merge_threshold, 0.3);
  EXPECT_EQ(c.loc_weights, (std::vector<double>{1.0, 0.5, 0.25}));
  EXPECT_EQ(c.relation_weights, (std::vector<double>{1.0, 0.5, 0.25}));
  EXPECT_EQ(c.seg_weights, (std::vector<double>{1.0, 0.5, 0.25}));
  EXPECT_EQ(c.top_k, 64);
  EXPECT_EQ(c.rank_margin, 0.2);
  EXPECT_NO_THROW(c.validate());
}

TEST(CascadeConfig, WithStagesTruncatesTheSchedule) {
  const auto c1 = CascadeConfig::with_stages(1);
  EXPECT_EQ(c1.iou_thresholds, std::vector<double>{0.5});
  EXPECT_EQ(c1.loc_weights, std::vector<double>{1.0});
  EXPECT_EQ(CascadeConfig::with_stages(3).iou_thresholds, CascadeConfig{}.iou_thresholds);
  EXPECT_THROW(CascadeConfig::with_stages(0), std::invalid_argument);
}

TEST(CascadeConfig, ValidationRejectsBadSchedules) {
  CascadeConfig c;
  c.iou_thresholds = {0.5, 0.5, 0.7};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.loc_weights = {1.0};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.top_k = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.merge_threshold = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(RefineStage, ZeroHeadKeepsTheBox) {
  Rng rng(1);
  const Tensor grid = random_tensor({13, 32, 32}, rng);
  const auto out = refine_stage(grid, seed(Box{20, 30, 60, 90}), zero_head(), kImg);
  ASSERT_TRUE(out.has_value());
  EXPECT_EQ(out->box, (Box{20, 30, 60, 90}));
  EXPECT_EQ(out->confidence, 0.5);
  EXPECT_EQ(out->stage, 1);
}

TEST(RefineStage, HorizontalDeltaShiftsCenter) {
  EXPECT_EQ(apply_deltas(Box{0, 0, 10, 10}, {0.1, 0, 0, 0}), (Box{1, 0, 11, 10}));
  StageHead h = zero_head();
  h.regressor.bias.value[0] = 0.1 / kDeltaStd[0];
  const auto out = refine_stage(Tensor::grid(13, 32, 32), seed(Box{0, 0, 10, 10}), h, kImg);
  ASSERT_TRUE(out.has_value());
  EXPECT_NEAR(out->box.cx(), 6.0, 1e-12);
  EXPECT_NEAR(out->box.width(), 10.0, 1e-12);
}

TEST(RefineStage, LogTwoWidthDeltaDoubles) {
  const Box b = apply_deltas(Box{10, 10, 20, 20}, {0, 0, std::log(2.0), 0});
  EXPECT_NEAR(b.width(), 20.0, 1e-12);
  EXPECT_NEAR(b.cx(), 15.0, 1e-12);
  StageHead h = zero_head();
  h.regressor.bias.value[2] = std::log(2.0) / kDeltaStd[2];
  const auto out = refine_stage(Tensor::grid(13, 32, 32), seed(Box{40, 40, 50, 60}), h, kImg);
  EXPECT_NEAR(out->box.width(), 20.0, 1e-12);
  EXPECT_NEAR(out->box.height(), 20.0, 1e-12);
}

TEST(RefineStage, CollapsedBoxIsDropped) {
  StageHead h = zero_head();
  h.regressor.bias.value[2] = -40.0;
  EXPECT_FALSE(refine_stage(Tensor::grid(13, 32, 32), seed(Box{40, 40, 50, 60}), h, kImg).has_value());
}

TEST(RefineStage, OutputStaysInsideTheImage) {
  Rng rng(2);
  StageHead h{FCLayer::glorot(13 * 49, 4, Activation::none, rng), FCLayer::glorot(13 * 49, 1, Activation::none, rng)};
  const Tensor grid = random_tensor({13, 32, 32}, rng, -3, 3);
  for (int i = 0; i < 50; ++i) {
    const double x = rng.uniform(0, 100), y = rng.uniform(0, 100);
    const auto out = refine_stage(grid, seed(Box{x, y, x + rng.uniform(4, 28), y + rng.uniform(4, 28)}), h, kImg);
    if (!out) continue;
    EXPECT_GE(out->box.x1, 0.0);
    EXPECT_LE(out->box.x2, 128.0);
    EXPECT_GT(out->confidence, 0.0);
    EXPECT_LT(out->confidence, 1.0);
  }
}

TEST(SegmentStage, StrongLogitsFillTheBox) {
  SegHead h{FCLayer(13 * 49, 196, Activation::none)};
  h.fc.bias.value.fill(20.0);
  const Box b{10, 20, 38, 41};
  const Instance out = segment_stage(Tensor::grid(13, 32, 32), seed(b), h, nullptr, kImg);
  EXPECT_EQ(out.mask->bits(), box_mask(b, kImg).bits());
}

TEST(SegmentStage, ZeroWeightsFallBackToFirstCell) {
  SegHead h{FCLayer(13 * 49, 196, Activation::none)};
  const Box b{14, 14, 42, 42};  // 2 px per cell
  const Instance out = segment_stage(Tensor::grid(13, 32, 32), seed(b), h, nullptr, kImg);
  ASSERT_TRUE(out.mask.has_value());
  EXPECT_EQ(out.mask->count(), 4u);
  EXPECT_TRUE(out.mask->get(14, 14) && out.mask->get(15, 15));
  const Instance again = segment_stage(Tensor::grid(13, 32, 32), seed(b), h, nullptr, kImg);
  EXPECT_EQ(again.mask->bits(), out.mask->bits());
}

TEST(SegmentStage, CheckerboardMatchesRasterizer) {
  SegHead h{FCLayer(13 * 49, 196, Activation::none)};
  for (std::size_t cy = 0; cy < 14; ++cy)
    for (std::size_t cx = 0; cx < 14; ++cx) h.fc.bias.value[cy * 14 + cx] = (cx + cy) % 2 ? -3.0 : 3.0;
  const Box b{10.5, 20.25, 51.5, 70.0};
  const Instance out = segment_stage(Tensor::grid(13, 32, 32), seed(b), h, nullptr, kImg);
  for (std::size_t y = 0; y < 128; ++y)
    for (std::size_t x = 0; x < 128; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      bool want = false;
      if (px >= b.x1 && px < b.x2 && py >= b.y1 && py < b.y2) {
        const int cx = std::min(13, int((px - b.x1) * 14 / b.width()));
        const int cy = std::min(13, int((py - b.y1) * 14 / b.height()));
        want = (cx + cy) % 2 == 0;
      }
      ASSERT_EQ(out.mask->get(x, y), want) << x << "," << y;
    }
}

TEST(SegmentStage, PreviousPooledFeatureIsAdded) {
  Rng rng(3);
  const Tensor grid = random_tensor({13, 32, 32}, rng);
  const Vector prev = choi::testing::random_vector(13 * 49, rng);
  const Box b{30, 30, 60, 60};
  const Vector x = seg_input(grid, b, kImg, &prev);
  EXPECT_LE((x - roi_align(grid, b, kImg).flat() - prev).cwiseAbs().maxCoeff(), 1e-15);
  const Vector wrong = Vector::Zero(5);
  EXPECT_THROW(seg_input(grid, b, kImg, &wrong), ShapeError);
}

TEST(MaskTarget, FullBoxMaskIsAllOnes) {
  const Box b{10, 10, 38, 38};
  EXPECT_EQ(mask_target(box_mask(b, kImg), b), Vector::Ones(196));
}

TEST(Resample, GroundTruthProposalIsAlwaysPositive) {
  const std::vector<GroundTruthBox> gt{{Box{10, 10, 30, 50}, 1}};
  for (double mu : {0.5, 0.6, 0.7, 0.95}) {
    const auto s = resample_for_stage({Box{10, 10, 30, 50}}, gt, mu);
    ASSERT_EQ(s.size(), 2u);  // proposal plus the appended ground truth
    EXPECT_TRUE(s[0].positive);
    EXPECT_EQ(s[0].class_id, 1);
    EXPECT_TRUE(s[1].positive);
  }
}

TEST(Resample, IouPointFiveFiveSwitchesBetweenStages) {
  const std::vector<GroundTruthBox> gt{{Box{0, 0, 10, 10}, 2}};
  const Box p{0, 0, 10, 5.5};
  ASSERT_NEAR(box_iou(p, gt[0].box), 0.55, 1e-12);
  EXPECT_TRUE(resample_for_stage({p}, gt, 0.5)[0].positive);
  EXPECT_FALSE(resample_for_stage({p}, gt, 0.6)[0].positive);
  EXPECT_EQ(resample_for_stage({p}, gt, 0.6)[0].gt_index, -1);
}

TEST(Resample, TargetsReachTheMatchedBox) {
  const std::vector<GroundTruthBox> gt{{Box{0, 0, 10, 10}, 2}, {Box{50, 50, 70, 90}, 3}};
  const Box p{52, 48, 71, 88};
  const auto s = resample_for_stage({p}, gt, 0.5)[0];
  ASSERT_TRUE(s.positive);
  EXPECT_EQ(s.gt_index, 1);
  const Box r = apply_deltas(p, s.target);
  EXPECT_NEAR(r.x1, 50, 1e-9);
  EXPECT_NEAR(r.y2, 90, 1e-9);
  EXPECT_THROW(resample_for_stage({p}, gt, 1.0), std::invalid_argument);
}

TEST(MergeAndFilter, HighConfidenceKeepsEverything) {
  const std::vector<std::vector<Instance>> stages{{at_stage(0, 1, 0.9), at_stage(1, 1, 0.9)}, {at_stage(0, 2, 0.9)}};
  EXPECT_EQ(merge_and_filter(stages, 0.3).size(), 3u);
}

TEST(MergeAndFilter, MatchesPredicateFilter) {
  Rng rng(4);
  std::vector<std::vector<Instance>> stages(3);
  for (int t = 0; t < 3; ++t)
    for (int l = 0; l < 20; ++l) stages[std::size_t(t)].push_back(at_stage(l, t + 1, rng.uniform()));
  const auto got = merge_and_filter(stages, 0.3);
  std::size_t k = 0;
  for (const auto& st : stages)
    for (const auto& inst : st) {
      if (inst.confidence < 0.3) continue;
      ASSERT_LT(k, got.size());
      EXPECT_EQ(got[k].confidence, inst.confidence);
      EXPECT_EQ(got[k].stage, inst.stage);
      ++k;
    }
  EXPECT_EQ(k, got.size());
  EXPECT_THROW(merge_and_filter(stages, -0.1), std::invalid_argument);
}

TEST(CollapseLineages, LatestStageWins) {
  const auto out = collapse_lineages({at_stage(1, 1, 0.5), at_stage(0, 1, 0.4), at_stage(1, 3, 0.6), at_stage(0, 2, 0.7)});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].lineage, 0);
  EXPECT_EQ(out[0].stage, 2);
  EXPECT_EQ(out[1].stage, 3);
}

TEST(LocalizationLoss, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  const Tensor grid = random_tensor({2, 8, 8}, rng, 0, 1);
  const ImageSize img{32, 32};
  StageHead head{FCLayer::glorot(2 * 49, 4, Activation::none, rng), FCLayer::glorot(2 * 49, 1, Activation::none, rng)};
  const std::vector<GroundTruthBox> gt{{Box{4, 4, 16, 20}, 1}};
  const auto samples = resample_for_stage({Box{5, 3, 15, 21}, Box{20, 20, 30, 30}, Box{3, 5, 17, 19}}, gt, 0.5);
  ParamStore ps;
  ps.add("reg", head.regressor);
  ps.add("score", head.scorer);
  ScalarMap op{[&] { return localization_loss(grid, samples, head, img, 0.7, false).loss * 0.7; },
               [&] { localization_loss(grid, samples, head, img, 0.7); }};
  const auto rep = finite_diff_check("loc", op, ps);
  EXPECT_TRUE(rep.passed()) << rep.worst_entry << " " << rep.max_rel_error;
}

TEST(SegmentationLoss, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  const Tensor grid = random_tensor({2, 8, 8}, rng, 0, 1);
  const ImageSize img{32, 32};
  SegHead head{FCLayer::glorot(2 * 49, 196, Activation::none, rng)};
  const Box b{4, 4, 20, 24};
  const BitMask m = ellipse_mask(b, img);
  const std::vector<SegSample> samples{{b, {}, mask_target(m, b)}, {b, Vector::Constant(98, 0.2), mask_target(m, b)}};
  ParamStore ps;
  ps.add("seg", head.fc);
  ScalarMap op{[&] { return segmentation_loss(grid, samples, head, img, 0.5, false) * 0.5; },
               [&] { segmentation_loss(grid, samples, head, img, 0.5); }};
  const auto rep = finite_diff_check("seg", op, ps);
  EXPECT_TRUE(rep.passed()) << rep.worst_entry << " " << rep.max_rel_error;
}
