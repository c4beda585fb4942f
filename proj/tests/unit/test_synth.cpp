#include "choi/io/formats.hpp"
#include "choi/synth/generate.hpp"
#include "choi/synth/oracle.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace choi;

namespace {

std::string corpus_bytes(const std::vector<Sample>& data) {
  std::string out;
  for (const auto& s : data) out += io::scene_json(s.scene).dump() + io::encode_grid(s.grid);
  return out;
}

SceneSpec clean_spec() {
  SceneSpec spec;
  spec.noise = 0.0;
  return spec;
}

}  // namespace

TEST(GenerateDataset, SameSeedSameBytes) {
  SceneSpec spec;
  spec.seed = 42;
  EXPECT_EQ(corpus_bytes(generate_dataset(spec, 12)), corpus_bytes(generate_dataset(spec, 12)));
  spec.seed = 43;
  EXPECT_NE(corpus_bytes(generate_dataset(spec, 12)), corpus_bytes(generate_dataset(SceneSpec{}, 12)));
}

TEST(GenerateDataset, OffsetSplitsMatchFullRun) {
  const SceneSpec spec;
  const auto full = generate_dataset(spec, 8);
  const auto tail = generate_dataset(spec, 3, 5);
  ASSERT_EQ(tail.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(io::scene_json(tail[i].scene), io::scene_json(full[5 + i].scene));
}

TEST(GenerateDataset, ZeroJitterProposalsEqualEntities) {
  SceneSpec spec;
  spec.jitter = 0.0;
  for (const auto& s : generate_dataset(spec, 20))
    for (const auto& p : s.scene.proposals) {
      if (p.entity < 0) continue;
      EXPECT_EQ(p.iou, 1.0);
      EXPECT_EQ(p.box, s.scene.entity(p.entity).box);
      EXPECT_EQ(p.class_id, s.scene.entity(p.entity).class_id);
    }
}

TEST(GenerateDataset, ProposalIouIsRecorded) {
  for (const auto& s : generate_dataset(SceneSpec{}, 20))
    for (const auto& p : s.scene.proposals)
      if (p.entity >= 0) {
        EXPECT_DOUBLE_EQ(p.iou, box_iou(p.box, s.scene.entity(p.entity).box));
      }
}

TEST(GenerateDataset, VerbsMatchRuleReapplication) {
  SceneSpec spec;
  spec.occlusion_rate = 0.5;
  for (const auto& s : generate_dataset(spec, 60)) {
    std::set<std::tuple<int, int, int>> emitted, want;
    for (const auto& t : s.scene.triplets) emitted.insert({t.human, t.verb, t.object});
    for (const auto& h : s.scene.entities) {
      if (h.class_id != world::person) continue;
      for (const auto& o : s.scene.entities)
        if (o.id != h.id)
          for (int v : rule_verbs(h, o)) want.insert({h.id, v, o.id});
    }
    EXPECT_EQ(emitted, want) << s.scene.image_id;
  }
}

TEST(GenerateDataset, SceneInvariants) {
  std::set<int> verbs_seen;
  for (const auto& s : generate_dataset(SceneSpec{}, 60)) {
    std::set<int> ids;
    for (const auto& e : s.scene.entities) {
      EXPECT_TRUE(ids.insert(e.id).second);
      if (e.class_id == world::person) {
        ASSERT_TRUE(e.face.has_value());
        EXPECT_GE(e.face->x1, e.box.x1);
        EXPECT_GE(e.face->y1, e.box.y1);
        EXPECT_LE(e.face->x2, e.box.x2);
        EXPECT_LE(e.face->y2, e.box.y2);
      } else {
        EXPECT_FALSE(e.face.has_value());
      }
      EXPECT_TRUE(e.mask.any());
    }
    for (const auto& t : s.scene.triplets) {
      EXPECT_EQ(s.scene.entity(t.human).class_id, world::person);
      EXPECT_NO_THROW(s.scene.entity(t.object));
      verbs_seen.insert(t.verb);
    }
  }
  EXPECT_EQ(verbs_seen.size(), default_vocabulary().num_verbs());
}

TEST(GenerateDataset, InvalidSpecsThrow) {
  SceneSpec s;
  s.size = {64, 64};
  EXPECT_THROW(generate_dataset(s, 1), std::invalid_argument);
  s = SceneSpec{};
  s.max_humans = 3;
  EXPECT_THROW(generate_dataset(s, 1), std::invalid_argument);
  s = SceneSpec{};
  s.grid_w = 30;
  EXPECT_THROW(generate_dataset(s, 1), std::invalid_argument);
  s = SceneSpec{};
  s.occlusion_rate = 1.5;
  EXPECT_THROW(generate_dataset(s, 1), std::invalid_argument);
}

TEST(FeatureGrid, ClassChannelIsOneInsideEntities) {
  const SceneSpec spec = clean_spec();
  for (const auto& s : generate_dataset(spec, 10)) {
    ASSERT_EQ(s.grid.shape(), (Shape{spec.channels(), 32, 32}));
    for (const auto& e : s.scene.entities) {
      const BitMask cells = downsample_mask(e.mask, 32, 32);
      double sum = 0;
      for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x)
          if (cells.get(x, y)) sum += s.grid.at(std::size_t(e.class_id), y, x);
      EXPECT_EQ(sum / double(cells.count()), 1.0);
    }
  }
}

TEST(FeatureGrid, ZeroOutsideAllEvidence) {
  const SceneSpec spec = clean_spec();
  const std::size_t nc = spec.vocab.num_classes();
  for (const auto& s : generate_dataset(spec, 10)) {
    BitMask any(32, 32);
    for (const auto& e : s.scene.entities) any = mask_or(any, downsample_mask(e.mask, 32, 32));
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) {
        const double px = 4.0 * x + 2.0, py = 4.0 * y + 2.0;
        bool in_region = false;
        for (const auto& t : s.scene.triplets)
          in_region |= interaction_region(s.scene.entity(t.human).box, s.scene.entity(t.object).box).contains(px, py);
        bool in_face = false;
        for (const auto& e : s.scene.entities) in_face |= e.face && e.face->contains(px, py);
        for (std::size_t c = 0; c < spec.channels(); ++c) {
          const bool class_or_part = c < nc || c == spec.channels() - 1;
          const bool verb = c >= nc && c < spec.channels() - 2;
          const bool face = c == spec.channels() - 2;
          if ((class_or_part && !any.get(x, y)) || (verb && !in_region) || (face && !in_face)) {
            EXPECT_EQ(s.grid.at(c, y, x), 0.0);
          }
        }
      }
  }
}

TEST(FeatureGrid, VerbAndFaceChannelsMatchRasterization) {
  const SceneSpec spec = clean_spec();
  const std::size_t nc = spec.vocab.num_classes(), nv = spec.vocab.num_verbs();
  for (const auto& s : generate_dataset(spec, 10))
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) {
        const double px = 4.0 * x + 2.0, py = 4.0 * y + 2.0;
        std::vector<double> want(nv, 0.0);
        for (const auto& t : s.scene.triplets) {
          const Box& h = s.scene.entity(t.human).box;
          const Box& o = s.scene.entity(t.object).box;
          const double m = kVerbRegionMargin;
          const double x1 = std::max(h.x1, o.x1) - m, x2 = std::min(h.x2, o.x2) + m;
          const double y1 = std::max(h.y1, o.y1) - m, y2 = std::min(h.y2, o.y2) + m;
          if (px >= x1 && px < x2 && py >= y1 && py < y2) want[std::size_t(t.verb)] = 1.0;
        }
        for (std::size_t v = 0; v < nv; ++v) EXPECT_EQ(s.grid.at(nc + v, y, x), want[v]);
        double face = 0;
        for (const auto& e : s.scene.entities)
          if (e.face && px >= e.face->x1 && px < e.face->x2 && py >= e.face->y1 && py < e.face->y2) face = 1;
        EXPECT_EQ(s.grid.at(nc + nv, y, x), face);
      }
}

TEST(FeatureGrid, TooFewChannelsThrows) {
  const auto data = generate_dataset(SceneSpec{}, 1);
  Rng rng(1);
  EXPECT_THROW(render_feature_grid(data[0].scene, default_vocabulary(), 12, 32, 32, 0.0, rng), std::invalid_argument);
}

TEST(GenerateDataset, LinearProbeRecoversEntityClass) {
  // Softmax regression on mean-pooled entity features, trained on one split
  // and scored on another.
  const SceneSpec spec;
  const std::size_t C = spec.channels(), K = spec.vocab.num_classes();
  auto pooled = [&](const std::vector<Sample>& data, Matrix& X, std::vector<int>& y) {
    std::vector<Vector> rows;
    for (const auto& s : data)
      for (const auto& e : s.scene.entities) {
        const BitMask cells = downsample_mask(e.mask, spec.grid_h, spec.grid_w);
        Vector f = Vector::Zero(Eigen::Index(C + 1));
        for (std::size_t yy = 0; yy < spec.grid_h; ++yy)
          for (std::size_t xx = 0; xx < spec.grid_w; ++xx)
            if (cells.get(xx, yy))
              for (std::size_t c = 0; c < C; ++c) f[Eigen::Index(c)] += s.grid.at(c, yy, xx);
        f.head(Eigen::Index(C)) /= double(cells.count());
        f[Eigen::Index(C)] = 1.0;
        rows.push_back(f);
        y.push_back(e.class_id);
      }
    X.resize(Eigen::Index(rows.size()), Eigen::Index(C + 1));
    for (std::size_t i = 0; i < rows.size(); ++i) X.row(Eigen::Index(i)) = rows[i].transpose();
  };
  Matrix Xtr, Xte;
  std::vector<int> ytr, yte;
  pooled(generate_dataset(spec, 100), Xtr, ytr);
  pooled(generate_dataset(spec, 100, 100), Xte, yte);
  Matrix W = Matrix::Zero(Xtr.cols(), Eigen::Index(K));
  for (int it = 0; it < 300; ++it) {
    Matrix P = Xtr * W;
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
      P.row(i).array() -= P.row(i).maxCoeff();
      P.row(i) = P.row(i).array().exp().matrix();
      P.row(i) /= P.row(i).sum();
      P(i, ytr[std::size_t(i)]) -= 1.0;
    }
    W -= 1.0 * Xtr.transpose() * P / double(Xtr.rows());
  }
  const Matrix S = Xte * W;
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < S.rows(); ++i) {
    Eigen::Index k;
    S.row(i).maxCoeff(&k);
    correct += int(k) == yte[std::size_t(i)];
  }
  EXPECT_GE(double(correct) / double(S.rows()), 0.99);
}

TEST(Oracle, HandCases) {
  EXPECT_NEAR(oracle::hinge({0.5}, {0.6}, 0.2), 0.3, 1e-15);
  const Box h{0, 0, 10, 10}, o{20, 0, 30, 10};
  const TripletRecord gt{h, o, nullptr, nullptr, 0, 0.0};
  const TripletRecord tp{h, o, nullptr, nullptr, 0, 0.9};
  const TripletRecord fp{{40, 40, 50, 50}, o, nullptr, nullptr, 0, 0.1};
  EXPECT_DOUBLE_EQ(oracle::ap_single_image({tp, fp}, {gt}, 0, 0.5), 1.0);
}

TEST(Oracle, BruteForceBoundsAreEnforced) {
  const oracle::Grid big(1, std::vector<std::vector<double>>(5, std::vector<double>(5, 0.0)));
  EXPECT_THROW(oracle::ihsm(big), oracle::BoundsError);
  std::vector<TripletRecord> many(oracle::kMaxPredictions + 1);
  EXPECT_THROW(oracle::match(many, {}, 0.5), oracle::BoundsError);
}

TEST(Oracle, SuiteAgreesWithLibrary) {
  const auto results = oracle::run_oracle_suite(200, 77);
  EXPECT_GE(results.size(), 6u);
  for (const auto& r : results) {
    EXPECT_TRUE(r.passed(1e-10)) << r.name << " diff " << r.max_abs_diff << " mismatches " << r.mismatches;
    EXPECT_EQ(r.instances, 200u) << r.name;
  }
}
