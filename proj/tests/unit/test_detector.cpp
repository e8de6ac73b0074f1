#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "stal3d/detector.hpp"
#include "stal3d/losses.hpp"
#include "stal3d/simworld.hpp"

namespace stal3d {
namespace {

DetectorConfig small_config(int H = 4, int W = 4, int rotations = 2) {
  DetectorConfig c = DetectorConfig::standard();
  c.grid_h = H;
  c.grid_w = W;
  c.num_rotations = rotations;
  return c;
}

PointCloud points(std::initializer_list<std::array<double, 3>> pts) {
  PointCloud p(3, static_cast<Eigen::Index>(pts.size()));
  Eigen::Index i = 0;
  for (const auto& q : pts) p.col(i++) << q[0], q[1], q[2];
  return p;
}

TEST(Pillarize, EmptySceneGivesZeroGrid) {
  const BEVGrid g = pillarize(PointCloud(3, 0), DetectorConfig::standard());
  EXPECT_EQ(g.H, 16);
  EXPECT_TRUE((g.features == 0).all());
  EXPECT_TRUE((g.counts == 0).all());
  EXPECT_EQ(g.dropped_points, 0);
}

TEST(Pillarize, CellCenterPoint) {
  const DetectorConfig c = small_config();  // x, y in [-2, 2], 1 m cells
  const BEVGrid g = pillarize(points({{0.5, -1.5, 0.3}}), c);
  EXPECT_EQ(g.count(2, 0), 1);
  EXPECT_EQ(g.counts.sum(), 1);
  EXPECT_NEAR(g.feature(2, 0, 0), std::log(2.0), 1e-15);
  EXPECT_EQ(g.feature(2, 0, 1), 0.3);
  EXPECT_EQ(g.feature(2, 0, 3), 0.0);  // centered
}

TEST(Pillarize, BoundaryGoesToLowerCell) {
  const DetectorConfig c = small_config();
  const BEVGrid g = pillarize(points({{0.0, 1.0, 0.0}}), c);
  EXPECT_EQ(g.count(1, 2), 1);
  EXPECT_EQ(cell_index(-2.0, 2.0, 1.0, 4), 0);
  EXPECT_EQ(cell_index(2.0, 2.0, 1.0, 4), 3);
  EXPECT_EQ(cell_index(2.0001, 2.0, 1.0, 4), -1);
}

TEST(Pillarize, OutOfRangeDroppedAndCounted) {
  const BEVGrid g = pillarize(points({{5, 0, 0}, {0, 0, 0}, {0, -9, 1}}), small_config());
  EXPECT_EQ(g.dropped_points, 2);
  EXPECT_EQ(g.counts.sum(), 1);
}

TEST(Forward, ZeroGridZeroWeightsGivesHalfProbability) {
  const Detector det(small_config());
  const auto out = det.forward(pillarize(PointCloud(3, 0), det.config()), det.zero_params());
  const ag::Array p = 1.0 / (1.0 + (-out.cls_logits.value()).exp());
  EXPECT_TRUE((p == 0.5).all());
  EXPECT_TRUE((out.iou_pred.value() == 0.5).all());
}

TEST(Forward, ShapeArithmetic) {
  for (int H : {3, 8}) {
    for (int W : {5, 8}) {
      for (int C : {1, 3}) {
        for (int R : {1, 2, 3}) {
          DetectorConfig c = small_config(H, W, R);
          c.classes.resize(static_cast<std::size_t>(C));
          c.channels = 4;
          const Detector det(c);
          const auto out = det.forward(pillarize(PointCloud(3, 0), c), det.init_params(1));
          const ag::Index A = C * R;
          EXPECT_EQ(out.cls_logits.shape(), (ag::Shape{H, W, A}));
          EXPECT_EQ(out.reg.shape(), (ag::Shape{H, W, A, 7}));
          EXPECT_EQ(out.dir_logits.shape(), (ag::Shape{H, W, A, kNumDirBins}));
          EXPECT_EQ(out.iou_pred.shape(), (ag::Shape{H, W, A}));
          EXPECT_EQ(out.features.shape(), (ag::Shape{H, W, 4}));
          EXPECT_EQ(det.anchors().size(), static_cast<std::size_t>(H * W * A));
        }
      }
    }
  }
}

TEST(Forward, GridMismatchRejected) {
  const Detector det(small_config());
  EXPECT_THROW(det.forward(pillarize(PointCloud(3, 0), DetectorConfig::standard()), det.zero_params()),
               ShapeError);
}

TEST(Anchors, LayoutAndDims) {
  const DetectorConfig c = small_config();
  const AnchorSet a = make_anchors(c);
  const Box3D& b = a.boxes[static_cast<std::size_t>(a.index(1, 2, 2, 1))];
  EXPECT_EQ(b.class_id, 2);
  EXPECT_NEAR(b.cx, -0.5, 1e-15);
  EXPECT_NEAR(b.cy, 0.5, 1e-15);
  EXPECT_NEAR(b.yaw, std::numbers::pi / 2, 1e-15);
  EXPECT_EQ(b.l, c.classes[2].l);
  EXPECT_EQ(a.class_of(static_cast<std::size_t>(a.index(3, 3, 1, 0))), 1);
}

TEST(Assign, NoLabels) {
  const DetectorConfig c = small_config();
  const auto asg = assign_targets({}, make_anchors(c), c);
  EXPECT_EQ(asg.num_positive, 0);
  for (auto t : asg.cls_target) EXPECT_EQ(t, 0);
}

TEST(Assign, LabelEqualToAnchor) {
  const DetectorConfig c = small_config();
  const AnchorSet anchors = make_anchors(c);
  const std::size_t a = static_cast<std::size_t>(anchors.index(2, 1, 0, 1));
  const auto asg = assign_targets({anchors.boxes[a]}, anchors, c);
  EXPECT_EQ(asg.cls_target[a], 1);
  EXPECT_EQ(asg.reg[a].as_vector().norm(), 0.0);
  EXPECT_EQ(asg.matched_label[a], 0);
}

TEST(Assign, ClaimsHigherIouAnchorThenLowerIndex) {
  DetectorConfig c = small_config(4, 4, 1);
  c.classes = {{"car", 2.0, 1.0, 1.0, 0.5, 0.99, 0.1}};
  const AnchorSet anchors = make_anchors(c);
  const Box3D& a0 = anchors.boxes[static_cast<std::size_t>(anchors.index(1, 1, 0, 0))];
  const Box3D& a1 = anchors.boxes[static_cast<std::size_t>(anchors.index(2, 1, 0, 0))];

  // 0.3 m from a0 and 0.7 m from a1 along x
  Box3D near = a0;
  near.cx += 0.3;
  auto asg = assign_targets({near}, anchors, c);
  EXPECT_EQ(asg.num_positive, 1);
  EXPECT_EQ(asg.cls_target[static_cast<std::size_t>(anchors.index(1, 1, 0, 0))], 1);
  EXPECT_NEAR(iou_bev(near, a0), 1.7 / 2.3, 1e-12);
  EXPECT_NEAR(iou_bev(near, a1), 1.3 / 2.7, 1e-12);

  Box3D mid = a0;
  mid.cx = (a0.cx + a1.cx) / 2;
  asg = assign_targets({mid}, anchors, c);
  EXPECT_EQ(asg.num_positive, 1);
  EXPECT_EQ(asg.cls_target[static_cast<std::size_t>(anchors.index(1, 1, 0, 0))], 1);
  EXPECT_EQ(asg.cls_target[static_cast<std::size_t>(anchors.index(2, 1, 0, 0))], -1);
}

TEST(Assign, ThresholdsForSmallClasses) {
  const DetectorConfig c = small_config(4, 4, 1);
  const AnchorSet anchors = make_anchors(c);
  const std::size_t a = static_cast<std::size_t>(anchors.index(1, 1, 1, 0));
  Box3D ped = anchors.boxes[a];
  ped.cy += 0.1;  // iou 0.4/0.56 with its own anchor
  const auto asg = assign_targets({ped}, anchors, c);
  EXPECT_EQ(asg.cls_target[a], 1);
  EXPECT_EQ(asg.dir_bin[a], direction_bin(ped.yaw));
}

TEST(Assign, TranslationEquivariance) {
  const DetectorConfig c = small_config(8, 8, 2);
  const AnchorSet anchors = make_anchors(c);
  const std::vector<Box3D> labels = {Box3D::make(-0.8, 0.3, 0.8, 4.0, 1.8, 1.6, 0.2, 0),
                                     Box3D::make(0.6, -1.1, 0.85, 0.8, 0.6, 1.7, 1.3, 1)};
  std::vector<Box3D> shifted = labels;
  for (auto& b : shifted) b.cx += c.cell_size;
  const auto a1 = assign_targets(labels, anchors, c);
  const auto a2 = assign_targets(shifted, anchors, c);
  for (int h = 1; h + 2 < c.grid_h; ++h) {
    for (int w = 0; w < c.grid_w; ++w) {
      for (int k = 0; k < c.anchors_per_cell(); ++k) {
        const auto i = static_cast<std::size_t>((h * c.grid_w + w) * c.anchors_per_cell() + k);
        const auto j = static_cast<std::size_t>(((h + 1) * c.grid_w + w) * c.anchors_per_cell() + k);
        EXPECT_EQ(a1.cls_target[i], a2.cls_target[j]) << h << "," << w << "," << k;
        if (a1.cls_target[i] == 1) {
          EXPECT_LT((a1.reg[i].as_vector() - a2.reg[j].as_vector()).norm(), 1e-12);
        }
      }
    }
  }
}

RawOutputs empty_raw(const Detector& det, double logit) {
  const auto n = static_cast<ag::Index>(det.anchors().size());
  return {ag::Array::Constant(n, logit), ag::Array::Zero(n * 7), ag::Array::Zero(n * kNumDirBins),
          ag::Array::Ones(n)};
}

TEST(Predict, LargeNegativeLogitsGiveNothing) {
  const Detector det(small_config());
  ParameterSet p = det.zero_params();
  for (auto& np : p) {
    if (np.name == "head.cls.bias") np.tensor.mutable_value().setConstant(-50);
  }
  PointCloud pts = points({{0.1, 0.2, 0.5}, {-1, 1, 0.3}});
  EXPECT_TRUE(det.predict(pts, p, {}).empty());
}

TEST(Predict, NmsKeepsHigherOfIdentical) {
  const Box3D b = Box3D::make(0, 0, 0, 4, 2, 1.5, 0.3, 0);
  const auto kept = nms_bev({b.with_score(0.9), b.with_score(0.4)}, 0.1);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(*kept[0].score, 0.9);
  // other classes do not suppress each other
  Box3D other = b;
  other.class_id = 1;
  EXPECT_EQ(nms_bev({b.with_score(0.9), other.with_score(0.4)}, 0.1).size(), 2u);
}

TEST(Predict, DirectionBinFlipsYaw) {
  const Detector det(small_config());
  RawOutputs raw = empty_raw(det, 0);
  const std::size_t a = 5;
  const Box3D base = det.decode_anchor(raw, a);
  raw.dir_logits[static_cast<ag::Index>(a) * 2 + 1] = 3.0;
  const Box3D flipped = det.decode_anchor(raw, a);
  EXPECT_NEAR(std::abs(normalize_angle(flipped.yaw - base.yaw)), std::numbers::pi, 1e-12);
}

TEST(Predict, OracleLogitsReproduceLabels) {
  const DetectorConfig c = small_config(8, 8, 2);
  const Detector det(c);
  const AnchorSet& anchors = det.anchors();
  const std::vector<std::size_t> picks = {
      static_cast<std::size_t>(anchors.index(1, 1, 0, 0)),
      static_cast<std::size_t>(anchors.index(6, 2, 1, 1)),
      static_cast<std::size_t>(anchors.index(3, 6, 2, 0))};
  std::vector<Box3D> labels;
  for (std::size_t k = 0; k < picks.size(); ++k) {
    Box3D b = anchors.boxes[picks[k]];
    if (k == 1) b.yaw = normalize_angle(b.yaw + std::numbers::pi);  // opposite heading
    labels.push_back(b);
  }
  // logits set from the assigned targets
  const Assignment asg = assign_targets(labels, anchors, c);
  RawOutputs raw = empty_raw(det, -30);
  for (std::size_t k = 0; k < picks.size(); ++k) {
    const auto a = static_cast<ag::Index>(picks[k]);
    raw.cls_logits[a] = 30;
    raw.reg.segment(a * 7, 7) = asg.reg[picks[k]].as_vector().array();
    raw.dir_logits[a * 2 + asg.dir_bin[picks[k]]] = 5;
  }
  const auto pred = det.decode(raw, {});
  ASSERT_EQ(pred.size(), labels.size());
  for (const Box3D& l : labels) {
    bool found = false;
    for (const Box3D& p : pred) {
      if (p.class_id == l.class_id && std::abs(p.cx - l.cx) < 1e-9 && std::abs(p.cy - l.cy) < 1e-9 &&
          std::abs(p.l - l.l) < 1e-9 && std::abs(normalize_angle(p.yaw - l.yaw)) < 1e-9) {
        found = true;
      }
    }
    EXPECT_TRUE(found);
  }
  for (const Box3D& p : pred) {
    ASSERT_TRUE(p.score.has_value());
    EXPECT_GE(*p.score, 0.0);
    EXPECT_LE(*p.score, 1.0);
  }
}

TEST(Predict, ScoresDescending) {
  const Detector det(DetectorConfig::standard());
  DomainSpec spec = DomainSpec::baseline();
  const Scene s = sample_scene(spec, 3, 0);
  const auto pred = det.predict(s.points, det.init_params(4), {0.0, 0.1, 256, 64});
  for (std::size_t i = 1; i < pred.size(); ++i) EXPECT_GE(*pred[i - 1].score, *pred[i].score);
}

TEST(GradCheck, FullDetectorLossOn8x8Grid) {
  DetectorConfig c = small_config(8, 8, 2);
  c.channels = 6;
  const Detector det(c);
  DomainSpec spec = DomainSpec::baseline();
  spec.range = 4.0;
  spec.min_objects = 2;
  spec.max_objects = 3;
  spec.min_distance = 0.5;
  const Scene s = sample_scene(spec, 5, 0);
  ASSERT_FALSE(s.labels.empty());
  const BEVGrid grid = pillarize(s.points, c);
  ParameterSet params = det.init_params(6);
  const Assignment asg = assign_targets(s.labels, det.anchors(), c);
  const auto iou_t = det.iou_targets(RawOutputs::from(det.forward(grid, params)), asg, s.labels);
  const LossConfig loss;
  const TermSet all{Term::Cls, Term::Reg, Term::Iou, Term::Dir};
  auto f = [&] {
    const auto out = det.forward(grid, params);
    return total_loss({{Domain::Source, all, detection_terms(out, asg, iou_t, all, loss), {}}}, loss).total;
  };
  const auto r = oracle::check_gradients(f, params, 1e-4, 40);
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
}

}  // namespace
}  // namespace stal3d
