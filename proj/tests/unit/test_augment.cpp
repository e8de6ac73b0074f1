#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "stal3d/augment.hpp"
#include "stal3d/errors.hpp"
#include "stal3d/simworld.hpp"

namespace stal3d {
namespace {

TEST(Ros, IdentityRangeIsBitIdentical) {
  const Scene s = sample_scene(DomainSpec::baseline(), 1, 0);
  const auto [pts, labels] = ros_transform(s.points, s.labels, ScaleRange::identity(), 42);
  EXPECT_TRUE((pts.array() == s.points.array()).all());
  EXPECT_EQ(labels, s.labels);
}

TEST(Ros, CenterPointStays) {
  const Box3D b = Box3D::make(2, -1, 0.8, 4, 2, 1.6, 0.6);
  PointCloud p(3, 1);
  p.col(0) = b.center();
  const auto [out, labels] = scale_objects(p, {b}, {ScaleFactors(1.7, 0.6, 1.3)});
  EXPECT_NEAR((out.col(0) - b.center()).norm(), 0.0, 1e-12);
  EXPECT_NEAR(labels[0].l, 6.8, 1e-12);
  EXPECT_NEAR(labels[0].w, 1.2, 1e-12);
  EXPECT_NEAR(labels[0].h, 1.6 * 1.3, 1e-12);
}

TEST(Ros, FaceMidpointAtQuarterTurnDoubles) {
  const double yaw = std::numbers::pi / 4;
  const Box3D b = Box3D::make(1, 2, 0.5, 4, 2, 1, yaw);
  // +length face midpoint: center + (l/2) * (cos, sin)
  const double c = std::cos(yaw), s = std::sin(yaw);
  PointCloud p(3, 1);
  p.col(0) << 1 + 2 * c, 2 + 2 * s, 0.5;
  const auto [out, labels] = scale_objects(p, {b}, {ScaleFactors(2, 1, 1)});
  EXPECT_NEAR(out(0, 0), 1 + 4 * c, 1e-12);
  EXPECT_NEAR(out(1, 0), 2 + 4 * s, 1e-12);
  EXPECT_NEAR(out(2, 0), 0.5, 1e-12);
}

TEST(Ros, OverlapGoesToNearestCenter) {
  const Box3D a = Box3D::make(0, 0, 0, 4, 4, 2, 0);
  const Box3D b = Box3D::make(1.5, 0, 0, 4, 4, 2, 0);
  PointCloud p(3, 2);
  p.col(0) << 0.5, 0, 0;   // nearer a
  p.col(1) << 1.2, 0, 0;   // nearer b
  EXPECT_EQ(owning_box(p.col(0), {a, b}), 0);
  EXPECT_EQ(owning_box(p.col(1), {a, b}), 1);
  const auto [out, labels] = scale_objects(p, {a, b}, {ScaleFactors(2, 1, 1), ScaleFactors(1, 1, 1)});
  EXPECT_NEAR(out(0, 0), 1.0, 1e-12);
  EXPECT_EQ(out(0, 1), 1.2);
}

TEST(Ros, Invariants) {
  DomainSpec spec = DomainSpec::baseline();
  spec.clutter_rate = 1.0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    const Scene s = sample_scene(spec, 9, k);
    const auto [pts, labels] = ros_transform(s.points, s.labels, ScaleRange{}, 1000 + k);
    ASSERT_EQ(pts.cols(), s.points.cols());
    ASSERT_EQ(labels.size(), s.labels.size());
    for (const Box3D& b : labels) {
      EXPECT_GT(b.l, 0);
      EXPECT_GT(b.w, 0);
      EXPECT_GT(b.h, 0);
    }
    for (Eigen::Index i = 0; i < pts.cols(); ++i) {
      const Eigen::Vector3d before = s.points.col(i);
      const int owner = owning_box(before, s.labels);
      if (owner < 0) {
        EXPECT_TRUE((pts.col(i).array() == before.array()).all());
        continue;
      }
      const Box3D& b0 = s.labels[static_cast<std::size_t>(owner)];
      const Box3D& b1 = labels[static_cast<std::size_t>(owner)];
      const Eigen::Vector3d r(b1.l / b0.l, b1.w / b0.w, b1.h / b0.h);
      const Eigen::Vector3d expect = b0.to_local(before).cwiseProduct(r);
      EXPECT_LT((b1.to_local(pts.col(i)) - expect).norm(), 1e-9);
    }
  }
}

TEST(Ros, DeterministicInSeed) {
  const Scene s = sample_scene(DomainSpec::baseline(), 2, 5);
  const auto a = ros_transform(s.points, s.labels, ScaleRange{}, 7);
  const auto b = ros_transform(s.points, s.labels, ScaleRange{}, 7);
  const auto c = ros_transform(s.points, s.labels, ScaleRange{}, 8);
  EXPECT_TRUE((a.first.array() == b.first.array()).all());
  EXPECT_EQ(a.second, b.second);
  EXPECT_NE(a.second, c.second);
}

TEST(Ros, DrawsStayInRange) {
  const Scene s = sample_scene(DomainSpec::baseline(), 3, 1);
  ScaleRange r{{0.9, 1.1}, {0.5, 0.6}, {1.0, 1.0}};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto [pts, labels] = ros_transform(s.points, s.labels, r, seed);
    for (std::size_t b = 0; b < labels.size(); ++b) {
      const double fl = labels[b].l / s.labels[b].l, fw = labels[b].w / s.labels[b].w;
      EXPECT_GE(fl, 0.9 - 1e-12);
      EXPECT_LE(fl, 1.1 + 1e-12);
      EXPECT_GE(fw, 0.5 - 1e-12);
      EXPECT_LE(fw, 0.6 + 1e-12);
      EXPECT_EQ(labels[b].h, s.labels[b].h);
    }
  }
}

TEST(Ros, InvalidRangeRejected) {
  EXPECT_THROW((ScaleRange{{0, 1}, {1, 1}, {1, 1}}.validate()), ConfigError);
  EXPECT_THROW((ScaleRange{{1.2, 1.1}, {1, 1}, {1, 1}}.validate()), ConfigError);
}

}  // namespace
}  // namespace stal3d
