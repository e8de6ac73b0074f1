#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "stal3d/errors.hpp"
#include "stal3d/losses.hpp"

namespace stal3d {
namespace {

using ag::Array;
using ag::Tensor;

/// The six source/target routings of the SFM ablation; direction is routed everywhere.
struct RoutingRow {
  TermSet source, target;
};
constexpr RoutingRow kAblationRows[] = {
    {{Term::Cls, Term::Reg, Term::Iou, Term::Dir}, {Term::Cls, Term::Reg, Term::Iou, Term::Dir}},
    {{Term::Cls, Term::Iou, Term::Dir}, {Term::Cls, Term::Reg, Term::Iou, Term::Dir}},
    {{Term::Cls, Term::Iou, Term::Dir}, {Term::Reg, Term::Iou, Term::Dir}},
    {{Term::Cls, Term::RegFiltered, Term::Iou, Term::Dir},
     {Term::Cls, Term::RegFiltered, Term::Iou, Term::Dir}},
    {{Term::Cls, Term::Iou, Term::Dir}, {Term::Cls, Term::RegFiltered, Term::Iou, Term::Dir}},
    {{Term::Cls, Term::RegFiltered, Term::Iou, Term::Dir}, {Term::RegFiltered, Term::Iou, Term::Dir}},
};
static_assert([] {
  for (const auto& r : kAblationRows) {
    if (!r.source.valid() || !r.target.valid()) return false;
  }
  return true;
}());
static_assert(LossConfig{}.source_terms == kAblationRows[5].source);
static_assert(LossConfig{}.target_terms == kAblationRows[5].target);
static_assert(!TermSet{Term::Reg, Term::RegFiltered}.valid());

/// One positive anchor (index 0) and one negative (index 1).
Assignment one_positive() {
  Assignment a;
  a.cls_target = {1, 0};
  a.matched_label = {0, -1};
  a.reg.resize(2);
  a.dir_bin = {1, 0};
  a.num_positive = 1;
  return a;
}

TEST(Focal, ScalarExamples) {
  EXPECT_NEAR(focal_loss(1.0 - 1e-9, 1, 0.25, 2.0), 0.0, 1e-12);
  EXPECT_NEAR(focal_loss(0.5, 1, 0.25, 2.0), 0.25 * 0.25 * std::log(2.0), 1e-15);
  EXPECT_NEAR(focal_loss(0.5, 1, 0.25, 2.0), 0.04332, 1e-5);
  for (double p : {0.1, 0.3, 0.8}) {
    EXPECT_NEAR(focal_loss(p, 1, 0.5, 0.0), -0.5 * std::log(p), 1e-15);
    EXPECT_NEAR(focal_loss(p, 0, 0.5, 0.0), -0.5 * std::log(1 - p), 1e-15);
  }
}

TEST(Focal, TapeMatchesScalarAndIgnoresMarked) {
  const Tensor z = Tensor::constant({3}, Array::LinSpaced(3, -1, 1));
  const double v = focal_loss(z, {1, 0, -1}, 0.25, 2.0).item();
  const double p0 = 1 / (1 + std::exp(1.0)), p1 = 0.5;
  EXPECT_NEAR(v, focal_loss(p0, 1, 0.25, 2.0) + focal_loss(p1, 0, 0.25, 2.0), 1e-15);
  std::mt19937_64 rng(1);
  Tensor leaf = oracle::random_leaf({6}, rng, -3, 3);
  const auto r = oracle::check_gradients([&] { return focal_loss(leaf, {1, 0, 0, 1, -1, 0}, 0.25, 2.0); }, {leaf});
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

TEST(SmoothL1, Branches) {
  EXPECT_EQ(smooth_l1(0.0), 0.0);
  EXPECT_DOUBLE_EQ(smooth_l1(0.5), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(-2.0), 1.5);
  EXPECT_DOUBLE_EQ(smooth_l1(1.0), 0.5);
}

TEST(RegLoss, Examples) {
  const Assignment a = one_positive();
  Array pred = Array::Zero(14);
  EXPECT_EQ(reg_loss(Tensor::constant({2, 7}, pred), a, false).item(), 0.0);
  pred[2] = 0.5;
  EXPECT_DOUBLE_EQ(reg_loss(Tensor::constant({2, 7}, pred), a, false).item(), 0.125);
  pred[7] = 3.0;  // negative anchor does not count
  EXPECT_DOUBLE_EQ(reg_loss(Tensor::constant({2, 7}, pred), a, true).item(), 0.125);
  pred[5] = 0.9;  // h_t
  EXPECT_DOUBLE_EQ(reg_loss(Tensor::constant({2, 7}, pred), a, true).item(), 0.125);
  EXPECT_THROW(reg_loss(Tensor::constant({3, 7}, 0.0), a, true), ShapeError);
}

TEST(RegLoss, NoPositivesIsZero) {
  Assignment a = one_positive();
  a.cls_target = {0, -1};
  a.num_positive = 0;
  EXPECT_EQ(reg_loss(Tensor::constant({2, 7}, 1.0), a, false).item(), 0.0);
  EXPECT_EQ(iou_loss(Tensor::constant({2}, 0.0), {1, 1}, a).item(), 0.0);
  EXPECT_EQ(dir_loss(Tensor::constant({2, 2}, 0.0), a).item(), 0.0);
}

TEST(DirLoss, Examples) {
  const Assignment a = one_positive();  // true bin 1
  Array z = Array::Zero(4);
  EXPECT_NEAR(dir_loss(Tensor::constant({2, 2}, z), a).item(), std::log(2.0), 1e-15);
  z[0] = 2;
  EXPECT_NEAR(dir_loss(Tensor::constant({2, 2}, z), a).item(), std::log(1 + std::exp(2.0)), 1e-14);
  EXPECT_NEAR(dir_loss(Tensor::constant({2, 2}, z), a).item(), 2.1269, 1e-4);
  z[0] = -30, z[1] = 30;
  EXPECT_NEAR(dir_loss(Tensor::constant({2, 2}, z), a).item(), 0.0, 1e-12);
}

TEST(IouLoss, Examples) {
  const Assignment a = one_positive();
  EXPECT_EQ(iou_loss(Tensor::constant({2}, Array::Constant(2, 0.7)), {0.7, 0.0}, a).item(), 0.0);
  EXPECT_DOUBLE_EQ(iou_loss(Tensor::constant({2}, 0.0), {1.0, 1.0}, a).item(), 0.5);
}

TEST(TotalLoss, LambdaArithmetic) {
  const LossConfig c;
  EXPECT_EQ(total_loss({}, c).report.total, 0.0);
  const Tensor one = Tensor::scalar(1.0);
  DomainTerms rs_only{Domain::Target, TermSet{}, {}, one};
  EXPECT_DOUBLE_EQ(total_loss({rs_only}, c).total.item(), 1.0);
  DomainTerms all{Domain::Source, {Term::Cls, Term::Reg, Term::Iou, Term::Dir},
                  {{Term::Cls, one}, {Term::Reg, one}, {Term::Iou, one}, {Term::Dir, one}}, one};
  const Objective obj = total_loss({all}, c);
  EXPECT_NEAR(obj.total.item(), 5.2, 1e-12);
  EXPECT_NEAR(obj.report.total, 5.2, 1e-12);
  EXPECT_EQ(obj.report.entries.size(), 5u);
}

TEST(TotalLoss, ReportCarriesDomainTags) {
  const LossConfig c;
  const Tensor one = Tensor::scalar(1.0), two = Tensor::scalar(2.0);
  DomainTerms s{Domain::Source, c.source_terms,
                {{Term::Cls, one}, {Term::RegFiltered, one}, {Term::Iou, one}, {Term::Dir, one}}, one};
  DomainTerms t{Domain::Target, c.target_terms,
                {{Term::RegFiltered, two}, {Term::Iou, two}, {Term::Dir, two}}, two};
  const LossReport r = total_loss({s, t}, c).report;
  EXPECT_TRUE(r.has("cls", Domain::Source));
  EXPECT_FALSE(r.has("cls", Domain::Target));
  EXPECT_TRUE(r.has("rs", Domain::Source));
  EXPECT_TRUE(r.has("rs", Domain::Target));
  EXPECT_EQ(r.value("reg_filtered", Domain::Target), 2.0);
  EXPECT_EQ(r.entries.size(), 9u);
}

TEST(TotalLoss, MissingRoutedTermThrows) {
  DomainTerms s{Domain::Source, {Term::Cls}, {}, {}};
  EXPECT_THROW(total_loss({s}, LossConfig{}), std::logic_error);
}

TEST(TermSet, ParseAndPrint) {
  const TermSet t = TermSet::parse({"cls", "reg_filtered", "iou"});
  EXPECT_EQ(t, (TermSet{Term::Cls, Term::RegFiltered, Term::Iou}));
  EXPECT_THROW(TermSet::parse({"size"}), ConfigError);
  LossConfig c;
  c.target_terms = {Term::Reg, Term::RegFiltered};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ScaleFilter, SizeChannelsGetExactlyZeroGradient) {
  Assignment a = one_positive();
  a.cls_target = {1, 1};
  a.matched_label = {0, 0};
  a.dir_bin = {0, 1};
  a.num_positive = 2;
  std::mt19937_64 rng(11);
  Tensor pred = oracle::random_leaf({2, 7}, rng, -2, 2);
  backward(reg_loss(pred, a, true));
  for (int anchor = 0; anchor < 2; ++anchor) {
    for (int k = 3; k <= 5; ++k) EXPECT_EQ(pred.grad()[anchor * 7 + k], 0.0);
    EXPECT_NE(pred.grad()[anchor * 7 + 0], 0.0);
  }
  const auto r = oracle::check_gradients([&] { return reg_loss(pred, a, false); }, {pred});
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}

}  // namespace
}  // namespace stal3d
