#include "stal3d/augment.hpp"

#include <limits>
#include <random>

#include "stal3d/errors.hpp"
#include "stal3d/rng.hpp"

namespace stal3d {

void ScaleRange::validate() const {
  for (const Interval& i : {l, w, h}) {
    if (!(i.lo > 0) || !(i.lo <= i.hi)) throw ConfigError("ScaleRange: need 0 < lo <= hi");
  }
}

int owning_box(const Eigen::Vector3d& p, const std::vector<Box3D>& labels) {
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (!labels[b].contains(p)) continue;
    const double d2 = (p - labels[b].center()).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = static_cast<int>(b);
    }
  }
  return best;
}

std::pair<PointCloud, std::vector<Box3D>> scale_objects(const PointCloud& points,
                                                        const std::vector<Box3D>& labels,
                                                        const std::vector<ScaleFactors>& factors) {
  if (factors.size() != labels.size()) throw std::invalid_argument("scale_objects: one factor per box");
  PointCloud out = points;
  std::vector<Box3D> boxes = labels;
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    const Eigen::Vector3d p = points.col(i);
    const int b = owning_box(p, labels);
    if (b < 0) continue;
    const ScaleFactors& r = factors[static_cast<std::size_t>(b)];
    if ((r.array() == 1.0).all()) continue;
    const Eigen::Vector3d local = labels[static_cast<std::size_t>(b)].to_local(p);
    out.col(i) = labels[static_cast<std::size_t>(b)].to_world(local.cwiseProduct(r));
  }
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    boxes[b].l *= factors[b].x();
    boxes[b].w *= factors[b].y();
    boxes[b].h *= factors[b].z();
  }
  return {std::move(out), std::move(boxes)};
}

std::pair<PointCloud, std::vector<Box3D>> ros_transform(const PointCloud& points,
                                                        const std::vector<Box3D>& labels,
                                                        const ScaleRange& range,
                                                        std::uint64_t seed) {
  range.validate();
  std::mt19937_64 rng(seed);
  auto draw = [&](const Interval& i) {
    if (i.lo == i.hi) return i.lo;
    return std::uniform_real_distribution<double>(i.lo, i.hi)(rng);
  };
  std::vector<ScaleFactors> factors;
  factors.reserve(labels.size());
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const double rl = draw(range.l);
    const double rw = draw(range.w);
    const double rh = draw(range.h);
    factors.emplace_back(rl, rw, rh);
  }
  return scale_objects(points, labels, factors);
}

}  // namespace stal3d
