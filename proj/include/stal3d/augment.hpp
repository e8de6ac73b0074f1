#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "stal3d/scene.hpp"

namespace stal3d {

struct Interval {
  double lo = 1.0, hi = 1.0;
};

/// Per-axis scale ranges (length, width, height) for random object scaling.
struct ScaleRange {
  Interval l{0.8, 1.2}, w{0.8, 1.2}, h{0.8, 1.2};

  static ScaleRange identity() { return {{1, 1}, {1, 1}, {1, 1}}; }
  void validate() const;
};

/// Scale factors drawn for one box.
using ScaleFactors = Eigen::Vector3d;

/// Applies one set of per-box factors: points inside box b (nearest center on
/// overlap) are mapped to the box frame, scaled componentwise, and mapped back;
/// labels scale their extents. Points outside every box are untouched.
std::pair<PointCloud, std::vector<Box3D>> scale_objects(const PointCloud& points,
                                                        const std::vector<Box3D>& labels,
                                                        const std::vector<ScaleFactors>& factors);

/// Random object scaling with one uniform draw per box and axis, deterministic in `seed`.
std::pair<PointCloud, std::vector<Box3D>> ros_transform(const PointCloud& points,
                                                        const std::vector<Box3D>& labels,
                                                        const ScaleRange& range,
                                                        std::uint64_t seed);

/// Index of the box owning point p, or -1.
int owning_box(const Eigen::Vector3d& p, const std::vector<Box3D>& labels);

}  // namespace stal3d
