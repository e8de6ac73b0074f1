#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "stal3d/geometry.hpp"

namespace stal3d {

/// 3 x N, one point per column (x, y, z in meters).
using PointCloud = Eigen::Matrix3Xd;

struct Scene {
  std::string id;
  PointCloud points;
  std::vector<Box3D> labels;
};

}  // namespace stal3d
