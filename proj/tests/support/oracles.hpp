#pragma once

// Reference computations used by the unit and acceptance tests. None of them
// call into the geometry or autograd code they check.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "stal3d/autograd.hpp"
#include "stal3d/geometry.hpp"
#include "stal3d/optim.hpp"

namespace stal3d::oracle {

/// Point-in-box test written directly from the box parameters.
bool inside(const Box3D& b, double x, double y, double z);

/// Monte-Carlo 3D IoU: `samples` uniform points in each box volume estimate the
/// intersection volume from both sides; the two estimates are averaged.
double mc_iou_3d(const Box3D& a, const Box3D& b, std::size_t samples, std::uint64_t seed);

/// Exact IoU of two axis-aligned footprints (yaw 0 or pi).
double rect_iou_bev(const Box3D& a, const Box3D& b);

/// Random valid box within a [-span, span]^2 window.
Box3D random_box(std::mt19937_64& rng, double span = 3.0, double min_dim = 0.3, double max_dim = 4.0);

struct GradCheck {
  double max_rel_error = 0;
  std::string worst;  // "<tensor>[<index>]"
  long checked = 0;
};

/// Central finite differences of `loss` against backward. Up to `per_tensor`
/// entries of every tensor are probed (all when <= 0). The error measure is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
GradCheck check_gradients(const std::function<ag::Tensor()>& loss, ParameterSet& params,
                          double step = 1e-4, int per_tensor = 0, double floor = 1e-6,
                          std::uint64_t seed = 1);

/// Same, over a plain list of leaf tensors.
GradCheck check_gradients(const std::function<ag::Tensor()>& loss, std::vector<ag::Tensor> leaves,
                          double step = 1e-4, int per_tensor = 0, double floor = 1e-6,
                          std::uint64_t seed = 1);

ag::Tensor random_leaf(ag::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0);

}  // namespace stal3d::oracle
