#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stal3d/autograd.hpp"
#include "stal3d/geometry.hpp"
#include "stal3d/optim.hpp"
#include "stal3d/scene.hpp"

namespace stal3d {

/// Canonical per-class box prior and anchor matching thresholds.
struct ClassPrior {
  std::string name;
  double l = 1, w = 1, h = 1;
  double z = 0;  // anchor center height
  double pos_iou = 0.6;
  double neg_iou = 0.45;
};

struct DetectorConfig {
  int grid_h = 16;        // cells along x
  int grid_w = 16;        // cells along y
  double cell_size = 1.0;  // meters; the grid is centered on the sensor
  int channels = 32;
  int conv_layers = 3;
  int num_rotations = 2;  // anchor orientations per cell and class: r * pi / num_rotations
  std::vector<ClassPrior> classes;

  int num_classes() const { return static_cast<int>(classes.size()); }
  int anchors_per_cell() const { return num_classes() * num_rotations; }
  double x_half() const { return grid_h * cell_size / 2; }
  double y_half() const { return grid_w * cell_size / 2; }

  /// Car / pedestrian / cyclist priors on a 16x16 grid.
  static DetectorConfig standard();
};

// ---------------------------------------------------------------------------

inline constexpr int kCellFeatures = 7;

/// Per-cell summary of the points falling in each BEV cell. Row index follows x,
/// column index follows y. Feature channels: log(1+count), max z, mean z,
/// mean x/y offset from the cell center and x/y spread (both in cell units).
struct BEVGrid {
  int H = 0, W = 0;
  double cell_size = 0;
  ag::Array features;         // H*W*kCellFeatures, row-major
  Eigen::ArrayXi counts;      // H*W
  long dropped_points = 0;    // outside the metric range

  int count(int h, int w) const { return counts[h * W + w]; }
  double feature(int h, int w, int f) const { return features[(h * W + w) * kCellFeatures + f]; }
};

/// Cell index along one axis. Points exactly on an interior boundary go to the
/// lower-index cell; -1 when outside [-half, half].
int cell_index(double coord, double half, double cell_size, int cells);

BEVGrid pillarize(const PointCloud& points, const DetectorConfig& config);

// ---------------------------------------------------------------------------

/// Dense anchors laid out as ((h * W + w) * C + c) * R + r.
struct AnchorSet {
  int H = 0, W = 0, C = 0, R = 0;
  std::vector<Box3D> boxes;

  std::size_t size() const { return boxes.size(); }
  int index(int h, int w, int c, int r) const { return ((h * W + w) * C + c) * R + r; }
  int class_of(std::size_t a) const { return static_cast<int>(a / R) % C; }
};

AnchorSet make_anchors(const DetectorConfig& config);

struct Assignment {
  std::vector<std::int8_t> cls_target;  // 1 positive, 0 negative, -1 ignored
  std::vector<int> matched_label;       // -1 unless positive
  std::vector<RegressionTarget<double>> reg;
  std::vector<int> dir_bin;
  int num_positive = 0;
};

Assignment assign_targets(const std::vector<Box3D>& labels, const AnchorSet& anchors,
                          const DetectorConfig& config);

// ---------------------------------------------------------------------------

struct DetectorOutputs {
  ag::Tensor cls_logits;  // [H, W, A]
  ag::Tensor reg;         // [H, W, A, 7]
  ag::Tensor dir_logits;  // [H, W, A, 2]
  ag::Tensor iou_pred;    // [H, W, A], in [0,1]
  ag::Tensor features;    // [H, W, d]
};

/// Plain-array view of the head outputs, used by decoding.
struct RawOutputs {
  ag::Array cls_logits, reg, dir_logits, iou_pred;
  static RawOutputs from(const DetectorOutputs& out);
};

struct PredictOptions {
  double score_thresh = 0.1;
  double nms_iou = 0.1;
  int pre_nms_top = 256;
  int max_detections = 64;
};

class Detector {
 public:
  explicit Detector(DetectorConfig config);

  const DetectorConfig& config() const { return config_; }
  const AnchorSet& anchors() const { return anchors_; }

  /// Parameter layout: conv{i}.weight/bias for the backbone, then the cls, reg,
  /// dir and iou 1x1 heads. Deterministic in `seed`.
  ParameterSet init_params(std::uint64_t seed) const;
  /// All-zero parameters of the same layout.
  ParameterSet zero_params() const;

  DetectorOutputs forward(const BEVGrid& grid, const ParameterSet& params) const;

  /// Scored boxes, descending score, after per-class greedy BEV NMS.
  std::vector<Box3D> decode(const RawOutputs& raw, const PredictOptions& options) const;

  std::vector<Box3D> predict(const PointCloud& points, const ParameterSet& params,
                             const PredictOptions& options) const;

  /// BEV IoU between each positive anchor's decoded prediction and its label.
  std::vector<double> iou_targets(const RawOutputs& raw, const Assignment& assignment,
                                  const std::vector<Box3D>& labels) const;

  Box3D decode_anchor(const RawOutputs& raw, std::size_t anchor) const;

 private:
  DetectorConfig config_;
  AnchorSet anchors_;
};

/// Greedy NMS over BEV IoU; `boxes` must be sorted by descending score.
std::vector<Box3D> nms_bev(const std::vector<Box3D>& boxes, double iou_thresh);

}  // namespace stal3d
