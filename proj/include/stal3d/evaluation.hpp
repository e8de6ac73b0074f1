#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stal3d/geometry.hpp"

namespace stal3d {

inline constexpr int kRecallPositions = 40;

struct EvalConfig {
  std::vector<std::string> class_names{"car", "pedestrian", "cyclist"};
  std::vector<double> iou_thresholds{0.7, 0.5, 0.5};

  void validate() const;
};

/// Precision/recall after each ranked detection of one class.
struct PRCurve {
  std::vector<double> score, precision, recall;
};

struct ClassResult {
  std::string name;
  int num_gt = 0;
  int num_det = 0;
  double ap_bev = 0;  // NaN when the class has no ground truth
  double ap_3d = 0;
  PRCurve pr_bev, pr_3d;
};

struct EvalReport {
  std::vector<ClassResult> classes;
  double map_bev = 0;  // mean over classes with ground truth; NaN if none
  double map_3d = 0;

  /// NaN serializes as null. PR curves are included on request.
  nlohmann::json to_json(bool with_curves = false) const;
  static EvalReport from_json(const nlohmann::json& j);
};

/// R40 average precision (0..100) from ranked true-positive flags. Uses the
/// precision envelope (running max from the right) sampled at r = i/40.
double average_precision_r40(const std::vector<bool>& tp_ranked, int num_gt, PRCurve* curve = nullptr,
                             const std::vector<double>* scores = nullptr);

enum class IouKind { Bev, ThreeD };

/// Greedy matching by descending score (stable over scene, then detection
/// order); each ground-truth box matches at most once, to the unmatched box of
/// highest IoU at or above the class threshold.
std::vector<bool> match_detections(const std::vector<std::vector<Box3D>>& detections,
                                   const std::vector<std::vector<Box3D>>& ground_truth, int class_id,
                                   double iou_thresh, IouKind kind, std::vector<double>* ranked_scores);

EvalReport evaluate_detections(const std::vector<std::vector<Box3D>>& detections,
                               const std::vector<std::vector<Box3D>>& ground_truth,
                               const EvalConfig& config);

/// (model - source_only) / (oracle - source_only) * 100; empty when the
/// denominator is zero.
std::optional<double> closed_gap(double model_ap, double source_only_ap, double oracle_ap);

}  // namespace stal3d
