#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "stal3d/adversarial.hpp"
#include "stal3d/augment.hpp"
#include "stal3d/detector.hpp"
#include "stal3d/evaluation.hpp"
#include "stal3d/losses.hpp"
#include "stal3d/optim.hpp"

namespace stal3d {

/// Everything one pretrain/adapt run needs. Missing JSON keys keep defaults.
struct RunConfig {
  std::filesystem::path source_dir, target_dir, out_dir;
  std::uint64_t seed = 0;
  unsigned threads = 0;  // 0 = STAL3D_THREADS or hardware concurrency

  DetectorConfig detector = DetectorConfig::standard();
  PredictOptions predict;
  LossConfig loss;
  AdversarialConfig adversarial;
  AdamConfig adam;
  EvalConfig eval;

  // Source pre-training
  ScaleRange ros;
  bool use_ros = true;
  int pretrain_epochs = 30;
  int batch_size = 4;        // gradient accumulation length

  // Adaptation
  bool ros_in_adapt = false;
  double phi = 0.2;
  double adapt_lr = 1.5e-3;  // one-cycle peak of every adaptation round
  int rounds = 3;
  int adapt_epochs = 2;
  double churn_stop = 0.01;  // early stop below this bank churn; <= 0 disables
  std::size_t buffer_capacity = 64;
  double match_iou = 0.1;
  bool eval_each_round = true;

  void validate() const;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

/// Component ablations: no adaptation; self-training only (no adversarial
/// term, no scale filtering); plus background-suppressed adversarial learning;
/// plus scale filtering.
enum class Variant { SourceOnly, SelfTraining, SelfTrainingBsal, Full };
const char* to_string(Variant v);
Variant parse_variant(const std::string& s);
inline constexpr Variant kAllVariants[] = {Variant::SourceOnly, Variant::SelfTraining,
                                           Variant::SelfTrainingBsal, Variant::Full};

/// Routing and adversarial settings of a variant applied on top of `base`.
RunConfig apply_variant(RunConfig base, Variant v);

void to_json(nlohmann::json& j, const DetectorConfig& c);
void from_json(const nlohmann::json& j, DetectorConfig& c);

}  // namespace stal3d
