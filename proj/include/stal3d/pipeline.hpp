#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "stal3d/config.hpp"
#include "stal3d/pseudolabel.hpp"
#include "stal3d/simworld.hpp"

namespace stal3d {

/// Wide CSV training log: phase, round, epoch, step, lr, one column per
/// (term, domain), total. Terms not routed in a step are left empty.
class TrainLog {
 public:
  explicit TrainLog(std::ostream* out);
  void write(const std::string& phase, int round, int epoch, long step, double lr,
             const LossReport& mean_report);

 private:
  std::ostream* out_;
};

/// Loss terms of one sample on the active tape.
DomainTerms sample_terms(const Detector& detector, const ParameterSet& params,
                         const BEVGrid& grid, const std::vector<Box3D>& labels, Domain domain,
                         TermSet routing, const LossConfig& loss,
                         const Discriminator* disc = nullptr, const ParameterSet* disc_params = nullptr,
                         const AdversarialConfig* adversarial = nullptr);

struct PretrainResult {
  ParameterSet params;
  std::vector<double> epoch_loss;  // mean total loss per epoch
};

/// Supervised source training with random object scaling. Starts from
/// `init` when given, else from a seeded initialization.
PretrainResult pretrain(const Dataset& source, const RunConfig& config, std::ostream* log = nullptr,
                        const ParameterSet* init = nullptr);

struct RoundSummary {
  int round = 0;
  IntegrateStats stats;
  double empty_fraction = 0;  // target scenes without pseudo labels
  double mean_loss = 0;
  std::optional<EvalReport> eval;
};

struct AdaptResult {
  ParameterSet params;
  ParameterSet disc_params;
  MemoryBank bank;
  std::vector<RoundSummary> rounds;
  std::vector<std::string> warnings;
};

/// Alternating self-training and adversarial learning. Each round generates
/// pseudo labels on the target train split, folds them into the memory bank,
/// and trains on 1:1 interleaved source/target scenes. The target domain is
/// read only through points; its ground truth is touched only for per-round
/// evaluation on the val split.
AdaptResult adapt(const Dataset& source, const Dataset& target, const ParameterSet& theta_ros,
                  const RunConfig& config, std::ostream* log = nullptr);

/// AP report on `indices` of `data`, ground truth read through the eval handle.
EvalReport evaluate(const Detector& detector, const ParameterSet& params, const Dataset& data,
                    const std::vector<std::size_t>& indices, const EvalConfig& eval,
                    const PredictOptions& predict, unsigned threads = 0);

/// Raw detections for `indices` (parallel over scenes).
std::vector<std::vector<Box3D>> predict_all(const Detector& detector, const ParameterSet& params,
                                            const Dataset& data, const std::vector<std::size_t>& indices,
                                            const PredictOptions& predict, unsigned threads = 0);

}  // namespace stal3d
