#pragma once

#include <cstdint>
#include <string>

#include "stal3d/autograd.hpp"
#include "stal3d/losses.hpp"
#include "stal3d/optim.hpp"

namespace stal3d {

enum class Suppression { FrsTopK, ChannelAttention, None };
Suppression parse_suppression(const std::string& s);
const char* to_string(Suppression s);

struct AdversarialConfig {
  bool enabled = true;
  Suppression mode = Suppression::FrsTopK;
  double k = 0.2;          // retained fraction for FrsTopK
  double beta = 2.0;       // ChannelAttention strength
  double grl_lambda = 1.0;
  bool normalize = true;   // divide the weighted sum by the retained-position count

  void validate() const;
};

/// Feature richness: per position, the max sigmoid over its anchor logits.
/// `cls_logits` is laid out [positions, per_position].
ag::Array frs(const ag::Array& cls_logits, ag::Index per_position);

/// Keeps S on the ceil(k * n) highest positions and zeroes the rest. Ties at
/// the cutoff go to the lower row-major index.
ag::Array region_partition(const ag::Array& scores, double k);

/// Channel-attention weights 1 + beta * mean_c |F|, F laid out [positions, channels].
ag::Array ca_weight(const ag::Array& features, ag::Index channels, double beta);

/// Per-position binary cross-entropy of source-probabilities: -log D for the
/// source domain, -log(1 - D) for the target. D is clamped to [1e-7, 1 - 1e-7].
ag::Tensor adv_loss(const ag::Tensor& d_out, Domain domain);

/// adv_loss of sigmoid(logits) without the dead gradient of the clamp: the
/// value is capped at -log(1e-7), the gradient is the exact logistic one.
ag::Tensor adv_loss_logits(const ag::Tensor& logits, Domain domain);

/// sum(weights * adv) / (normalize ? |support(weights)| : 1); 0 when weights are all zero.
ag::Tensor rs_loss(const ag::Array& weights, const ag::Tensor& adv_map, bool normalize = true);

/// Per-position weights for the configured suppression mode.
ag::Array suppression_weights(const ag::Tensor& cls_logits, const ag::Tensor& features,
                              const AdversarialConfig& config);

/// Per-position domain classifier: 1x1 conv (d -> d/2), relu, 1x1 conv (d/2 -> 1), sigmoid.
class Discriminator {
 public:
  explicit Discriminator(ag::Index channels) : channels_(channels) {}

  ParameterSet init_params(std::uint64_t seed) const;

  /// Pre-sigmoid scores [H, W].
  ag::Tensor logits(const ag::Tensor& features, const ParameterSet& params, double grl_lambda) const;

  /// Source-probability map [H, W]. `features` [H, W, d] pass through a
  /// gradient reversal layer with strength `grl_lambda` first.
  ag::Tensor forward(const ag::Tensor& features, const ParameterSet& params,
                     double grl_lambda) const;

 private:
  ag::Index channels_;
};

/// Region-suppressed adversarial loss of one sample.
ag::Tensor adversarial_term(const DetectorOutputs& out, const Discriminator& disc,
                            const ParameterSet& disc_params, Domain domain,
                            const AdversarialConfig& config);

}  // namespace stal3d
