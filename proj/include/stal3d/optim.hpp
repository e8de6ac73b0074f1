#pragma once

#include <string>
#include <vector>

#include "stal3d/autograd.hpp"

namespace stal3d {

struct NamedParameter {
  std::string name;
  ag::Tensor tensor;
};

/// Ordered parameter list; order defines checkpoint layout.
using ParameterSet = std::vector<NamedParameter>;

void zero_grads(ParameterSet& params);
ParameterSet concat_params(const ParameterSet& a, const ParameterSet& b);

struct AdamConfig {
  double lr = 1.5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double grad_clip = 10.0;  // global L2 norm; <= 0 disables
};

/// One-cycle learning-rate policy: cosine warm-up from lr/div_factor to lr over
/// the first pct_start of the steps, then cosine decay to lr/(div*final_div).
struct OneCycle {
  double max_lr = 1.5e-3;
  long total_steps = 1;
  double pct_start = 0.4;
  double div_factor = 10.0;
  double final_div_factor = 100.0;

  double lr_at(long step) const;
};

/// Adam with bias correction. Moments are keyed by parameter position.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(ParameterSet& params, double lr);
  void step(ParameterSet& params) { step(params, config_.lr); }

  long steps() const { return t_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<ag::Array>& first_moments() const { return m_; }
  const std::vector<ag::Array>& second_moments() const { return v_; }
  void restore(long steps, std::vector<ag::Array> m, std::vector<ag::Array> v);

 private:
  AdamConfig config_;
  long t_ = 0;
  std::vector<ag::Array> m_, v_;
};

}  // namespace stal3d
