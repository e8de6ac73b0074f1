#include "stal3d/optim.hpp"

#include <cmath>
#include <numbers>

namespace stal3d {

void zero_grads(ParameterSet& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

ParameterSet concat_params(const ParameterSet& a, const ParameterSet& b) {
  ParameterSet out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

double OneCycle::lr_at(long step) const {
  auto cosine = [](double from, double to, double frac) {
    return to + (from - to) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
  };
  const double total = static_cast<double>(std::max(total_steps, 1L));
  const double warm = std::max(1.0, std::floor(pct_start * total));
  const double s = static_cast<double>(step);
  const double low = max_lr / div_factor;
  if (s < warm) return cosine(low, max_lr, s / warm);
  const double rest = std::max(1.0, total - warm);
  return cosine(max_lr, low / final_div_factor, std::min(1.0, (s - warm) / rest));
}

void Adam::step(ParameterSet& params, double lr) {
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (const auto& p : params) {
      m_.push_back(ag::Array::Zero(p.tensor.size()));
      v_.push_back(ag::Array::Zero(p.tensor.size()));
    }
  }
  double scale = 1.0;
  if (config_.grad_clip > 0) {
    double sq = 0;
    for (const auto& p : params) sq += p.tensor.grad().square().sum();
    const double norm = std::sqrt(sq);
    if (norm > config_.grad_clip) scale = config_.grad_clip / norm;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ag::Array g = params[i].tensor.grad() * scale;
    ag::Array& w = params[i].tensor.mutable_value();
    if (config_.weight_decay > 0) w -= lr * config_.weight_decay * w;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.square();
    w -= lr * (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + config_.eps);
  }
}

void Adam::restore(long steps, std::vector<ag::Array> m, std::vector<ag::Array> v) {
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace stal3d
