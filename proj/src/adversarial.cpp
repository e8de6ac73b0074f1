#include "stal3d/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace stal3d {

Suppression parse_suppression(const std::string& s) {
  if (s == "frs_topk") return Suppression::FrsTopK;
  if (s == "ca") return Suppression::ChannelAttention;
  if (s == "none") return Suppression::None;
  throw ConfigError("unknown suppression mode '" + s + "'");
}

const char* to_string(Suppression s) {
  switch (s) {
    case Suppression::FrsTopK: return "frs_topk";
    case Suppression::ChannelAttention: return "ca";
    case Suppression::None: return "none";
  }
  return "?";
}

void AdversarialConfig::validate() const {
  if (!(k > 0 && k <= 1)) throw ConfigError("suppression fraction k must lie in (0, 1]");
  if (!(beta >= 0)) throw ConfigError("channel-attention beta must be non-negative");
  if (!(grl_lambda >= 0)) throw ConfigError("GRL strength must be non-negative");
}

ag::Array frs(const ag::Array& cls_logits, ag::Index per_position) {
  const ag::Index n = cls_logits.size() / per_position;
  ag::Array s(n);
  for (ag::Index i = 0; i < n; ++i) {
    // sigmoid is monotone, so max of sigmoids is sigmoid of the max logit
    const double z = cls_logits.segment(i * per_position, per_position).maxCoeff();
    s[i] = 1.0 / (1.0 + std::exp(-z));
  }
  return s;
}

ag::Array region_partition(const ag::Array& scores, double k) {
  if (!(k > 0 && k <= 1)) throw ConfigError("region_partition: k must lie in (0, 1]");
  const ag::Index n = scores.size();
  const auto keep = static_cast<ag::Index>(std::ceil(k * static_cast<double>(n) - 1e-9));
  std::vector<ag::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](ag::Index a, ag::Index b) { return scores[a] > scores[b]; });
  ag::Array out = ag::Array::Zero(n);
  for (ag::Index i = 0; i < std::min(keep, n); ++i) {
    out[order[static_cast<std::size_t>(i)]] = scores[order[static_cast<std::size_t>(i)]];
  }
  return out;
}

ag::Array ca_weight(const ag::Array& features, ag::Index channels, double beta) {
  const ag::Index n = features.size() / channels;
  ag::Array w(n);
  for (ag::Index i = 0; i < n; ++i) {
    w[i] = 1.0 + beta * features.segment(i * channels, channels).abs().mean();
  }
  return w;
}

ag::Tensor adv_loss(const ag::Tensor& d_out, Domain domain) {
  const ag::Index n = d_out.size();
  ag::Array v(n), g(n);
  for (ag::Index i = 0; i < n; ++i) {
    const double raw = d_out.value()[i];
    const double p = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
    const bool clamped = p != raw;
    if (domain == Domain::Source) {
      v[i] = -std::log(p);
      g[i] = clamped ? 0.0 : -1.0 / p;
    } else {
      v[i] = -std::log(1.0 - p);
      g[i] = clamped ? 0.0 : 1.0 / (1.0 - p);
    }
  }
  return ag::make_op(domain == Domain::Source ? "adv_loss_source" : "adv_loss_target",
                     d_out.shape(), std::move(v), {d_out}, [g = std::move(g)](ag::Node& self) {
                       self.parents[0]->grad_buffer() += self.grad * g;
                     });
}

ag::Tensor adv_loss_logits(const ag::Tensor& logits, Domain domain) {
  const ag::Index n = logits.size();
  ag::Array v(n), g(n);
  for (ag::Index i = 0; i < n; ++i) {
    const double z = logits.value()[i];
    const double p = 1.0 / (1.0 + std::exp(-z));
    // log(1 + e^-|z|) + max(-z, 0) = -log sigmoid(z), capped like the clamped form.
    const double softplus_neg = std::log1p(std::exp(-std::abs(z))) + std::max(-z, 0.0);
    const double softplus_pos = softplus_neg + z;
    const double cap = -std::log(kProbClamp);
    if (domain == Domain::Source) {
      v[i] = std::min(softplus_neg, cap);
      g[i] = p - 1.0;
    } else {
      v[i] = std::min(softplus_pos, cap);
      g[i] = p;
    }
  }
  return ag::make_op(domain == Domain::Source ? "adv_loss_source" : "adv_loss_target",
                     logits.shape(), std::move(v), {logits}, [g = std::move(g)](ag::Node& self) {
                       self.parents[0]->grad_buffer() += self.grad * g;
                     });
}

ag::Tensor rs_loss(const ag::Array& weights, const ag::Tensor& adv_map, bool normalize) {
  if (weights.size() != adv_map.size()) {
    throw ShapeError("rs_loss: weights of size " + std::to_string(weights.size()) +
                     " vs loss map " + ag::to_string(adv_map.shape()));
  }
  const double support = static_cast<double>((weights != 0.0).count());
  const double norm = normalize ? std::max(1.0, support) : 1.0;
  ag::Array v(1);
  v[0] = (weights * adv_map.value()).sum() / norm;
  ag::Array w = weights / norm;
  return ag::make_op("rs_loss", {1}, std::move(v), {adv_map}, [w = std::move(w)](ag::Node& self) {
    self.parents[0]->grad_buffer() += w * self.grad[0];
  });
}

ag::Array suppression_weights(const ag::Tensor& cls_logits, const ag::Tensor& features,
                              const AdversarialConfig& config) {
  const ag::Index positions = cls_logits.dim(0) * cls_logits.dim(1);
  switch (config.mode) {
    case Suppression::FrsTopK:
      return region_partition(frs(cls_logits.value(), cls_logits.size() / positions), config.k);
    case Suppression::ChannelAttention:
      return ca_weight(features.value(), features.shape().back(), config.beta);
    case Suppression::None:
      return ag::Array::Ones(positions);
  }
  return {};
}

ParameterSet Discriminator::init_params(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  const ag::Index hidden = std::max<ag::Index>(1, channels_ / 2);
  auto normal = [&](ag::Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    ag::Array v(ag::numel(shape));
    for (ag::Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
    return ag::Tensor::parameter(std::move(shape), std::move(v));
  };
  ParameterSet p;
  p.push_back({"disc.fc0.weight", normal({1, 1, channels_, hidden},
                                         std::sqrt(2.0 / static_cast<double>(channels_)))});
  p.push_back({"disc.fc0.bias", ag::Tensor::parameter({hidden}, ag::Array::Zero(hidden))});
  p.push_back({"disc.fc1.weight", normal({1, 1, hidden, 1}, std::sqrt(1.0 / hidden))});
  p.push_back({"disc.fc1.bias", ag::Tensor::parameter({1}, ag::Array::Zero(1))});
  return p;
}

ag::Tensor Discriminator::logits(const ag::Tensor& features, const ParameterSet& params,
                                 double grl_lambda) const {
  if (params.size() != 4) throw ConfigError("discriminator: unexpected parameter count");
  ag::Tensor x = ag::grl(features, grl_lambda);
  x = ag::relu(ag::conv2d(x, params[0].tensor, params[1].tensor, 0));
  x = ag::conv2d(x, params[2].tensor, params[3].tensor, 0);
  return ag::reshape(x, {features.dim(0), features.dim(1)});
}

ag::Tensor Discriminator::forward(const ag::Tensor& features, const ParameterSet& params,
                                  double grl_lambda) const {
  return ag::sigmoid(logits(features, params, grl_lambda));
}

ag::Tensor adversarial_term(const DetectorOutputs& out, const Discriminator& disc,
                            const ParameterSet& disc_params, Domain domain,
                            const AdversarialConfig& config) {
  const ag::Array weights = suppression_weights(out.cls_logits, out.features, config);
  const ag::Tensor z = disc.logits(out.features, disc_params, config.grl_lambda);
  return rs_loss(weights, adv_loss_logits(z, domain), config.normalize);
}

}  // namespace stal3d
