#include "stal3d/losses.hpp"

#include <algorithm>
#include <cmath>

namespace stal3d {

const char* to_string(Domain d) { return d == Domain::Source ? "S" : "T"; }

const char* to_string(Term t) {
  switch (t) {
    case Term::Cls: return "cls";
    case Term::Reg: return "reg";
    case Term::RegFiltered: return "reg_filtered";
    case Term::Iou: return "iou";
    case Term::Dir: return "dir";
  }
  return "?";
}

std::string TermSet::to_string() const {
  std::string s;
  for (Term t : kAllTerms) {
    if (!contains(t)) continue;
    if (!s.empty()) s += '+';
    s += stal3d::to_string(t);
  }
  return s;
}

TermSet TermSet::parse(const std::vector<std::string>& names) {
  TermSet set;
  for (const std::string& n : names) {
    bool found = false;
    for (Term t : kAllTerms) {
      if (n == stal3d::to_string(t)) {
        set = set.with(t);
        found = true;
      }
    }
    if (!found) throw ConfigError("unknown loss term '" + n + "'");
  }
  return set;
}

double LossConfig::weight(Term t) const {
  switch (t) {
    case Term::Cls: return lambda_cls;
    case Term::Reg:
    case Term::RegFiltered: return lambda_reg;
    case Term::Iou: return lambda_iou;
    case Term::Dir: return lambda_dir;
  }
  return 0;
}

void LossConfig::validate() const {
  for (double l : {lambda_cls, lambda_reg, lambda_iou, lambda_dir, lambda_rs}) {
    if (!(l >= 0)) throw ConfigError("loss weights must be non-negative");
  }
  if (!(alpha >= 0 && alpha <= 1) || !(gamma >= 0)) throw ConfigError("invalid focal parameters");
  if (!source_terms.valid() || !target_terms.valid()) {
    throw ConfigError("reg and reg_filtered cannot both be routed to one domain");
  }
}

// ---------------------------------------------------------------------------

double focal_loss(double p, int y, double alpha, double gamma) {
  p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  if (y == 1) return -alpha * std::pow(1.0 - p, gamma) * std::log(p);
  return -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * a * a : a - 0.5;
}

namespace {

double smooth_l1_grad(double x) {
  if (x >= 1.0) return 1.0;
  if (x <= -1.0) return -1.0;
  return x;
}

double positive_norm(const Assignment& a) { return std::max(1, a.num_positive); }

}  // namespace

ag::Tensor focal_loss(const ag::Tensor& logits, const std::vector<std::int8_t>& targets,
                      double alpha, double gamma) {
  const ag::Index n = logits.size();
  if (static_cast<std::size_t>(n) != targets.size()) {
    throw ShapeError("focal_loss: " + std::to_string(n) + " logits vs " +
                     std::to_string(targets.size()) + " targets");
  }
  double npos = 0;
  for (auto t : targets) npos += t == 1 ? 1.0 : 0.0;
  const double norm = std::max(1.0, npos);

  ag::Array dlogit = ag::Array::Zero(n);
  double total = 0;
  for (ag::Index i = 0; i < n; ++i) {
    const int y = targets[static_cast<std::size_t>(i)];
    if (y < 0) continue;
    const double raw = 1.0 / (1.0 + std::exp(-logits.value()[i]));
    const double p = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
    const bool clamped = p != raw;
    double dldp;
    if (y == 1) {
      const double q = 1.0 - p;
      total += -alpha * std::pow(q, gamma) * std::log(p);
      dldp = -alpha * (-gamma * std::pow(q, gamma - 1.0) * std::log(p) + std::pow(q, gamma) / p);
      if (gamma == 0) dldp = -alpha / p;
    } else {
      total += -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
      dldp = -(1.0 - alpha) *
             (gamma * std::pow(p, gamma - 1.0) * std::log(1.0 - p) - std::pow(p, gamma) / (1.0 - p));
      if (gamma == 0) dldp = (1.0 - alpha) / (1.0 - p);
    }
    dlogit[i] = clamped ? 0.0 : dldp * p * (1.0 - p) / norm;
  }
  ag::Array v(1);
  v[0] = total / norm;
  return ag::make_op("focal_loss", {1}, std::move(v), {logits},
                     [dlogit = std::move(dlogit)](ag::Node& self) {
                       self.parents[0]->grad_buffer() += dlogit * self.grad[0];
                     });
}

ag::Tensor reg_loss(const ag::Tensor& pred, const Assignment& assignment, bool filtered) {
  const std::size_t n = assignment.cls_target.size();
  if (static_cast<std::size_t>(pred.size()) != n * 7) {
    throw ShapeError("reg_loss: prediction " + ag::to_string(pred.shape()) + " vs " +
                     std::to_string(n) + " anchors");
  }
  const double norm = positive_norm(assignment);
  ag::Array d = ag::Array::Zero(pred.size());
  double total = 0;
  for (std::size_t a = 0; a < n; ++a) {
    if (assignment.cls_target[a] != 1) continue;
    const auto t = assignment.reg[a].as_vector();
    for (int k = 0; k < 7; ++k) {
      if (filtered && k >= 3 && k <= 5) continue;
      const ag::Index idx = static_cast<ag::Index>(a) * 7 + k;
      const double diff = pred.value()[idx] - t[k];
      total += smooth_l1(diff);
      d[idx] = smooth_l1_grad(diff) / norm;
    }
  }
  ag::Array v(1);
  v[0] = total / norm;
  return ag::make_op(filtered ? "reg_loss_filtered" : "reg_loss", {1}, std::move(v), {pred},
                     [d = std::move(d)](ag::Node& self) {
                       self.parents[0]->grad_buffer() += d * self.grad[0];
                     });
}

ag::Tensor dir_loss(const ag::Tensor& dir_logits, const Assignment& assignment) {
  const std::size_t n = assignment.cls_target.size();
  constexpr int kBins = kNumDirBins;
  if (static_cast<std::size_t>(dir_logits.size()) != n * kBins) {
    throw ShapeError("dir_loss: logits " + ag::to_string(dir_logits.shape()) + " vs " +
                     std::to_string(n) + " anchors");
  }
  const double norm = positive_norm(assignment);
  ag::Array d = ag::Array::Zero(dir_logits.size());
  double total = 0;
  for (std::size_t a = 0; a < n; ++a) {
    if (assignment.cls_target[a] != 1) continue;
    const ag::Index base = static_cast<ag::Index>(a) * kBins;
    const auto z = dir_logits.value().segment(base, kBins);
    const double m = z.maxCoeff();
    const ag::Array e = (z - m).exp();
    const double lse = m + std::log(e.sum());
    const int y = assignment.dir_bin[a];
    total += lse - z[y];
    for (int k = 0; k < kBins; ++k) d[base + k] = (e[k] / e.sum() - (k == y ? 1.0 : 0.0)) / norm;
  }
  ag::Array v(1);
  v[0] = total / norm;
  return ag::make_op("dir_loss", {1}, std::move(v), {dir_logits},
                     [d = std::move(d)](ag::Node& self) {
                       self.parents[0]->grad_buffer() += d * self.grad[0];
                     });
}

ag::Tensor iou_loss(const ag::Tensor& iou_pred, const std::vector<double>& iou_target,
                    const Assignment& assignment) {
  const std::size_t n = assignment.cls_target.size();
  if (static_cast<std::size_t>(iou_pred.size()) != n || iou_target.size() != n) {
    throw ShapeError("iou_loss: prediction " + ag::to_string(iou_pred.shape()) + " vs " +
                     std::to_string(n) + " anchors");
  }
  const double norm = positive_norm(assignment);
  ag::Array d = ag::Array::Zero(iou_pred.size());
  double total = 0;
  for (std::size_t a = 0; a < n; ++a) {
    if (assignment.cls_target[a] != 1) continue;
    const ag::Index i = static_cast<ag::Index>(a);
    const double diff = iou_pred.value()[i] - iou_target[a];
    total += smooth_l1(diff);
    d[i] = smooth_l1_grad(diff) / norm;
  }
  ag::Array v(1);
  v[0] = total / norm;
  return ag::make_op("iou_loss", {1}, std::move(v), {iou_pred},
                     [d = std::move(d)](ag::Node& self) {
                       self.parents[0]->grad_buffer() += d * self.grad[0];
                     });
}

std::map<Term, ag::Tensor> detection_terms(const DetectorOutputs& out, const Assignment& assignment,
                                           const std::vector<double>& iou_target, TermSet terms,
                                           const LossConfig& config) {
  std::map<Term, ag::Tensor> m;
  if (terms.contains(Term::Cls)) {
    m[Term::Cls] = focal_loss(out.cls_logits, assignment.cls_target, config.alpha, config.gamma);
  }
  if (terms.contains(Term::Reg)) m[Term::Reg] = reg_loss(out.reg, assignment, false);
  if (terms.contains(Term::RegFiltered)) {
    m[Term::RegFiltered] = reg_loss(out.reg, assignment, true);
  }
  if (terms.contains(Term::Iou)) m[Term::Iou] = iou_loss(out.iou_pred, iou_target, assignment);
  if (terms.contains(Term::Dir)) m[Term::Dir] = dir_loss(out.dir_logits, assignment);
  return m;
}

// ---------------------------------------------------------------------------

double LossReport::value(const std::string& term, Domain d) const {
  for (const auto& e : entries) {
    if (e.term == term && e.domain == d) return e.value;
  }
  return 0.0;
}

bool LossReport::has(const std::string& term, Domain d) const {
  return std::any_of(entries.begin(), entries.end(),
                     [&](const LossEntry& e) { return e.term == term && e.domain == d; });
}

Objective total_loss(const std::vector<DomainTerms>& domains, const LossConfig& config) {
  Objective obj;
  std::vector<ag::Tensor> weighted;
  for (const DomainTerms& dt : domains) {
    for (Term t : kAllTerms) {
      if (!dt.routing.contains(t)) continue;
      auto it = dt.detection.find(t);
      if (it == dt.detection.end()) {
        throw std::logic_error(std::string("total_loss: routed term ") + to_string(t) +
                               " was not computed");
      }
      const double w = config.weight(t);
      obj.report.entries.push_back({to_string(t), dt.domain, w, it->second.item()});
      weighted.push_back(ag::scale(it->second, w));
    }
    if (dt.rs) {
      obj.report.entries.push_back({"rs", dt.domain, config.lambda_rs, dt.rs.item()});
      weighted.push_back(ag::scale(dt.rs, config.lambda_rs));
    }
  }
  if (weighted.empty()) {
    obj.total = ag::Tensor::scalar(0.0);
  } else {
    obj.total = weighted.front();
    for (std::size_t i = 1; i < weighted.size(); ++i) obj.total = ag::add(obj.total, weighted[i]);
  }
  double total = 0;
  for (const auto& e : obj.report.entries) total += e.weight * e.value;
  obj.report.total = total;
  return obj;
}

}  // namespace stal3d
