#include "stal3d/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "stal3d/errors.hpp"

namespace stal3d {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

nlohmann::json nullable(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

double from_nullable(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

double nan_mean(const std::vector<double>& xs) {
  double sum = 0;
  int n = 0;
  for (double x : xs) {
    if (std::isnan(x)) continue;
    sum += x;
    ++n;
  }
  return n == 0 ? kNaN : sum / n;
}

}  // namespace

void EvalConfig::validate() const {
  if (class_names.size() != iou_thresholds.size()) {
    throw ConfigError("eval: one IoU threshold per class required");
  }
  for (double t : iou_thresholds) {
    if (!(t > 0 && t <= 1)) throw ConfigError("eval: IoU thresholds must lie in (0, 1]");
  }
}

double average_precision_r40(const std::vector<bool>& tp_ranked, int num_gt, PRCurve* curve,
                             const std::vector<double>* scores) {
  if (num_gt <= 0) return kNaN;
  const std::size_t n = tp_ranked.size();
  std::vector<double> precision(n), recall(n);
  int tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += tp_ranked[i] ? 1 : 0;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / num_gt;
  }
  if (curve) {
    curve->precision = precision;
    curve->recall = recall;
    curve->score = scores ? *scores : std::vector<double>(n, kNaN);
  }
  std::vector<double> envelope(precision);
  for (std::size_t i = n; i-- > 1;) envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);

  double sum = 0;
  std::size_t j = 0;
  for (int k = 1; k <= kRecallPositions; ++k) {
    const double r = static_cast<double>(k) / kRecallPositions;
    while (j < n && recall[j] < r - 1e-12) ++j;
    if (j == n) break;
    sum += envelope[j];
  }
  return 100.0 * sum / kRecallPositions;
}

std::vector<bool> match_detections(const std::vector<std::vector<Box3D>>& detections,
                                   const std::vector<std::vector<Box3D>>& ground_truth, int class_id,
                                   double iou_thresh, IouKind kind, std::vector<double>* ranked_scores) {
  if (detections.size() != ground_truth.size()) {
    throw std::invalid_argument("match_detections: scene count mismatch");
  }
  struct Ref {
    double score;
    std::size_t scene, index;
  };
  std::vector<Ref> refs;
  for (std::size_t s = 0; s < detections.size(); ++s) {
    for (std::size_t i = 0; i < detections[s].size(); ++i) {
      const Box3D& d = detections[s][i];
      if (d.class_id == class_id) refs.push_back({d.score.value_or(0.0), s, i});
    }
  }
  std::stable_sort(refs.begin(), refs.end(), [](const Ref& a, const Ref& b) { return a.score > b.score; });

  std::vector<std::vector<bool>> used(ground_truth.size());
  for (std::size_t s = 0; s < ground_truth.size(); ++s) used[s].assign(ground_truth[s].size(), false);

  std::vector<bool> tp;
  tp.reserve(refs.size());
  if (ranked_scores) ranked_scores->clear();
  for (const Ref& r : refs) {
    const Box3D& d = detections[r.scene][r.index];
    const auto& gts = ground_truth[r.scene];
    double best = -1;
    int best_j = -1;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (gts[j].class_id != class_id || used[r.scene][j]) continue;
      const double iou = kind == IouKind::Bev ? iou_bev(d, gts[j]) : iou_3d(d, gts[j]);
      if (iou >= iou_thresh && iou > best) {
        best = iou;
        best_j = static_cast<int>(j);
      }
    }
    if (best_j >= 0) used[r.scene][static_cast<std::size_t>(best_j)] = true;
    tp.push_back(best_j >= 0);
    if (ranked_scores) ranked_scores->push_back(r.score);
  }
  return tp;
}

EvalReport evaluate_detections(const std::vector<std::vector<Box3D>>& detections,
                               const std::vector<std::vector<Box3D>>& ground_truth,
                               const EvalConfig& config) {
  config.validate();
  EvalReport report;
  std::vector<double> bev, d3;
  for (std::size_t c = 0; c < config.class_names.size(); ++c) {
    const int cid = static_cast<int>(c);
    ClassResult cr;
    cr.name = config.class_names[c];
    for (const auto& gts : ground_truth) {
      cr.num_gt += static_cast<int>(std::count_if(gts.begin(), gts.end(),
                                                  [&](const Box3D& b) { return b.class_id == cid; }));
    }
    std::vector<double> scores;
    const auto tp_bev = match_detections(detections, ground_truth, cid, config.iou_thresholds[c],
                                         IouKind::Bev, &scores);
    cr.num_det = static_cast<int>(tp_bev.size());
    cr.ap_bev = average_precision_r40(tp_bev, cr.num_gt, &cr.pr_bev, &scores);
    const auto tp_3d = match_detections(detections, ground_truth, cid, config.iou_thresholds[c],
                                        IouKind::ThreeD, &scores);
    cr.ap_3d = average_precision_r40(tp_3d, cr.num_gt, &cr.pr_3d, &scores);
    bev.push_back(cr.ap_bev);
    d3.push_back(cr.ap_3d);
    report.classes.push_back(std::move(cr));
  }
  report.map_bev = nan_mean(bev);
  report.map_3d = nan_mean(d3);
  return report;
}

static nlohmann::json curve_json(const PRCurve& c) {
  return {{"score", c.score}, {"precision", c.precision}, {"recall", c.recall}};
}

static PRCurve curve_from_json(const nlohmann::json& j) {
  return {j.at("score").get<std::vector<double>>(), j.at("precision").get<std::vector<double>>(),
          j.at("recall").get<std::vector<double>>()};
}

nlohmann::json EvalReport::to_json(bool with_curves) const {
  nlohmann::json cls = nlohmann::json::array();
  for (const auto& c : classes) {
    nlohmann::json e = {{"name", c.name},
                        {"num_gt", c.num_gt},
                        {"num_det", c.num_det},
                        {"ap_bev", nullable(c.ap_bev)},
                        {"ap_3d", nullable(c.ap_3d)}};
    if (with_curves) e["pr"] = {{"bev", curve_json(c.pr_bev)}, {"3d", curve_json(c.pr_3d)}};
    cls.push_back(std::move(e));
  }
  return {{"classes", cls}, {"map_bev", nullable(map_bev)}, {"map_3d", nullable(map_3d)}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    for (const auto& c : j.at("classes")) {
      ClassResult cr;
      cr.name = c.at("name").get<std::string>();
      cr.num_gt = c.at("num_gt").get<int>();
      cr.num_det = c.value("num_det", 0);
      cr.ap_bev = from_nullable(c.at("ap_bev"));
      cr.ap_3d = from_nullable(c.at("ap_3d"));
      if (c.contains("pr")) {
        cr.pr_bev = curve_from_json(c.at("pr").at("bev"));
        cr.pr_3d = curve_from_json(c.at("pr").at("3d"));
      }
      r.classes.push_back(std::move(cr));
    }
    r.map_bev = from_nullable(j.at("map_bev"));
    r.map_3d = from_nullable(j.at("map_3d"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("eval report: ") + e.what());
  }
  return r;
}

std::optional<double> closed_gap(double model_ap, double source_only_ap, double oracle_ap) {
  const double denom = oracle_ap - source_only_ap;
  if (denom == 0.0) return std::nullopt;
  return (model_ap - source_only_ap) / denom * 100.0;
}

}  // namespace stal3d
