#include "stal3d/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

namespace stal3d {

DetectorConfig DetectorConfig::standard() {
  DetectorConfig c;
  c.classes = {
      {"car", 4.2, 1.8, 1.6, 0.8, 0.6, 0.45},
      {"pedestrian", 0.8, 0.6, 1.7, 0.85, 0.5, 0.35},
      {"cyclist", 1.8, 0.6, 1.7, 0.85, 0.5, 0.35},
  };
  return c;
}

// ---------------------------------------------------------------------------
// Pillarization

int cell_index(double coord, double half, double cell_size, int cells) {
  const double u = (coord + half) / cell_size;
  if (!(u >= 0.0) || u > static_cast<double>(cells)) return -1;
  const int idx = static_cast<int>(std::ceil(u)) - 1;
  return std::clamp(idx, 0, cells - 1);
}

BEVGrid pillarize(const PointCloud& points, const DetectorConfig& config) {
  BEVGrid g;
  g.H = config.grid_h;
  g.W = config.grid_w;
  g.cell_size = config.cell_size;
  const int cells = g.H * g.W;
  g.features = ag::Array::Zero(cells * kCellFeatures);
  g.counts = Eigen::ArrayXi::Zero(cells);

  Eigen::ArrayXd zmax = Eigen::ArrayXd::Constant(cells, -std::numeric_limits<double>::infinity());
  Eigen::ArrayXd zsum = Eigen::ArrayXd::Zero(cells), xsum = zsum, ysum = zsum;
  Eigen::ArrayXd xlo = Eigen::ArrayXd::Constant(cells, std::numeric_limits<double>::infinity());
  Eigen::ArrayXd ylo = xlo, xhi = -xlo, yhi = -xlo;

  const double xh = config.x_half(), yh = config.y_half(), cs = config.cell_size;
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    const double x = points(0, i), y = points(1, i), z = points(2, i);
    const int h = cell_index(x, xh, cs, g.H);
    const int w = cell_index(y, yh, cs, g.W);
    if (h < 0 || w < 0) {
      ++g.dropped_points;
      continue;
    }
    const int k = h * g.W + w;
    const double dx = (x + xh) / cs - (h + 0.5);
    const double dy = (y + yh) / cs - (w + 0.5);
    ++g.counts[k];
    zmax[k] = std::max(zmax[k], z);
    zsum[k] += z;
    xsum[k] += dx;
    ysum[k] += dy;
    xlo[k] = std::min(xlo[k], dx);
    xhi[k] = std::max(xhi[k], dx);
    ylo[k] = std::min(ylo[k], dy);
    yhi[k] = std::max(yhi[k], dy);
  }
  for (int k = 0; k < cells; ++k) {
    const int n = g.counts[k];
    if (n == 0) continue;
    double* f = g.features.data() + k * kCellFeatures;
    f[0] = std::log1p(static_cast<double>(n));
    f[1] = zmax[k];
    f[2] = zsum[k] / n;
    f[3] = xsum[k] / n;
    f[4] = ysum[k] / n;
    f[5] = xhi[k] - xlo[k];
    f[6] = yhi[k] - ylo[k];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Anchors and target assignment

AnchorSet make_anchors(const DetectorConfig& config) {
  AnchorSet set;
  set.H = config.grid_h;
  set.W = config.grid_w;
  set.C = config.num_classes();
  set.R = config.num_rotations;
  set.boxes.reserve(static_cast<std::size_t>(set.H * set.W * set.C * set.R));
  for (int h = 0; h < set.H; ++h) {
    const double cx = -config.x_half() + (h + 0.5) * config.cell_size;
    for (int w = 0; w < set.W; ++w) {
      const double cy = -config.y_half() + (w + 0.5) * config.cell_size;
      for (const ClassPrior& prior : config.classes) {
        const int c = static_cast<int>(&prior - config.classes.data());
        for (int r = 0; r < set.R; ++r) {
          const double yaw = r * std::numbers::pi / set.R;
          set.boxes.push_back(Box3D::make(cx, cy, prior.z, prior.l, prior.w, prior.h, yaw, c));
        }
      }
    }
  }
  return set;
}

namespace {

/// Representative of `yaw` modulo pi lying within pi/2 of `reference`.
double align_half_turn(double yaw, double reference) {
  const double diff = normalize_angle(yaw - reference);
  if (diff > std::numbers::pi / 2) return yaw - std::numbers::pi;
  if (diff <= -std::numbers::pi / 2) return yaw + std::numbers::pi;
  return yaw;
}

}  // namespace

Assignment assign_targets(const std::vector<Box3D>& labels, const AnchorSet& anchors,
                          const DetectorConfig& config) {
  const std::size_t n = anchors.size();
  Assignment out;
  out.cls_target.assign(n, 0);
  out.matched_label.assign(n, -1);
  out.reg.assign(n, RegressionTarget<double>{});
  out.dir_bin.assign(n, 0);
  if (labels.empty()) return out;

  std::vector<double> best_iou(n, 0.0);
  std::vector<int> best_label(n, -1);
  const double xh = config.x_half(), yh = config.y_half();

  for (std::size_t j = 0; j < labels.size(); ++j) {
    const Box3D& gt = labels[j];
    if (gt.class_id >= anchors.C) continue;
    if (std::abs(gt.cx) > xh || std::abs(gt.cy) > yh) continue;
    std::size_t own_best = n;
    double own_iou = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      if (anchors.class_of(a) != gt.class_id) continue;
      const double iou = iou_bev(anchors.boxes[a], gt);
      if (iou > best_iou[a]) {  // strict: earlier label wins ties
        best_iou[a] = iou;
        best_label[a] = static_cast<int>(j);
      }
      if (iou > own_iou) {  // strict: lower anchor index wins ties
        own_iou = iou;
        own_best = a;
      }
    }
    if (own_best == n) {
      // No overlapping anchor: fall back to the closest center, then the
      // best-aligned rotation.
      double best_key = std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < n; ++a) {
        if (anchors.class_of(a) != gt.class_id) continue;
        const Box3D& an = anchors.boxes[a];
        const double d2 = (an.cx - gt.cx) * (an.cx - gt.cx) + (an.cy - gt.cy) * (an.cy - gt.cy);
        const double turn = std::abs(normalize_angle(align_half_turn(gt.yaw, an.yaw) - an.yaw));
        const double key = d2 * 1e3 + turn;
        if (key < best_key) {
          best_key = key;
          own_best = a;
        }
      }
    }
    // label claims its best anchor
    out.cls_target[own_best] = 1;
    out.matched_label[own_best] = static_cast<int>(j);
  }

  for (std::size_t a = 0; a < n; ++a) {
    if (out.cls_target[a] == 1) continue;
    const ClassPrior& prior = config.classes[static_cast<std::size_t>(anchors.class_of(a))];
    if (best_label[a] >= 0 && best_iou[a] >= prior.pos_iou) {
      out.cls_target[a] = 1;
      out.matched_label[a] = best_label[a];
    } else if (best_iou[a] >= prior.neg_iou) {
      out.cls_target[a] = -1;
    }
  }

  for (std::size_t a = 0; a < n; ++a) {
    if (out.cls_target[a] != 1) continue;
    ++out.num_positive;
    const Box3D& gt = labels[static_cast<std::size_t>(out.matched_label[a])];
    const Box3D& anchor = anchors.boxes[a];
    Box3D aligned = gt;
    aligned.yaw = align_half_turn(gt.yaw, anchor.yaw);
    out.reg[a] = encode(aligned, anchor);
    out.dir_bin[a] = direction_bin(gt.yaw);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Network

Detector::Detector(DetectorConfig config)
    : config_(std::move(config)), anchors_(make_anchors(config_)) {
  if (config_.grid_h <= 0 || config_.grid_w <= 0 || config_.cell_size <= 0 ||
      config_.channels <= 0 || config_.conv_layers <= 0 || config_.num_rotations <= 0 ||
      config_.classes.empty()) {
    throw ConfigError("detector: invalid configuration");
  }
}

ParameterSet Detector::init_params(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  const ag::Index d = config_.channels;
  const ag::Index a = config_.anchors_per_cell();
  ParameterSet params;
  auto normal = [&](ag::Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    ag::Array v(ag::numel(shape));
    for (ag::Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
    return ag::Tensor::parameter(std::move(shape), std::move(v));
  };
  auto filled = [](ag::Shape shape, double value) {
    const ag::Index count = ag::numel(shape);
    return ag::Tensor::parameter(std::move(shape), ag::Array::Constant(count, value));
  };
  ag::Index cin = kCellFeatures;
  for (int i = 0; i < config_.conv_layers; ++i) {
    const double he = std::sqrt(2.0 / static_cast<double>(9 * cin));
    params.push_back({"conv" + std::to_string(i) + ".weight", normal({3, 3, cin, d}, he)});
    params.push_back({"conv" + std::to_string(i) + ".bias", filled({d}, 0.0)});
    cin = d;
  }
  const double prior_bias = -std::log((1.0 - 0.01) / 0.01);
  params.push_back({"head.cls.weight", normal({1, 1, d, a}, 0.01)});
  params.push_back({"head.cls.bias", filled({a}, prior_bias)});
  params.push_back({"head.reg.weight", normal({1, 1, d, a * 7}, 0.01)});
  params.push_back({"head.reg.bias", filled({a * 7}, 0.0)});
  params.push_back({"head.dir.weight", normal({1, 1, d, a * kNumDirBins}, 0.01)});
  params.push_back({"head.dir.bias", filled({a * kNumDirBins}, 0.0)});
  params.push_back({"head.iou.weight", normal({1, 1, d, a}, 0.01)});
  params.push_back({"head.iou.bias", filled({a}, 0.0)});
  return params;
}

ParameterSet Detector::zero_params() const {
  ParameterSet p = init_params(0);
  for (auto& np : p) np.tensor.mutable_value().setZero();
  return p;
}

DetectorOutputs Detector::forward(const BEVGrid& grid, const ParameterSet& params) const {
  if (grid.H != config_.grid_h || grid.W != config_.grid_w) {
    throw ShapeError("detector: grid " + std::to_string(grid.H) + "x" + std::to_string(grid.W) +
                     " does not match configuration");
  }
  const std::size_t expected = static_cast<std::size_t>(2 * config_.conv_layers + 8);
  if (params.size() != expected) throw ConfigError("detector: unexpected parameter count");

  const ag::Index H = grid.H, W = grid.W, A = config_.anchors_per_cell();
  ag::Tensor x = ag::Tensor::constant({H, W, kCellFeatures}, grid.features);
  std::size_t k = 0;
  for (int i = 0; i < config_.conv_layers; ++i, k += 2) {
    const std::string layer = "backbone.conv" + std::to_string(i);
    try {
      x = ag::relu(ag::conv2d(x, params[k].tensor, params[k + 1].tensor, 1));
    } catch (const NumericalError& e) {
      throw NumericalError(layer + ": " + e.what());
    }
  }
  DetectorOutputs out;
  out.features = x;
  auto head = [&](const char* name, std::size_t idx) {
    try {
      return ag::conv2d(x, params[idx].tensor, params[idx + 1].tensor, 0);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(name) + ": " + e.what());
    }
  };
  out.cls_logits = head("head.cls", k);
  out.reg = ag::reshape(head("head.reg", k + 2), {H, W, A, 7});
  out.dir_logits = ag::reshape(head("head.dir", k + 4), {H, W, A, kNumDirBins});
  out.iou_pred = ag::sigmoid(head("head.iou", k + 6));
  return out;
}

RawOutputs RawOutputs::from(const DetectorOutputs& out) {
  return {out.cls_logits.value(), out.reg.value(), out.dir_logits.value(), out.iou_pred.value()};
}

Box3D Detector::decode_anchor(const RawOutputs& raw, std::size_t a) const {
  const ag::Index base = static_cast<ag::Index>(a);
  Eigen::Matrix<double, 7, 1> t = raw.reg.segment(base * 7, 7).matrix();
  Box3D box = stal3d::decode(RegressionTarget<double>::from_vector(t), anchors_.boxes[a]);
  const double d0 = raw.dir_logits[base * kNumDirBins];
  const double d1 = raw.dir_logits[base * kNumDirBins + 1];
  box.yaw = apply_direction_bin(box.yaw, d1 > d0 ? 1 : 0);
  // keep decoded extents finite and positive for downstream geometry
  box.l = std::clamp(box.l, 1e-3, 1e3);
  box.w = std::clamp(box.w, 1e-3, 1e3);
  box.h = std::clamp(box.h, 1e-3, 1e3);
  return box;
}

std::vector<Box3D> nms_bev(const std::vector<Box3D>& boxes, double iou_thresh) {
  std::vector<Box3D> kept;
  for (const Box3D& b : boxes) {
    bool suppressed = false;
    for (const Box3D& k : kept) {
      if (k.class_id == b.class_id && iou_bev(k, b) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(b);
  }
  return kept;
}

std::vector<Box3D> Detector::decode(const RawOutputs& raw, const PredictOptions& options) const {
  const std::size_t n = anchors_.size();
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t a = 0; a < n; ++a) {
    const double cls = 1.0 / (1.0 + std::exp(-raw.cls_logits[static_cast<ag::Index>(a)]));
    const double score = std::clamp(cls * raw.iou_pred[static_cast<ag::Index>(a)], 0.0, 1.0);
    if (score >= options.score_thresh) cand.emplace_back(score, a);
  }
  std::stable_sort(cand.begin(), cand.end(),
                   [](const auto& x, const auto& y) { return x.first > y.first; });
  if (cand.size() > static_cast<std::size_t>(options.pre_nms_top)) {
    cand.resize(static_cast<std::size_t>(options.pre_nms_top));
  }
  std::vector<Box3D> boxes;
  boxes.reserve(cand.size());
  for (const auto& [score, a] : cand) boxes.push_back(decode_anchor(raw, a).with_score(score));
  std::vector<Box3D> kept = nms_bev(boxes, options.nms_iou);
  if (kept.size() > static_cast<std::size_t>(options.max_detections)) {
    kept.resize(static_cast<std::size_t>(options.max_detections));
  }
  return kept;
}

std::vector<Box3D> Detector::predict(const PointCloud& points, const ParameterSet& params,
                                     const PredictOptions& options) const {
  const DetectorOutputs out = forward(pillarize(points, config_), params);
  return decode(RawOutputs::from(out), options);
}

std::vector<double> Detector::iou_targets(const RawOutputs& raw, const Assignment& assignment,
                                          const std::vector<Box3D>& labels) const {
  std::vector<double> t(anchors_.size(), 0.0);
  for (std::size_t a = 0; a < anchors_.size(); ++a) {
    if (assignment.cls_target[a] != 1) continue;
    const Box3D& gt = labels[static_cast<std::size_t>(assignment.matched_label[a])];
    t[a] = iou_bev(decode_anchor(raw, a), gt);
  }
  return t;
}

}  // namespace stal3d
