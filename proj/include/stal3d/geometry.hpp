#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <tuple>
#include <vector>

namespace stal3d {

template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Wraps an angle into (-pi, pi].
template <typename Scalar>
Scalar normalize_angle(Scalar a) {
  constexpr Scalar kPi = std::numbers::pi_v<Scalar>;
  constexpr Scalar kTwoPi = 2 * kPi;
  a = std::fmod(a, kTwoPi);
  if (a <= -kPi) a += kTwoPi;
  if (a > kPi) a -= kTwoPi;
  return a;
}

/// Gravity-aligned box rotated about z. (cx, cy, cz) is the volumetric center,
/// l runs along the heading, w across it.
template <typename Scalar>
struct Box3 {
  Scalar cx = 0, cy = 0, cz = 0;
  Scalar l = 1, w = 1, h = 1;
  Scalar yaw = 0;
  int class_id = 0;
  std::optional<Scalar> score;

  /// Validating constructor; normalizes yaw and rejects non-positive extents.
  static Box3 make(Scalar cx, Scalar cy, Scalar cz, Scalar l, Scalar w, Scalar h, Scalar yaw,
                   int class_id = 0, std::optional<Scalar> score = std::nullopt) {
    if (!(l > 0 && w > 0 && h > 0)) {
      throw std::invalid_argument("Box3: dimensions must be positive");
    }
    if (class_id < 0) throw std::invalid_argument("Box3: negative class id");
    if (score && !(*score >= 0 && *score <= 1)) {
      throw std::invalid_argument("Box3: score outside [0,1]");
    }
    return Box3{cx, cy, cz, l, w, h, normalize_angle(yaw), class_id, score};
  }

  Box3 with_score(Scalar s) const {
    Box3 b = *this;
    b.score = s;
    return b;
  }

  Scalar volume() const { return l * w * h; }
  Scalar z_min() const { return cz - h / 2; }
  Scalar z_max() const { return cz + h / 2; }
  Vec3<Scalar> center() const { return {cx, cy, cz}; }

  /// Coordinates of p in the box frame (length, width, height axes).
  Vec3<Scalar> to_local(const Vec3<Scalar>& p) const {
    const Scalar c = std::cos(yaw), s = std::sin(yaw);
    const Scalar dx = p.x() - cx, dy = p.y() - cy;
    return {dx * c + dy * s, -dx * s + dy * c, p.z() - cz};
  }

  Vec3<Scalar> to_world(const Vec3<Scalar>& q) const {
    const Scalar c = std::cos(yaw), s = std::sin(yaw);
    return {q.x() * c - q.y() * s + cx, q.x() * s + q.y() * c + cy, q.z() + cz};
  }

  bool contains(const Vec3<Scalar>& p, Scalar tol = Scalar(1e-4)) const {
    const Vec3<Scalar> q = to_local(p);
    return std::abs(q.x()) <= l / 2 + tol && std::abs(q.y()) <= w / 2 + tol &&
           std::abs(q.z()) <= h / 2 + tol;
  }

  bool operator==(const Box3&) const = default;
};

using Box3D = Box3<double>;

/// Footprint corners, counter-clockwise starting at (+l/2, +w/2) in the box frame.
template <typename Scalar>
std::array<Vec2<Scalar>, 4> bev_corners(const Box3<Scalar>& b) {
  const Scalar c = std::cos(b.yaw), s = std::sin(b.yaw);
  const Scalar hl = b.l / 2, hw = b.w / 2;
  const std::array<Vec2<Scalar>, 4> local = {Vec2<Scalar>(hl, hw), Vec2<Scalar>(-hl, hw),
                                             Vec2<Scalar>(-hl, -hw), Vec2<Scalar>(hl, -hw)};
  std::array<Vec2<Scalar>, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = Vec2<Scalar>(b.cx + c * local[i].x() - s * local[i].y(),
                          b.cy + s * local[i].x() + c * local[i].y());
  }
  return out;
}

/// Signed shoelace area; positive for counter-clockwise polygons.
template <typename Scalar>
Scalar polygon_area(const std::vector<Vec2<Scalar>>& poly) {
  const std::size_t n = poly.size();
  if (n < 3) return 0;
  Scalar acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % n];
    acc += p.x() * q.y() - q.x() * p.y();
  }
  return acc / 2;
}

/// Sutherland-Hodgman clipping of `subject` against the convex CCW polygon `clip`.
template <typename Scalar>
std::vector<Vec2<Scalar>> clip_convex(std::vector<Vec2<Scalar>> subject,
                                      const std::vector<Vec2<Scalar>>& clip) {
  const std::size_t m = clip.size();
  for (std::size_t i = 0; i < m && !subject.empty(); ++i) {
    const Vec2<Scalar> a = clip[i];
    const Vec2<Scalar> b = clip[(i + 1) % m];
    const Vec2<Scalar> edge = b - a;
    auto side = [&](const Vec2<Scalar>& p) {
      return edge.x() * (p.y() - a.y()) - edge.y() * (p.x() - a.x());
    };
    std::vector<Vec2<Scalar>> out;
    out.reserve(subject.size() + 2);
    const std::size_t n = subject.size();
    for (std::size_t j = 0; j < n; ++j) {
      const Vec2<Scalar>& cur = subject[j];
      const Vec2<Scalar>& nxt = subject[(j + 1) % n];
      const Scalar sc = side(cur);
      const Scalar sn = side(nxt);
      if (sc >= 0) out.push_back(cur);
      if ((sc >= 0) != (sn >= 0)) {
        const Scalar t = sc / (sc - sn);
        out.push_back(cur + t * (nxt - cur));
      }
    }
    subject = std::move(out);
  }
  return subject;
}

inline constexpr double kAreaEpsilon = 1e-12;

namespace detail {
template <typename Scalar>
bool box_less(const Box3<Scalar>& a, const Box3<Scalar>& b) {
  return std::tie(a.cx, a.cy, a.l, a.w, a.yaw) < std::tie(b.cx, b.cy, b.l, b.w, b.yaw);
}
}  // namespace detail

/// Footprint intersection area. Arguments are put in a canonical order first so
/// the result is bitwise symmetric.
template <typename Scalar>
Scalar bev_intersection_area(const Box3<Scalar>& first, const Box3<Scalar>& second) {
  const bool swap = detail::box_less(second, first);
  const Box3<Scalar>& a = swap ? second : first;
  const Box3<Scalar>& b = swap ? first : second;
  // bounding-circle reject
  const Scalar dx = a.cx - b.cx, dy = a.cy - b.cy;
  const Scalar ra = std::hypot(a.l, a.w) / 2, rb = std::hypot(b.l, b.w) / 2;
  if (dx * dx + dy * dy > (ra + rb) * (ra + rb)) return 0;
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  std::vector<Vec2<Scalar>> subject(ca.begin(), ca.end());
  const std::vector<Vec2<Scalar>> clip(cb.begin(), cb.end());
  const Scalar area = polygon_area(clip_convex(std::move(subject), clip));
  return area < Scalar(kAreaEpsilon) ? Scalar(0) : area;
}

template <typename Scalar>
Scalar iou_bev(const Box3<Scalar>& a, const Box3<Scalar>& b) {
  const Scalar inter = bev_intersection_area(a, b);
  if (inter <= 0) return 0;
  const Scalar uni = a.l * a.w + b.l * b.w - inter;
  return std::clamp(inter / uni, Scalar(0), Scalar(1));
}

template <typename Scalar>
Scalar iou_3d(const Box3<Scalar>& a, const Box3<Scalar>& b) {
  const Scalar overlap_h = std::min(a.z_max(), b.z_max()) - std::max(a.z_min(), b.z_min());
  if (overlap_h <= 0) return 0;
  const Scalar inter_area = bev_intersection_area(a, b);
  if (inter_area <= 0) return 0;
  const Scalar inter = inter_area * overlap_h;
  const Scalar uni = a.volume() + b.volume() - inter;
  return std::clamp(inter / uni, Scalar(0), Scalar(1));
}

template <typename Scalar>
MatX<Scalar> iou_matrix(const std::vector<Box3<Scalar>>& memory,
                        const std::vector<Box3<Scalar>>& current) {
  MatX<Scalar> a(static_cast<Eigen::Index>(memory.size()),
                 static_cast<Eigen::Index>(current.size()));
  for (std::size_t e = 0; e < memory.size(); ++e) {
    for (std::size_t f = 0; f < current.size(); ++f) {
      a(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(f)) = iou_3d(memory[e], current[f]);
    }
  }
  return a;
}

// ---------------------------------------------------------------------------
// Anchor-relative box encoding.

template <typename Scalar>
struct RegressionTarget {
  Scalar x = 0, y = 0, z = 0;
  Scalar l = 0, w = 0, h = 0;
  Scalar theta = 0;
  bool scale_filtered = false;

  static constexpr int kSize = 7;
  /// Component order is (x, y, z, l, w, h, theta); indices 3..5 are the scale terms.
  Eigen::Matrix<Scalar, 7, 1> as_vector() const {
    return (Eigen::Matrix<Scalar, 7, 1>() << x, y, z, l, w, h, theta).finished();
  }

  static RegressionTarget from_vector(const Eigen::Matrix<Scalar, 7, 1>& v, bool filtered = false) {
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], filtered};
  }

  bool operator==(const RegressionTarget&) const = default;
};

template <typename Scalar>
RegressionTarget<Scalar> encode(const Box3<Scalar>& gt, const Box3<Scalar>& anchor) {
  if (!(anchor.l > 0 && anchor.w > 0 && anchor.h > 0)) {
    throw std::invalid_argument("encode: anchor dimensions must be positive");
  }
  const Scalar diag = std::hypot(anchor.l, anchor.w);
  RegressionTarget<Scalar> t;
  t.x = (gt.cx - anchor.cx) / diag;
  t.y = (gt.cy - anchor.cy) / diag;
  t.z = (gt.cz - anchor.cz) / anchor.h;
  t.l = std::log(gt.l / anchor.l);
  t.w = std::log(gt.w / anchor.w);
  t.h = std::log(gt.h / anchor.h);
  t.theta = std::sin(gt.yaw - anchor.yaw);
  return t;
}

/// Inverse of encode. Yaw is recovered through asin, i.e. within pi/2 of the anchor;
/// the direction bin decides the remaining half-turn.
template <typename Scalar>
Box3<Scalar> decode(const RegressionTarget<Scalar>& t, const Box3<Scalar>& anchor) {
  const Scalar diag = std::hypot(anchor.l, anchor.w);
  Box3<Scalar> b = anchor;
  b.score.reset();
  b.cx = anchor.cx + t.x * diag;
  b.cy = anchor.cy + t.y * diag;
  b.cz = anchor.cz + t.z * anchor.h;
  if (!t.scale_filtered) {
    b.l = anchor.l * std::exp(t.l);
    b.w = anchor.w * std::exp(t.w);
    b.h = anchor.h * std::exp(t.h);
  }
  b.yaw = normalize_angle(anchor.yaw + std::asin(std::clamp(t.theta, Scalar(-1), Scalar(1))));
  return b;
}

template <typename Scalar>
RegressionTarget<Scalar> filter_scale(RegressionTarget<Scalar> t) {
  t.l = t.w = t.h = 0;
  t.scale_filtered = true;
  return t;
}

// ---------------------------------------------------------------------------
// Direction bins: bin 0 covers headings in [0, pi), bin 1 covers [pi, 2pi).

inline constexpr int kNumDirBins = 2;

template <typename Scalar>
int direction_bin(Scalar yaw) {
  constexpr Scalar kPi = std::numbers::pi_v<Scalar>;
  Scalar a = std::fmod(yaw, 2 * kPi);
  if (a < 0) a += 2 * kPi;
  return a >= kPi ? 1 : 0;
}

/// Adds a half-turn to `yaw` when its bin disagrees with `bin`.
template <typename Scalar>
Scalar apply_direction_bin(Scalar yaw, int bin) {
  if (direction_bin(yaw) != bin) yaw += std::numbers::pi_v<Scalar>;
  return normalize_angle(yaw);
}

}  // namespace stal3d
