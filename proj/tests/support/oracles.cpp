#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace stal3d::oracle {

bool inside(const Box3D& b, double x, double y, double z) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double dx = x - b.cx, dy = y - b.cy;
  const double u = c * dx + s * dy;
  const double v = -s * dx + c * dy;
  return std::abs(u) <= b.l / 2 && std::abs(v) <= b.w / 2 && std::abs(z - b.cz) <= b.h / 2;
}

namespace {

/// Fraction of `n` uniform samples of `from` that land inside `into`.
double hit_fraction(const Box3D& from, const Box3D& into, std::size_t n, std::mt19937_64& rng) {
  const double c = std::cos(from.yaw), s = std::sin(from.yaw);
  const double ci = std::cos(into.yaw), si = std::sin(into.yaw);
  // three 21-bit uniform coordinates per 64-bit draw, cell-centered in (-0.5, 0.5)
  constexpr double kCell = 1.0 / (1 << 21);
  auto coord = [&](std::uint64_t bits) { return (static_cast<double>(bits & ((1u << 21) - 1)) + 0.5) * kCell - 0.5; };
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t bits = rng();
    const double p = coord(bits) * from.l, q = coord(bits >> 21) * from.w, r = coord(bits >> 42) * from.h;
    const double dx = from.cx + c * p - s * q - into.cx;
    const double dy = from.cy + s * p + c * q - into.cy;
    // same test as inside() with the trigonometry hoisted
    if (std::abs(ci * dx + si * dy) <= into.l / 2 && std::abs(-si * dx + ci * dy) <= into.w / 2 &&
        std::abs(from.cz + r - into.cz) <= into.h / 2) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace

double mc_iou_3d(const Box3D& a, const Box3D& b, std::size_t samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double va = a.l * a.w * a.h, vb = b.l * b.w * b.h;
  const double ia = hit_fraction(a, b, samples, rng) * va;
  const double ib = hit_fraction(b, a, samples, rng) * vb;
  const double inter = 0.5 * (ia + ib);
  return inter / (va + vb - inter);
}

double rect_iou_bev(const Box3D& a, const Box3D& b) {
  auto extent = [](const Box3D& x, bool along_x) {
    const bool quarter = std::abs(std::sin(x.yaw)) > 0.5;
    const double half = (along_x != quarter ? x.l : x.w) / 2;
    const double c = along_x ? x.cx : x.cy;
    return std::pair{c - half, c + half};
  };
  const auto [ax0, ax1] = extent(a, true);
  const auto [ay0, ay1] = extent(a, false);
  const auto [bx0, bx1] = extent(b, true);
  const auto [by0, by1] = extent(b, false);
  const double ix = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double iy = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = ix * iy;
  return inter / (a.l * a.w + b.l * b.w - inter);
}

Box3D random_box(std::mt19937_64& rng, double span, double min_dim, double max_dim) {
  std::uniform_real_distribution<double> pos(-span, span), dim(min_dim, max_dim),
      z(-1.0, 1.0), yaw(-M_PI, M_PI);
  const double cx = pos(rng), cy = pos(rng), cz = z(rng);
  const double l = dim(rng), w = dim(rng), h = dim(rng);
  return Box3D::make(cx, cy, cz, l, w, h, yaw(rng));
}

ag::Tensor random_leaf(ag::Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  ag::Array v(ag::numel(shape));
  for (ag::Index i = 0; i < v.size(); ++i) v[i] = u(rng);
  return ag::Tensor::parameter(std::move(shape), std::move(v));
}

GradCheck check_gradients(const std::function<ag::Tensor()>& loss, std::vector<ag::Tensor> leaves,
                          double step, int per_tensor, double floor, std::uint64_t seed) {
  ParameterSet params;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    params.push_back({"leaf" + std::to_string(i), leaves[i]});
  }
  return check_gradients(loss, params, step, per_tensor, floor, seed);
}

GradCheck check_gradients(const std::function<ag::Tensor()>& loss, ParameterSet& params,
                          double step, int per_tensor, double floor, std::uint64_t seed) {
  for (auto& p : params) p.tensor.zero_grad();
  ag::backward(loss());
  std::vector<ag::Array> analytic;
  for (const auto& p : params) analytic.push_back(p.tensor.grad());

  std::mt19937_64 rng(seed);
  GradCheck out;
  for (std::size_t t = 0; t < params.size(); ++t) {
    ag::Tensor& leaf = params[t].tensor;
    const ag::Index n = leaf.size();
    std::vector<ag::Index> idx(static_cast<std::size_t>(n));
    for (ag::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    if (per_tensor > 0 && n > per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(per_tensor));
    }
    for (ag::Index i : idx) {
      const double orig = leaf.value()[i];
      leaf.mutable_value()[i] = orig + step;
      const double up = loss().item();
      leaf.mutable_value()[i] = orig - step;
      const double down = loss().item();
      leaf.mutable_value()[i] = orig;
      const double numeric = (up - down) / (2 * step);
      const double a = analytic[t][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++out.checked;
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = params[t].name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return out;
}

}  // namespace stal3d::oracle
