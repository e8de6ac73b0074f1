#include "stal3d/autograd.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace stal3d::ag {

namespace {

using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

Array& grad_of(const std::shared_ptr<Node>& n) { return n->grad_buffer(); }

}  // namespace

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Array& Node::grad_buffer() {
  if (grad.size() != value.size()) grad = Array::Zero(value.size());
  return grad;
}

Tensor Tensor::constant(Shape shape, Array values) {
  if (numel(shape) != values.size()) {
    throw ShapeError("constant: " + to_string(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->op = "constant";
  return Tensor(std::move(n));
}

Tensor Tensor::constant(Shape shape, double fill) {
  const Index count = numel(shape);
  return constant(std::move(shape), Array::Constant(count, fill));
}

Tensor Tensor::parameter(Shape shape, Array values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  t.node_->op = "parameter";
  return t;
}

const Array& Tensor::grad() const {
  if (!has_grad()) node_->grad = Array::Zero(node_->value.size());
  return node_->grad;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not scalar");
  return node_->value[0];
}

Eigen::Map<const RowMatrix> Tensor::matrix() const {
  if (rank() != 2) throw ShapeError("matrix: rank-2 tensor expected, got " + to_string(shape()));
  return {node_->value.data(), shape()[0], shape()[1]};
}

void check_finite(const Tensor& t, const std::string& where) {
  if (!t.value().allFinite()) throw NumericalError("non-finite value in " + where);
}

Tensor make_op(std::string op, Shape shape, Array value, std::vector<Tensor> parents,
               std::function<void(Node&)> fn) {
  if (!value.allFinite()) throw NumericalError("non-finite value produced by " + op);
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = std::move(op);
  for (const Tensor& p : parents) {
    if (p.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (const Tensor& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(fn);
  }
  return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return make_op("add", a.shape(), a.value() + b.value(), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) grad_of(p) += self.grad;
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return make_op("sub", a.shape(), a.value() - b.value(), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) grad_of(self.parents[0]) += self.grad;
    if (self.parents[1]->requires_grad) grad_of(self.parents[1]) -= self.grad;
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  return make_op("mul", a.shape(), a.value() * b.value(), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) grad_of(pa) += self.grad * pb->value;
    if (pb->requires_grad) grad_of(pb) += self.grad * pa->value;
  });
}

Tensor scale(const Tensor& a, double c) {
  return make_op("scale", a.shape(), a.value() * c, {a},
                 [c](Node& self) { grad_of(self.parents[0]) += self.grad * c; });
}

Tensor relu(const Tensor& a) {
  return make_op("relu", a.shape(), a.value().max(0.0), {a}, [](Node& self) {
    auto& p = self.parents[0];
    grad_of(p) += (p->value > 0.0).select(self.grad, 0.0);
  });
}

Tensor sigmoid(const Tensor& a) {
  Array v = 1.0 / (1.0 + (-a.value()).exp());
  return make_op("sigmoid", a.shape(), std::move(v), {a}, [](Node& self) {
    grad_of(self.parents[0]) += self.grad * self.value * (1.0 - self.value);
  });
}

Tensor log(const Tensor& a) {
  return make_op("log", a.shape(), a.value().log(), {a}, [](Node& self) {
    auto& p = self.parents[0];
    grad_of(p) += self.grad / p->value;
  });
}

Tensor exp(const Tensor& a) {
  return make_op("exp", a.shape(), a.value().exp(), {a}, [](Node& self) {
    grad_of(self.parents[0]) += self.grad * self.value;
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const Index c = bias.size();
  if (x.rank() == 0 || x.shape().back() != c || bias.rank() != 1) {
    throw ShapeError("add_bias: shape mismatch " + to_string(x.shape()) + " vs " +
                     to_string(bias.shape()));
  }
  const Index rows = x.size() / c;
  Array v = x.value();
  MutMap(v.data(), rows, c).rowwise() += bias.value().matrix().transpose();
  return make_op("add_bias", x.shape(), std::move(v), {x, bias}, [rows, c](Node& self) {
    auto& px = self.parents[0];
    auto& pb = self.parents[1];
    if (px->requires_grad) grad_of(px) += self.grad;
    if (pb->requires_grad) {
      grad_of(pb) += ConstMap(self.grad.data(), rows, c).colwise().sum().transpose().array();
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Array v(m * n);
  MutMap(v.data(), m, n).noalias() = a.matrix() * b.matrix();
  return make_op("matmul", {m, n}, std::move(v), {a, b}, [m, k, n](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    ConstMap g(self.grad.data(), m, n);
    if (pa->requires_grad) {
      MutMap(grad_of(pa).data(), m, k).noalias() += g * ConstMap(pb->value.data(), k, n).transpose();
    }
    if (pb->requires_grad) {
      MutMap(grad_of(pb).data(), k, n).noalias() += ConstMap(pa->value.data(), m, k).transpose() * g;
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution via im2col

namespace {

struct ConvGeometry {
  Index h, w, cin, k, pad, ho, wo;
};

RowMatrix im2col(const double* x, const ConvGeometry& g) {
  RowMatrix col = RowMatrix::Zero(g.ho * g.wo, g.k * g.k * g.cin);
  for (Index oh = 0; oh < g.ho; ++oh) {
    for (Index ow = 0; ow < g.wo; ++ow) {
      double* row = col.row(oh * g.wo + ow).data();
      for (Index kh = 0; kh < g.k; ++kh) {
        const Index ih = oh + kh - g.pad;
        if (ih < 0 || ih >= g.h) continue;
        for (Index kw = 0; kw < g.k; ++kw) {
          const Index iw = ow + kw - g.pad;
          if (iw < 0 || iw >= g.w) continue;
          std::copy_n(x + (ih * g.w + iw) * g.cin, g.cin, row + (kh * g.k + kw) * g.cin);
        }
      }
    }
  }
  return col;
}

void col2im_add(const RowMatrix& col, const ConvGeometry& g, double* dx) {
  for (Index oh = 0; oh < g.ho; ++oh) {
    for (Index ow = 0; ow < g.wo; ++ow) {
      const double* row = col.row(oh * g.wo + ow).data();
      for (Index kh = 0; kh < g.k; ++kh) {
        const Index ih = oh + kh - g.pad;
        if (ih < 0 || ih >= g.h) continue;
        for (Index kw = 0; kw < g.k; ++kw) {
          const Index iw = ow + kw - g.pad;
          if (iw < 0 || iw >= g.w) continue;
          double* dst = dx + (ih * g.w + iw) * g.cin;
          const double* src = row + (kh * g.k + kw) * g.cin;
          for (Index c = 0; c < g.cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int padding) {
  if (x.rank() != 3 || weight.rank() != 4 || weight.dim(0) != weight.dim(1) ||
      weight.dim(2) != x.dim(2) || bias.rank() != 1 || bias.dim(0) != weight.dim(3)) {
    throw ShapeError("conv2d: shape mismatch " + to_string(x.shape()) + " vs " +
                     to_string(weight.shape()) + " / " + to_string(bias.shape()));
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), weight.dim(0), padding, 0, 0};
  g.ho = g.h + 2 * g.pad - g.k + 1;
  g.wo = g.w + 2 * g.pad - g.k + 1;
  if (g.ho <= 0 || g.wo <= 0) throw ShapeError("conv2d: kernel larger than padded input");
  const Index cout = weight.dim(3);
  const Index patch = g.k * g.k * g.cin;
  const bool pointwise = g.k == 1 && g.pad == 0;

  auto col = std::make_shared<RowMatrix>();
  if (!pointwise) *col = im2col(x.value().data(), g);
  ConstMap wmat(weight.value().data(), patch, cout);

  Array v(g.ho * g.wo * cout);
  MutMap out(v.data(), g.ho * g.wo, cout);
  if (pointwise) {
    out.noalias() = ConstMap(x.value().data(), g.h * g.w, g.cin) * wmat;
  } else {
    out.noalias() = *col * wmat;
  }
  out.rowwise() += bias.value().matrix().transpose();

  return make_op(
      "conv2d", {g.ho, g.wo, cout}, std::move(v), {x, weight, bias},
      [g, cout, patch, pointwise, col](Node& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        auto& pb = self.parents[2];
        const Index rows = g.ho * g.wo;
        ConstMap dy(self.grad.data(), rows, cout);
        ConstMap cols = pointwise ? ConstMap(px->value.data(), rows, patch)
                                  : ConstMap(col->data(), rows, patch);
        if (pw->requires_grad) {
          MutMap(grad_of(pw).data(), patch, cout).noalias() += cols.transpose() * dy;
        }
        if (pb->requires_grad) grad_of(pb) += dy.colwise().sum().transpose().array();
        if (px->requires_grad) {
          ConstMap wmat(pw->value.data(), patch, cout);
          if (pointwise) {
            MutMap(grad_of(px).data(), rows, patch).noalias() += dy * wmat.transpose();
          } else {
            RowMatrix dcol = dy * wmat.transpose();
            col2im_add(dcol, g, grad_of(px).data());
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions and shape ops

Tensor reduce_sum(const Tensor& a) {
  Array v(1);
  v[0] = a.value().sum();
  return make_op("reduce_sum", {1}, std::move(v), {a},
                 [](Node& self) { grad_of(self.parents[0]) += self.grad[0]; });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.size());
  Array v(1);
  v[0] = a.value().sum() / n;
  return make_op("mean", {1}, std::move(v), {a},
                 [n](Node& self) { grad_of(self.parents[0]) += self.grad[0] / n; });
}

Tensor reduce_max(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("reduce_max: empty tensor");
  Index arg = 0;
  const double m = a.value().maxCoeff(&arg);  // first index on ties
  Array v(1);
  v[0] = m;
  return make_op("reduce_max", {1}, std::move(v), {a},
                 [arg](Node& self) { grad_of(self.parents[0])[arg] += self.grad[0]; });
}

Tensor reduce_sum_last(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("reduce_sum_last: rank-0 tensor");
  const Index c = a.shape().back();
  const Index rows = a.size() / c;
  Shape out(a.shape().begin(), a.shape().end() - 1);
  if (out.empty()) out = {1};
  Array v = ConstMap(a.value().data(), rows, c).rowwise().sum().array();
  return make_op("reduce_sum_last", out, std::move(v), {a}, [rows, c](Node& self) {
    MutMap(grad_of(self.parents[0]).data(), rows, c).colwise() += self.grad.matrix();
  });
}

Tensor reduce_max_last(const Tensor& a) {
  if (a.rank() == 0 || a.shape().back() == 0) throw ShapeError("reduce_max_last: empty axis");
  const Index c = a.shape().back();
  const Index rows = a.size() / c;
  Shape out(a.shape().begin(), a.shape().end() - 1);
  if (out.empty()) out = {1};
  Array v(rows);
  std::vector<Index> args(static_cast<std::size_t>(rows));
  ConstMap m(a.value().data(), rows, c);
  for (Index r = 0; r < rows; ++r) {
    Index arg = 0;
    v[r] = m.row(r).maxCoeff(&arg);
    args[static_cast<std::size_t>(r)] = arg;
  }
  return make_op("reduce_max_last", out, std::move(v), {a},
                 [c, args = std::move(args)](Node& self) {
                   Array& g = grad_of(self.parents[0]);
                   for (std::size_t r = 0; r < args.size(); ++r) {
                     g[static_cast<Index>(r) * c + args[r]] += self.grad[static_cast<Index>(r)];
                   }
                 });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: " + to_string(a.shape()) + " cannot become " + to_string(shape));
  }
  return make_op("reshape", std::move(shape), a.value(), {a},
                 [](Node& self) { grad_of(self.parents[0]) += self.grad; });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + to_string(ref));
  Index outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
  std::vector<Index> widths;
  Index total = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == ref[i];
    if (!ok) throw ShapeError("concat: shape mismatch " + to_string(ref) + " vs " + to_string(s));
    widths.push_back(s[axis] * inner);
    total += s[axis];
  }
  Shape out = ref;
  out[axis] = total;
  const Index row = total * inner;
  Array v(outer * row);
  Index offset = 0;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    MutMap(v.data(), outer, row).middleCols(offset, widths[j]) =
        ConstMap(parts[j].value().data(), outer, widths[j]);
    offset += widths[j];
  }
  return make_op("concat", out, std::move(v), parts, [outer, row, widths](Node& self) {
    Index off = 0;
    for (std::size_t j = 0; j < self.parents.size(); ++j) {
      auto& p = self.parents[j];
      if (p->requires_grad) {
        MutMap(grad_of(p).data(), outer, widths[j]) +=
            ConstMap(self.grad.data(), outer, row).middleCols(off, widths[j]);
      }
      off += widths[j];
    }
  });
}

Tensor grl(const Tensor& x, double lambda) {
  return make_op("grl", x.shape(), x.value(), {x}, [lambda](Node& self) {
    grad_of(self.parents[0]) += self.grad * (-lambda);
  });
}

Tensor detach(const Tensor& x) { return Tensor::constant(x.shape(), x.value()); }

// ---------------------------------------------------------------------------
// Backward sweep

std::vector<Node*> tape(const Tensor& root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // iterative post-order DFS
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  const std::vector<Node*> order = tape(loss);
  for (Node* n : order) {
    if (n->backward_fn) n->grad = Array::Zero(n->value.size());
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (Node* n : order) {
    if (n->backward_fn) {
      n->backward_fn(*n);
      if (!n->grad.allFinite()) throw NumericalError("non-finite gradient in " + n->op);
    }
  }
}

}  // namespace stal3d::ag
