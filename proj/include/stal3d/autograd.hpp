#pragma once

// Minimal reverse-mode differentiation over dense float64 arrays.
//
// Every tensor is a handle to a graph node. Ops record their parents and a
// vector-Jacobian closure; `backward` sorts the reachable graph topologically
// and sweeps it once in reverse. Leaf tensors created with `parameter`
// accumulate gradients across calls until `zero_grad`.

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stal3d/errors.hpp"

namespace stal3d::ag {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Array = Eigen::ArrayXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct Node {
  Shape shape;
  Array value;
  Array grad;  // empty until touched by backward
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  /// Gradient buffer, zero-initialized on first access.
  Array& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, Array values);
  static Tensor constant(Shape shape, double fill);
  static Tensor parameter(Shape shape, Array values);
  static Tensor scalar(double v) { return constant({1}, v); }

  explicit operator bool() const { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  Index dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  Index size() const { return node_->value.size(); }
  const Array& value() const { return node_->value; }
  /// Mutable access for optimizers; only meaningful on leaves.
  Array& mutable_value() { return node_->value; }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const Array& grad() const;
  void zero_grad() { node_->grad = Array::Zero(node_->value.size()); }
  double item() const;
  const std::string& op() const { return node_->op; }

  /// Row-major view of a rank-2 tensor.
  Eigen::Map<const RowMatrix> matrix() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Builds an op result. `fn` receives the result node and must add its
/// vector-Jacobian product into parents that require grad. Non-finite values
/// raise NumericalError naming `op`.
Tensor make_op(std::string op, Shape shape, Array value, std::vector<Tensor> parents,
               std::function<void(Node&)> fn);

void check_finite(const Tensor& t, const std::string& where);

// Elementwise (identical shapes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);

/// Adds a bias of shape [C] to every row of a tensor whose last dim is C.
Tensor add_bias(const Tensor& x, const Tensor& bias);

/// [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Dense cross-correlation, stride 1. x: [H,W,Cin], weight: [K,K,Cin,Cout],
/// bias: [Cout] -> [H+2p-K+1, W+2p-K+1, Cout].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int padding);

/// Full reductions to shape [1].
Tensor reduce_sum(const Tensor& a);
Tensor reduce_max(const Tensor& a);
Tensor mean(const Tensor& a);
/// Reductions over the last axis; the result drops that axis.
Tensor reduce_sum_last(const Tensor& a);
Tensor reduce_max_last(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

/// Identity forward; backward scales the incoming gradient by -lambda.
Tensor grl(const Tensor& x, double lambda);
/// Copy without gradient flow.
Tensor detach(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

/// Reverse topological order of the graph reachable from `root`.
std::vector<Node*> tape(const Tensor& root);

/// Populates gradients of every node reachable from the scalar `loss`.
/// Intermediate gradients are reset on each call; leaf gradients accumulate.
void backward(const Tensor& loss);

}  // namespace stal3d::ag
