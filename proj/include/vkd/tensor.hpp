#pragma once

// Dense 64-bit tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a node holding flat row-major values. Ops are
// free functions; when any input requires grad the result records its parents
// and a backprop closure, forming an implicit DAG. backward() walks that DAG
// once, in reverse topological order, accumulating exact partial derivatives
// into every reachable grad-requiring leaf. Eigen is the only math dependency.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vkd/errors.hpp"

namespace vkd {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_size(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  Eigen::ArrayXd values;  // flat, row-major
  bool requires_grad = false;
  Eigen::ArrayXd grad;  // allocated on first use; same length as values
  // Grad-requiring inputs, recorded only when requires_grad is set.
  std::vector<std::shared_ptr<Node>> parents;
  // Distributes this node's grad into its parents' grads (additive).
  std::function<void(Node&)> backprop;

  Eigen::ArrayXd& grad_ref() {
    if (grad.size() != values.size()) grad = Eigen::ArrayXd::Zero(values.size());
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  // Constants do not participate in differentiation.
  static Tensor constant(Shape shape, Eigen::ArrayXd values);
  static Tensor constant(Shape shape, const std::vector<double>& values);
  static Tensor scalar(double v);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  // Leaf with requires_grad set; the unit every optimizer updates.
  static Tensor parameter(Shape shape, Eigen::ArrayXd values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }
  std::int64_t dim(std::size_t axis) const { return node_->shape[axis]; }
  std::int64_t size() const { return node_->values.size(); }

  const Eigen::ArrayXd& values() const { return node_->values; }
  // In-place mutation is only meaningful for leaves (parameters, constants);
  // mutating an op result would desynchronize it from its recorded inputs.
  Eigen::ArrayXd& mutable_values();
  double value() const;  // single-element tensors only

  bool requires_grad() const { return node_->requires_grad; }
  const Eigen::ArrayXd& grad() const;
  void zero_grad();

  detail::Node* node() const { return node_.get(); }
  std::shared_ptr<detail::Node> node_ptr() const { return node_; }

  bool is_leaf() const { return node_->parents.empty() && !node_->backprop; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op(Shape shape, Eigen::ArrayXd values, std::vector<Tensor> inputs,
                        std::function<void(detail::Node&)> backprop);
};

// Builds an op result node. Exposed so tests can construct ops with custom
// (including deliberately wrong) backprop rules.
Tensor make_op(Shape shape, Eigen::ArrayXd values, std::vector<Tensor> inputs,
               std::function<void(detail::Node&)> backprop);

// Reverse-mode sweep from a single-element root. Grads of reachable nodes are
// zeroed first; with accumulate=true, leaf grads are kept and added to.
void backward(const Tensor& root, bool accumulate = false);

// ---- forward ops ----------------------------------------------------------
// Elementwise binary ops accept equal shapes, or a rank-2 [N,F] left operand
// with a rank-1 [F] right operand broadcast across the leading batch axis.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);

// [m,k]x[k,n] -> [m,n]; [m,k]x[k] -> [m]; [k]x[k,n] -> [n].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar

// axis 0 stacks rows (rank 1 or 2); axis 1 joins columns (rank 2).
Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t len);

// Inverted dropout: keeps each element with probability 1-rate and scales the
// kept ones by 1/(1-rate), so evaluation needs no rescaling. The mask depends
// only on the seed, never on the values. train=false is the identity.
Tensor dropout(const Tensor& a, double rate, bool train, std::uint64_t seed);

// ---- finite differences ---------------------------------------------------

// Central-difference check of backward() against f itself. Returns
// max over coordinates of |analytic - (f(x+h)-f(x-h))/2h| / max(1, |analytic|).
// f must be a deterministic function of the parameter values (fix all seeds).
double finite_difference_check(const std::function<Tensor()>& f,
                               const std::vector<Tensor>& params, double h);

}  // namespace vkd
