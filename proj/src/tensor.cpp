#include "vkd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "vkd/rng.hpp"

namespace vkd {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;
using Arr2D = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Arr2DMap = Eigen::Map<Arr2D>;
using CArr2DMap = Eigen::Map<const Arr2D>;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  std::ostringstream os;
  os << op << ": shape mismatch " << shape_str(a) << " vs " << shape_str(b);
  throw ShapeError(os.str());
}

void require(bool cond, const char* op, const std::string& msg) {
  if (!cond) throw ValueError(std::string(op) + ": " + msg);
}

// Broadcast classification for elementwise binary ops.
enum class Bcast { same, row };  // row: a is [N,F], b is [F]

Bcast bcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Bcast::same;
  if (a.rank() == 2 && b.rank() == 1 && a.dim(1) == b.dim(0)) return Bcast::row;
  shape_fail(op, a.shape(), b.shape());
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_size(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

Tensor Tensor::constant(Shape shape, Eigen::ArrayXd values) {
  if (shape_size(shape) != values.size())
    throw ShapeError("constant: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  return Tensor(std::move(n));
}

Tensor Tensor::constant(Shape shape, const std::vector<double>& values) {
  Eigen::ArrayXd v =
      Eigen::Map<const Eigen::ArrayXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  return constant(std::move(shape), std::move(v));
}

Tensor Tensor::scalar(double v) {
  Eigen::ArrayXd a(1);
  a(0) = v;
  return constant(Shape{}, std::move(a));
}

Tensor Tensor::zeros(Shape shape) {
  Eigen::ArrayXd v = Eigen::ArrayXd::Zero(shape_size(shape));
  return constant(std::move(shape), std::move(v));
}

Tensor Tensor::full(Shape shape, double x) {
  Eigen::ArrayXd v = Eigen::ArrayXd::Constant(shape_size(shape), x);
  return constant(std::move(shape), std::move(v));
}

Tensor Tensor::parameter(Shape shape, Eigen::ArrayXd values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

Eigen::ArrayXd& Tensor::mutable_values() {
  if (!is_leaf()) throw ValueError("mutable_values: tensor is an op result, not a leaf");
  return node_->values;
}

double Tensor::value() const {
  if (size() != 1)
    throw ShapeError("value: tensor has " + std::to_string(size()) + " elements, expected 1");
  return node_->values(0);
}

const Eigen::ArrayXd& Tensor::grad() const {
  if (!node_->requires_grad) throw ValueError("grad: tensor does not require grad");
  return node_->grad_ref();
}

void Tensor::zero_grad() {
  if (node_->requires_grad) node_->grad_ref().setZero();
}

Tensor make_op(Shape shape, Eigen::ArrayXd values, std::vector<Tensor> inputs,
               std::function<void(detail::Node&)> backprop) {
  if (shape_size(shape) != values.size())
    throw ShapeError("make_op: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) n->parents.push_back(t.node_ptr());
  }
  if (!n->parents.empty()) {
    n->requires_grad = true;
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

void backward(const Tensor& root, bool accumulate) {
  if (root.size() != 1)
    throw ShapeError("backward: root has " + std::to_string(root.size()) +
                     " elements, expected a scalar");
  detail::Node* r = root.node();
  if (!r->backprop)
    throw ValueError("backward: root has no recorded graph");

  // Iterative post-order DFS over grad-requiring parents: every node lands
  // after all of its parents, so the reversed list is a valid backward order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> done;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{r, 0}};
  std::unordered_set<detail::Node*> on_stack{r};
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      detail::Node* p = node->parents[idx++].get();
      if (!done.count(p) && !on_stack.count(p)) {
        stack.push_back({p, 0});
        on_stack.insert(p);
      }
    } else {
      order.push_back(node);
      done.insert(node);
      on_stack.erase(node);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order) {
    bool leaf = n->parents.empty() && !n->backprop;
    if (!leaf || !accumulate) n->grad_ref().setZero();
    else n->grad_ref();  // ensure allocation
  }
  r->grad_ref()(0) = 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop(**it);
  }
}

// ---- elementwise binary ----------------------------------------------------

namespace {

// Accumulates g (shaped like a [N,F]) into a rank-1 [F] grad by column sums.
void add_colwise(Eigen::ArrayXd& dst, const Eigen::ArrayXd& g, std::int64_t rows,
                 std::int64_t cols) {
  CArr2DMap gm(g.data(), rows, cols);
  dst += gm.colwise().sum().transpose();
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  Bcast k = bcast_kind("add", a, b);
  Eigen::ArrayXd out;
  if (k == Bcast::same) {
    out = a.values() + b.values();
  } else {
    CArr2DMap am(a.values().data(), a.dim(0), a.dim(1));
    Arr2D o = am.rowwise() + b.values().transpose();
    out = Eigen::Map<Eigen::ArrayXd>(o.data(), o.size());
  }
  auto an = a.node_ptr(), bn = b.node_ptr();
  auto rows = a.rank() == 2 ? a.dim(0) : 0, cols = a.rank() == 2 ? a.dim(1) : 0;
  return make_op(a.shape(), std::move(out), {a, b}, [=](detail::Node& n) {
    if (an->requires_grad) an->grad_ref() += n.grad;
    if (bn->requires_grad) {
      if (k == Bcast::same) bn->grad_ref() += n.grad;
      else add_colwise(bn->grad_ref(), n.grad, rows, cols);
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Bcast k = bcast_kind("sub", a, b);
  Eigen::ArrayXd out;
  if (k == Bcast::same) {
    out = a.values() - b.values();
  } else {
    CArr2DMap am(a.values().data(), a.dim(0), a.dim(1));
    Arr2D o = am.rowwise() - b.values().transpose();
    out = Eigen::Map<Eigen::ArrayXd>(o.data(), o.size());
  }
  auto an = a.node_ptr(), bn = b.node_ptr();
  auto rows = a.rank() == 2 ? a.dim(0) : 0, cols = a.rank() == 2 ? a.dim(1) : 0;
  return make_op(a.shape(), std::move(out), {a, b}, [=](detail::Node& n) {
    if (an->requires_grad) an->grad_ref() += n.grad;
    if (bn->requires_grad) {
      if (k == Bcast::same) bn->grad_ref() -= n.grad;
      else {
        CArr2DMap gm(n.grad.data(), rows, cols);
        bn->grad_ref() -= gm.colwise().sum().transpose();
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Bcast k = bcast_kind("mul", a, b);
  Eigen::ArrayXd out;
  if (k == Bcast::same) {
    out = a.values() * b.values();
  } else {
    CArr2DMap am(a.values().data(), a.dim(0), a.dim(1));
    Arr2D o = am.rowwise() * b.values().transpose();
    out = Eigen::Map<Eigen::ArrayXd>(o.data(), o.size());
  }
  auto an = a.node_ptr(), bn = b.node_ptr();
  auto rows = a.rank() == 2 ? a.dim(0) : 0, cols = a.rank() == 2 ? a.dim(1) : 0;
  return make_op(a.shape(), std::move(out), {a, b}, [=](detail::Node& n) {
    if (k == Bcast::same) {
      if (an->requires_grad) an->grad_ref() += n.grad * bn->values;
      if (bn->requires_grad) bn->grad_ref() += n.grad * an->values;
    } else {
      if (an->requires_grad) {
        Arr2DMap ag(an->grad_ref().data(), rows, cols);
        CArr2DMap gm(n.grad.data(), rows, cols);
        ag += gm.rowwise() * bn->values.transpose();
      }
      if (bn->requires_grad) {
        CArr2DMap gm(n.grad.data(), rows, cols);
        CArr2DMap am(an->values.data(), rows, cols);
        bn->grad_ref() += (gm * am).colwise().sum().transpose();
      }
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  auto an = a.node_ptr();
  return make_op(a.shape(), a.values() * c, {a}, [an, c](detail::Node& n) {
    an->grad_ref() += c * n.grad;
  });
}

Tensor add_const(const Tensor& a, double c) {
  auto an = a.node_ptr();
  return make_op(a.shape(), a.values() + c, {a},
                 [an](detail::Node& n) { an->grad_ref() += n.grad; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor square(const Tensor& a) { return mul(a, a); }

// ---- matmul ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() == 2 && b.rank() == 2) {
    if (a.dim(1) != b.dim(0)) shape_fail("matmul", a.shape(), b.shape());
    const auto m = a.dim(0), k = a.dim(1), n2 = b.dim(1);
    Eigen::ArrayXd out(m * n2);
    MatMap(out.data(), m, n2) = CMatMap(a.values().data(), m, k) * CMatMap(b.values().data(), k, n2);
    auto an = a.node_ptr(), bn = b.node_ptr();
    return make_op({m, n2}, std::move(out), {a, b}, [=](detail::Node& nd) {
      CMatMap g(nd.grad.data(), m, n2);
      if (an->requires_grad)
        MatMap(an->grad_ref().data(), m, k) += g * CMatMap(bn->values.data(), k, n2).transpose();
      if (bn->requires_grad)
        MatMap(bn->grad_ref().data(), k, n2) += CMatMap(an->values.data(), m, k).transpose() * g;
    });
  }
  if (a.rank() == 2 && b.rank() == 1) {
    if (a.dim(1) != b.dim(0)) shape_fail("matmul", a.shape(), b.shape());
    const auto m = a.dim(0), k = a.dim(1);
    Eigen::ArrayXd out(m);
    VecMap(out.data(), m) = CMatMap(a.values().data(), m, k) * CVecMap(b.values().data(), k);
    auto an = a.node_ptr(), bn = b.node_ptr();
    return make_op({m}, std::move(out), {a, b}, [=](detail::Node& nd) {
      CVecMap g(nd.grad.data(), m);
      if (an->requires_grad)
        MatMap(an->grad_ref().data(), m, k) += g * CVecMap(bn->values.data(), k).transpose();
      if (bn->requires_grad)
        VecMap(bn->grad_ref().data(), k) += CMatMap(an->values.data(), m, k).transpose() * g;
    });
  }
  if (a.rank() == 1 && b.rank() == 2) {
    if (a.dim(0) != b.dim(0)) shape_fail("matmul", a.shape(), b.shape());
    const auto k = a.dim(0), n2 = b.dim(1);
    Eigen::ArrayXd out(n2);
    VecMap(out.data(), n2) =
        CMatMap(b.values().data(), k, n2).transpose() * CVecMap(a.values().data(), k);
    auto an = a.node_ptr(), bn = b.node_ptr();
    return make_op({n2}, std::move(out), {a, b}, [=](detail::Node& nd) {
      CVecMap g(nd.grad.data(), n2);
      if (an->requires_grad)
        VecMap(an->grad_ref().data(), k) += CMatMap(bn->values.data(), k, n2) * g;
      if (bn->requires_grad)
        MatMap(bn->grad_ref().data(), k, n2) += CVecMap(an->values.data(), k) * g.transpose();
    });
  }
  shape_fail("matmul", a.shape(), b.shape());
}

// ---- elementwise unary -----------------------------------------------------

Tensor relu(const Tensor& a) {
  auto an = a.node_ptr();
  return make_op(a.shape(), a.values().max(0.0), {a}, [an](detail::Node& n) {
    an->grad_ref() += n.grad * (an->values > 0.0).cast<double>();
  });
}

Tensor tanh(const Tensor& a) {
  auto an = a.node_ptr();
  Eigen::ArrayXd t = a.values().tanh();
  return make_op(a.shape(), t, {a}, [an, t](detail::Node& n) {
    an->grad_ref() += n.grad * (1.0 - t.square());
  });
}

Tensor exp(const Tensor& a) {
  auto an = a.node_ptr();
  Eigen::ArrayXd e = a.values().exp();
  return make_op(a.shape(), e, {a}, [an, e](detail::Node& n) {
    an->grad_ref() += n.grad * e;
  });
}

Tensor log(const Tensor& a) {
  auto an = a.node_ptr();
  return make_op(a.shape(), a.values().log(), {a}, [an](detail::Node& n) {
    an->grad_ref() += n.grad / an->values;
  });
}

namespace {
Eigen::ArrayXd stable_sigmoid(const Eigen::ArrayXd& x) {
  // exp() only ever sees non-positive arguments.
  Eigen::ArrayXd e = (-x.abs()).exp();
  return (x >= 0.0).select(1.0 / (1.0 + e), e / (1.0 + e));
}
}  // namespace

Tensor softplus(const Tensor& a) {
  auto an = a.node_ptr();
  // max(x,0) + log1p(exp(-|x|)) never overflows.
  Eigen::ArrayXd out = a.values().max(0.0) + (-a.values().abs()).exp().log1p();
  return make_op(a.shape(), std::move(out), {a}, [an](detail::Node& n) {
    an->grad_ref() += n.grad * stable_sigmoid(an->values);
  });
}

Tensor sigmoid(const Tensor& a) {
  auto an = a.node_ptr();
  Eigen::ArrayXd s = stable_sigmoid(a.values());
  return make_op(a.shape(), s, {a}, [an, s](detail::Node& n) {
    an->grad_ref() += n.grad * s * (1.0 - s);
  });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  require(lo < hi, "clamp", "lo must be < hi");
  auto an = a.node_ptr();
  return make_op(a.shape(), a.values().max(lo).min(hi), {a}, [an, lo, hi](detail::Node& n) {
    an->grad_ref() += n.grad * ((an->values > lo) * (an->values < hi)).cast<double>();
  });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a) {
  auto an = a.node_ptr();
  Eigen::ArrayXd out(1);
  out(0) = a.values().sum();
  return make_op(Shape{}, std::move(out), {a}, [an](detail::Node& n) {
    an->grad_ref() += n.grad(0);
  });
}

Tensor mean(const Tensor& a) {
  require(a.size() > 0, "mean", "empty tensor");
  auto an = a.node_ptr();
  const double inv = 1.0 / static_cast<double>(a.size());
  Eigen::ArrayXd out(1);
  out(0) = a.values().sum() * inv;
  return make_op(Shape{}, std::move(out), {a}, [an, inv](detail::Node& n) {
    an->grad_ref() += n.grad(0) * inv;
  });
}

// ---- layout ops ------------------------------------------------------------

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  if (axis == 0 && a.rank() == b.rank() && (a.rank() == 1 || (a.rank() == 2 && a.dim(1) == b.dim(1)))) {
    // Row-major makes axis-0 concat a flat append.
    Shape out_shape = a.shape();
    out_shape[0] += b.dim(0);
    Eigen::ArrayXd out(a.size() + b.size());
    out.head(a.size()) = a.values();
    out.tail(b.size()) = b.values();
    auto an = a.node_ptr(), bn = b.node_ptr();
    auto na = a.size(), nb = b.size();
    return make_op(std::move(out_shape), std::move(out), {a, b}, [=](detail::Node& n) {
      if (an->requires_grad) an->grad_ref() += n.grad.head(na);
      if (bn->requires_grad) bn->grad_ref() += n.grad.tail(nb);
    });
  }
  if (axis == 1 && a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0)) {
    const auto n0 = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    Eigen::ArrayXd out(n0 * (ca + cb));
    Arr2DMap om(out.data(), n0, ca + cb);
    om.leftCols(ca) = CArr2DMap(a.values().data(), n0, ca);
    om.rightCols(cb) = CArr2DMap(b.values().data(), n0, cb);
    auto an = a.node_ptr(), bn = b.node_ptr();
    return make_op({n0, ca + cb}, std::move(out), {a, b}, [=](detail::Node& n) {
      CArr2DMap gm(n.grad.data(), n0, ca + cb);
      if (an->requires_grad) Arr2DMap(an->grad_ref().data(), n0, ca) += gm.leftCols(ca);
      if (bn->requires_grad) Arr2DMap(bn->grad_ref().data(), n0, cb) += gm.rightCols(cb);
    });
  }
  shape_fail(axis == 0 ? "concat(axis=0)" : "concat(axis=1)", a.shape(), b.shape());
}

Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t len) {
  require(len >= 1 && start >= 0, "slice", "start/len out of range");
  if (a.rank() == 1 && axis == 0) {
    require(start + len <= a.dim(0), "slice", "range exceeds extent " + std::to_string(a.dim(0)));
    auto an = a.node_ptr();
    Eigen::ArrayXd out = a.values().segment(start, len);
    return make_op({len}, std::move(out), {a}, [an, start, len](detail::Node& n) {
      an->grad_ref().segment(start, len) += n.grad;
    });
  }
  if (a.rank() == 2 && (axis == 0 || axis == 1)) {
    const auto rows = a.dim(0), cols = a.dim(1);
    require(start + len <= a.dim(static_cast<std::size_t>(axis)), "slice",
            "range exceeds extent " + std::to_string(a.dim(static_cast<std::size_t>(axis))));
    auto an = a.node_ptr();
    if (axis == 0) {
      Eigen::ArrayXd out = a.values().segment(start * cols, len * cols);
      return make_op({len, cols}, std::move(out), {a}, [an, start, len, cols](detail::Node& n) {
        an->grad_ref().segment(start * cols, len * cols) += n.grad;
      });
    }
    Eigen::ArrayXd out(rows * len);
    Arr2DMap(out.data(), rows, len) = CArr2DMap(a.values().data(), rows, cols).middleCols(start, len);
    return make_op({rows, len}, std::move(out), {a}, [an, rows, cols, start, len](detail::Node& n) {
      Arr2DMap(an->grad_ref().data(), rows, cols).middleCols(start, len) +=
          CArr2DMap(n.grad.data(), rows, len);
    });
  }
  throw ShapeError("slice: unsupported axis " + std::to_string(axis) + " for shape " +
                   shape_str(a.shape()));
}

Tensor dropout(const Tensor& a, double rate, bool train, std::uint64_t seed) {
  require(rate >= 0.0 && rate < 1.0, "dropout", "rate must be in [0,1)");
  if (!train || rate == 0.0) return a;
  rng::Stream s(seed);
  Eigen::ArrayXd mask(a.size());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    mask(i) = s.next_uniform() >= rate ? keep_scale : 0.0;
  auto an = a.node_ptr();
  return make_op(a.shape(), a.values() * mask, {a}, [an, mask](detail::Node& n) {
    an->grad_ref() += n.grad * mask;
  });
}

// ---- finite differences ----------------------------------------------------

double finite_difference_check(const std::function<Tensor()>& f,
                               const std::vector<Tensor>& params, double h) {
  if (!(h > 0.0 && h <= 1e-3))
    throw ValueError("finite_difference_check: h must be in (0, 1e-3], got " + std::to_string(h));

  Tensor root = f();
  if (!root.values().allFinite())
    throw ValueError("finite_difference_check: non-finite objective at base point");
  backward(root);
  std::vector<Eigen::ArrayXd> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) analytic.push_back(p.grad());

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];  // shared handle; perturbs the same storage f() reads
    Eigen::ArrayXd& v = p.mutable_values();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double saved = v(i);
      v(i) = saved + h;
      const double fp = f().value();
      v(i) = saved - h;
      const double fm = f().value();
      v(i) = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw ValueError("finite_difference_check: non-finite value perturbing parameter " +
                         std::to_string(pi) + " coordinate " + std::to_string(i));
      const double fd = (fp - fm) / (2.0 * h);
      const double a = analytic[pi](i);
      const double rel = std::abs(a - fd) / std::max(1.0, std::abs(a));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace vkd
