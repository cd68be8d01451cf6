#include <doctest.h>

#include <cmath>

#include "vkd/gradcheck.hpp"
#include "vkd/rng.hpp"
#include "vkd/tensor.hpp"

using namespace vkd;

namespace {

Tensor vec(std::vector<double> v) {
  return Tensor::constant({static_cast<std::int64_t>(v.size())}, v);
}

Tensor pvec(std::vector<double> v) {
  Eigen::ArrayXd a = Eigen::Map<const Eigen::ArrayXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  return Tensor::parameter({static_cast<std::int64_t>(v.size())}, std::move(a));
}

}  // namespace

TEST_CASE("tensor: relu definition") {
  Tensor r = relu(vec({-1, 0, 2}));
  CHECK(r.values()(0) == 0.0);
  CHECK(r.values()(1) == 0.0);
  CHECK(r.values()(2) == 2.0);
  CHECK_FALSE(r.requires_grad());  // constants record no graph
}

TEST_CASE("tensor: matmul identity") {
  Tensor eye = Tensor::constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor v = vec({2.5, -1.25, 0.75});
  Tensor out = matmul(eye, v);
  REQUIRE(out.shape() == Shape{3});
  for (int i = 0; i < 3; ++i) CHECK(out.values()(i) == v.values()(i));
}

TEST_CASE("tensor: softplus at zero is ln 2") {
  CHECK(softplus(Tensor::scalar(0.0)).value() == doctest::Approx(0.6931471805599453).epsilon(1e-15));
}

TEST_CASE("tensor: softplus is overflow-safe") {
  CHECK(softplus(Tensor::scalar(800.0)).value() == doctest::Approx(800.0));
  CHECK(softplus(Tensor::scalar(-800.0)).value() == 0.0);
  CHECK(std::isfinite(softplus(Tensor::scalar(800.0)).value()));
}

TEST_CASE("tensor: backward of sum is all-ones") {
  Tensor x = Tensor::parameter({2, 3}, Eigen::ArrayXd::Random(6));
  backward(sum(x));
  for (int i = 0; i < 6; ++i) CHECK(x.grad()(i) == 1.0);
}

TEST_CASE("tensor: power rule via square") {
  Tensor x = pvec({3.0});
  backward(sum(square(x)));
  CHECK(x.grad()(0) == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("tensor: sigmoid(w.v) gradient matches central differences") {
  Tensor w = pvec({0.2, -0.1});
  Tensor v = vec({1.0, 2.0});
  auto f = [&] { return sigmoid(sum(mul(w, v))); };
  double err = finite_difference_check(f, {w}, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("tensor: finite differences on a sum of squares") {
  Tensor x = pvec({1.5, -2.0, 0.5});
  auto f = [&] { return sum(square(x)); };
  CHECK(finite_difference_check(f, {x}, 1e-5) < 1e-9);
}

TEST_CASE("tensor: finite_difference_check rejects bad step sizes") {
  Tensor x = pvec({1.0});
  auto f = [&] { return sum(square(x)); };
  CHECK_THROWS_AS(finite_difference_check(f, {x}, 0.0), ValueError);
  CHECK_THROWS_AS(finite_difference_check(f, {x}, 1e-2), ValueError);
}

TEST_CASE("tensor: finite_difference_check flags non-finite intermediates") {
  Tensor x = pvec({1e-9});  // log goes -inf once perturbed below zero
  auto f = [&] { return sum(vkd::log(x)); };
  CHECK_THROWS_WITH_AS(finite_difference_check(f, {x}, 1e-5),
                       doctest::Contains("coordinate"), ValueError);
}

TEST_CASE("tensor: every op family passes randomized gradient checks") {
  for (const auto& res : gradient_suite(915, 100)) {
    INFO(res.family);
    CHECK(res.max_rel_err < kGradCheckTol);
  }
}

TEST_CASE("tensor: a corrupted backward rule is caught by the checker") {
  Tensor x = pvec({0.7, -1.3, 2.2});
  auto bad_relu = [&] {
    auto xn = x.node_ptr();
    return make_op(x.shape(), x.values().max(0.0), {x}, [xn](detail::Node& n) {
      xn->grad_ref() += 1.17 * n.grad * (xn->values > 0.0).cast<double>();  // wrong scale
    });
  };
  auto f = [&] { return sum(bad_relu()); };
  CHECK(finite_difference_check(f, {x}, 1e-5) > kGradCheckTol);
}

TEST_CASE("tensor: dropout in eval mode is the identity") {
  Tensor x = pvec({1.0, 2.0, 3.0});
  Tensor y = dropout(x, 0.5, false, 99);
  CHECK(y.node() == x.node());
}

TEST_CASE("tensor: dropout keeps or scales by 1/(1-rate), deterministically") {
  const double rate = 0.3;
  Tensor x = Tensor::parameter({100}, Eigen::ArrayXd::Constant(100, 2.0));
  Tensor a = dropout(x, rate, true, 1234);
  Tensor b = dropout(x, rate, true, 1234);
  int kept = 0;
  for (int i = 0; i < 100; ++i) {
    CHECK(a.values()(i) == b.values()(i));
    const double v = a.values()(i);
    const bool zero = v == 0.0;
    const bool scaled = v == doctest::Approx(2.0 / (1.0 - rate)).epsilon(1e-15);
    CHECK((zero || scaled));
    kept += scaled ? 1 : 0;
  }
  CHECK(kept > 50);  // ~70 expected
  Tensor c = dropout(x, rate, true, 4321);
  bool differs = false;
  for (int i = 0; i < 100; ++i) differs = differs || a.values()(i) != c.values()(i);
  CHECK(differs);
}

TEST_CASE("tensor: seeded forward replay is bit-identical, gradients included") {
  auto run = [](Eigen::ArrayXd* grads) {
    Tensor w = Tensor::parameter({4, 3}, Eigen::ArrayXd::LinSpaced(12, -0.6, 0.9));
    Tensor x = Tensor::constant({2, 4}, {0.3, -1.2, 0.8, 0.1, 1.4, -0.2, 0.05, -0.9});
    Tensor h = dropout(relu(matmul(x, w)), 0.25, true, 777);
    Tensor loss = mean(square(h));
    backward(loss);
    *grads = w.grad();
    return loss.value();
  };
  Eigen::ArrayXd g1, g2;
  const double v1 = run(&g1), v2 = run(&g2);
  CHECK(v1 == v2);
  REQUIRE(g1.size() == g2.size());
  for (Eigen::Index i = 0; i < g1.size(); ++i) CHECK(g1(i) == g2(i));
}

TEST_CASE("tensor: shape errors name the op and both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add"), ShapeError);
  CHECK_THROWS_WITH_AS(matmul(a, Tensor::zeros({4, 5})), doctest::Contains("[2,3]"), ShapeError);
  CHECK_THROWS_WITH_AS(matmul(a, Tensor::zeros({4, 5})), doctest::Contains("[4,5]"), ShapeError);
}

TEST_CASE("tensor: backward preconditions") {
  Tensor x = pvec({1.0, 2.0});
  CHECK_THROWS_AS(backward(square(x)), ShapeError);    // non-scalar root
  CHECK_THROWS_AS(backward(pvec({5.0})), ValueError);  // empty graph
}

TEST_CASE("tensor: a tensor used twice accumulates both path contributions") {
  Tensor x = pvec({1.5});
  backward(sum(add(x, x)));
  CHECK(x.grad()(0) == 2.0);
  Tensor y = pvec({2.0});
  backward(sum(mul(y, y)));  // d/dy y^2 = 2y
  CHECK(y.grad()(0) == 4.0);
}

TEST_CASE("tensor: backward zeroes grads by default, accumulates on request") {
  Tensor x = pvec({3.0});
  backward(sum(square(x)));
  backward(sum(square(x)));
  CHECK(x.grad()(0) == 6.0);  // zeroed between passes
  backward(sum(square(x)), /*accumulate=*/true);
  CHECK(x.grad()(0) == 12.0);
}

TEST_CASE("tensor: leading-axis broadcast add and mul") {
  Tensor a = Tensor::parameter({2, 3}, Eigen::ArrayXd::LinSpaced(6, 1, 6));
  Tensor b = pvec({10, 20, 30});
  Tensor s = add(a, b);
  CHECK(s.values()(0) == 11.0);
  CHECK(s.values()(5) == 36.0);
  Tensor m = mul(a, b);
  CHECK(m.values()(0) == 10.0);
  CHECK(m.values()(5) == 180.0);
  backward(sum(s));
  CHECK(b.grad()(0) == 2.0);  // column sums over the batch
  backward(sum(m));
  CHECK(b.grad()(0) == 1.0 + 4.0);
}

TEST_CASE("tensor: concat and slice are inverses") {
  Tensor a = Tensor::constant({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::constant({2, 3}, {5, 6, 7, 8, 9, 10});
  Tensor c = concat(a, b, 1);
  REQUIRE(c.shape() == Shape{2, 5});
  Tensor a2 = slice(c, 1, 0, 2);
  Tensor b2 = slice(c, 1, 2, 3);
  for (int i = 0; i < 4; ++i) CHECK(a2.values()(i) == a.values()(i));
  for (int i = 0; i < 6; ++i) CHECK(b2.values()(i) == b.values()(i));
  CHECK_THROWS_AS(slice(c, 1, 3, 4), ValueError);
  CHECK_THROWS_AS(concat(a, b, 0), ShapeError);
}

TEST_CASE("tensor: clamp passes gradient only inside the interval") {
  Tensor x = pvec({-12.0, 0.5, 12.0});
  backward(sum(clamp(x, -10.0, 10.0)));
  CHECK(x.grad()(0) == 0.0);
  CHECK(x.grad()(1) == 1.0);
  CHECK(x.grad()(2) == 0.0);
}
