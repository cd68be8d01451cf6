#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>

#include "vkd/gradcheck.hpp"
#include "vkd/objectives.hpp"
#include "vkd/rng.hpp"

using namespace vkd;

namespace {

constexpr double kLn2 = 0.6931471805599453;

ModelConfig small_config() {
  ModelConfig mc;
  mc.input_dim = 8;
  mc.vocab = 12;
  mc.embed_dim = 6;
  mc.feature_dim = 6;
  mc.latent_dim = 4;
  mc.n_classes = 3;
  mc.hidden = {8, 8};
  mc.dropout = 0.5;
  return mc;
}

Batch small_batch(std::int64_t n, const ModelConfig& mc, std::uint64_t seed) {
  rng::Stream s(seed);
  Eigen::ArrayXd img(n * mc.input_dim);
  for (Eigen::Index i = 0; i < img.size(); ++i) img(i) = s.next_gaussian();
  Eigen::MatrixXi toks(n, 6);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < 6; ++j)
      toks(i, j) = static_cast<int>(s.next_below(static_cast<std::uint64_t>(mc.vocab)));
  Eigen::ArrayXd lab(n * mc.n_classes);
  for (Eigen::Index i = 0; i < lab.size(); ++i) lab(i) = s.next_uniform() < 0.5 ? 0.0 : 1.0;
  return Batch{Tensor::constant({n, mc.input_dim}, std::move(img)), std::move(toks),
               Tensor::constant({n, mc.n_classes}, std::move(lab))};
}

}  // namespace

TEST_CASE("objectives: annealing golden table (T=100, C=4, R=0.5)") {
  AnnealSchedule s{100, 4, 0.5};
  CHECK(beta_at(s, 1) == 0.0);
  CHECK(beta_at(s, 13) == 0.96);
  CHECK(beta_at(s, 14) == 1.0);
  CHECK(beta_at(s, 26) == 0.0);
}

TEST_CASE("objectives: annealing stays in [0,1] and is T/C periodic") {
  AnnealSchedule s{100, 4, 0.5};
  for (std::int64_t t = 1; t <= 10000; ++t) {
    const double b = beta_at(s, t);
    CHECK(b >= 0.0);
    CHECK(b <= 1.0);
    CHECK(beta_at(s, t + 25) == b);
    if (t > 1 && (t - 1) % 25 != 0) CHECK(beta_at(s, t) >= beta_at(s, t - 1));  // ramp monotone
  }
}

TEST_CASE("objectives: annealing rejects bad schedules") {
  CHECK_THROWS_AS(beta_at(AnnealSchedule{3, 4, 0.5}, 1), ConfigError);   // T < C
  CHECK_THROWS_AS(beta_at(AnnealSchedule{100, 4, 0.0}, 1), ConfigError); // no ramp
  CHECK_THROWS_AS(beta_at(AnnealSchedule{100, 4, 0.5}, 0), ValueError);  // t is 1-based
}

TEST_CASE("objectives: cross entropy of zero logits is K ln 2") {
  Tensor logits = Tensor::zeros({5, 4});
  Tensor y = Tensor::constant({5, 4}, Eigen::ArrayXd::Zero(20));
  CHECK(multilabel_ce(logits, y).value() == doctest::Approx(4 * kLn2).epsilon(1e-14));
}

TEST_CASE("objectives: cross entropy saturates without overflow") {
  Tensor y1 = Tensor::constant({1, 1}, {1.0});
  const double hit = multilabel_ce(Tensor::constant({1, 1}, {40.0}), y1).value();
  CHECK(hit >= 0.0);
  CHECK(hit < 1e-15);
  const double miss = multilabel_ce(Tensor::constant({1, 1}, {-40.0}), y1).value();
  CHECK(miss == doctest::Approx(40.0).epsilon(1e-12));
  CHECK(std::isfinite(miss));
  CHECK_THROWS_AS(multilabel_ce(Tensor::zeros({1, 2}), Tensor::zeros({2, 1})), ShapeError);
  CHECK_THROWS_AS(
      multilabel_ce(Tensor::zeros({1, 1}), Tensor::constant({1, 1}, {0.25})), ValueError);
}

TEST_CASE("objectives: fresh model starts at the analytic loss with zero KL") {
  ModelConfig mc = small_config();
  VkdModel m = init_params(mc, 5);
  Batch b = small_batch(6, mc, 100);

  LossBreakdown vkd = vkd_loss(m, b, 1, 1, 0.77, 900, true);
  CHECK(vkd.kl == 0.0);
  CHECK(vkd.total_value() == doctest::Approx(2.0 * mc.n_classes * kLn2).epsilon(1e-12));
  CHECK(std::abs(vkd.total_value() - 2.0 * mc.n_classes * kLn2) < 1e-9);

  LossBreakdown cvi = cvi_loss(m, b, 1, 0.0, 900, true);
  CHECK(std::abs(cvi.total_value() - mc.n_classes * kLn2) < 1e-9);
  CHECK(cvi.text_ce == 0.0);
  CHECK(cvi.kl == 0.0);
}

TEST_CASE("objectives: breakdown composes to the total") {
  ModelConfig mc = small_config();
  VkdModel m = init_params(mc, 6);
  randomize_parameters(m, 61);
  Batch b = small_batch(5, mc, 101);
  LossBreakdown lb = vkd_loss(m, b, 2, 2, 0.4, 901, true);
  CHECK(lb.total_value() ==
        doctest::Approx(lb.image_ce + lb.text_ce + lb.beta * lb.kl).epsilon(1e-15));
  CHECK(lb.kl > 0.0);
}

TEST_CASE("objectives: beta zero removes the KL term exactly") {
  ModelConfig mc = small_config();
  VkdModel m = init_params(mc, 7);
  randomize_parameters(m, 62);
  Batch b = small_batch(4, mc, 102);
  LossBreakdown lb = vkd_loss(m, b, 1, 1, 0.0, 902, true);
  CHECK(lb.total_value() == lb.image_ce + lb.text_ce);
}

TEST_CASE("objectives: duplicated prior draws collapse to the single-draw loss") {
  ModelConfig mc = small_config();
  VkdModel m = init_params(mc, 8);
  randomize_parameters(m, 63);
  Batch b = small_batch(4, mc, 103);
  Mode mode{true, 903, 0};
  Tensor ei = gaussian_tensor({4, mc.latent_dim}, 71);
  Tensor et = gaussian_tensor({4, mc.latent_dim}, 72);
  LossBreakdown one = vkd_loss_with_eps(m, b, {ei}, {et}, 0.5, mode);
  LossBreakdown two = vkd_loss_with_eps(m, b, {ei, ei}, {et, et}, 0.5, mode);
  CHECK(one.total_value() == two.total_value());
  CHECK(one.image_ce == two.image_ce);
}

TEST_CASE("objectives: cvi trains no text parameter") {
  ModelConfig mc = small_config();
  VkdModel m = init_params(mc, 9);
  randomize_parameters(m, 64);
  Batch b = small_batch(4, mc, 104);
  LossBreakdown lb = cvi_loss(m, b, 1, 0.0, 904, true);
  for (auto& [name, p] : m.parameters()) p.zero_grad();
  backward(lb.total);
  for (auto& [name, p] : m.text_branch_parameters()) {
    INFO(name);
    CHECK(p.grad().abs().maxCoeff() == 0.0);
  }
  CHECK(m.image_encoder[0].weight.grad().abs().maxCoeff() > 0.0);
}

TEST_CASE("objectives: cvi equals the image term of the full objective") {
  ModelConfig mc = small_config();
  VkdModel m = init_params(mc, 10);
  randomize_parameters(m, 65);
  Batch b = small_batch(5, mc, 105);
  LossBreakdown full = vkd_loss(m, b, 2, 1, 0.9, 905, true);
  LossBreakdown img = cvi_loss(m, b, 2, 0.9, 905, true);
  CHECK(img.total_value() == full.image_ce);  // same noise stream, same masks
}

TEST_CASE("objectives: no-MI ablation drops text CE but keeps the KL gradient") {
  ModelConfig mc = small_config();
  VkdModel m = init_params(mc, 11);
  randomize_parameters(m, 66);
  Batch b = small_batch(4, mc, 106);
  LossBreakdown lb = vkd_no_mi_loss(m, b, 1, 1.0, 906, true);
  CHECK(lb.text_ce == 0.0);
  CHECK(lb.kl > 0.0);
  for (auto& [name, p] : m.parameters()) p.zero_grad();
  backward(lb.total);
  // the text head is unreachable; the posterior path still learns via the KL
  CHECK(m.text_head[0].weight.grad().abs().maxCoeff() == 0.0);
  CHECK(m.text_head[1].weight.grad().abs().maxCoeff() == 0.0);
  bool posterior_live = false;
  for (const auto& l : m.posterior_net)
    posterior_live = posterior_live || l.weight.grad().abs().maxCoeff() > 0.0;
  CHECK(posterior_live);
  CHECK(m.token_table.grad().abs().maxCoeff() > 0.0);
}

TEST_CASE("objectives: loss is a pure function of its seeds") {
  ModelConfig mc = small_config();
  VkdModel m = init_params(mc, 12);
  randomize_parameters(m, 67);
  Batch b = small_batch(6, mc, 107);
  LossBreakdown a = vkd_loss(m, b, 2, 2, 0.3, 907, true);
  LossBreakdown c = vkd_loss(m, b, 2, 2, 0.3, 907, true);
  CHECK(a.total_value() == c.total_value());
  CHECK(a.kl == c.kl);
  LossBreakdown d = vkd_loss(m, b, 2, 2, 0.3, 908, true);
  CHECK_FALSE(a.total_value() == d.total_value());
}

TEST_CASE("objectives: KL component is nonnegative at beta one") {
  ModelConfig mc = small_config();
  rng::Stream s(2029);
  for (int trial = 0; trial < 20; ++trial) {
    VkdModel m = init_params(mc, 100 + trial);
    randomize_parameters(m, 200 + trial);
    Batch b = small_batch(3, mc, 300 + trial);
    LossBreakdown lb = vkd_loss(m, b, 1, 1, 1.0, 400 + trial, true);
    CHECK(lb.kl >= 0.0);
  }
}

TEST_CASE("objectives: more Monte Carlo draws do not shift the expectation") {
  ModelConfig mc = small_config();
  mc.hidden = {6};
  mc.dropout = 0.0;
  VkdModel m = init_params(mc, 13);
  randomize_parameters(m, 68);
  Batch b = small_batch(2, mc, 108);
  const int n_seeds = 10000;
  double acc = 0.0, acc2 = 0.0;
  for (int i = 0; i < n_seeds; ++i) {
    const double d = vkd_loss(m, b, 8, 1, 0.5, 5000 + i, false).total_value() -
                     vkd_loss(m, b, 1, 1, 0.5, 5000 + i, false).total_value();
    acc += d;
    acc2 += d * d;
  }
  const double mean = acc / n_seeds;
  const double se =
      std::sqrt(std::max(0.0, (acc2 - n_seeds * mean * mean) / (n_seeds - 1)) / n_seeds);
  CHECK(std::abs(mean) < 3.0 * se + 1e-12);
}

TEST_CASE("objectives: empty batch is rejected") {
  ModelConfig mc = small_config();
  VkdModel m = init_params(mc, 14);
  Batch empty{Tensor::constant({0, mc.input_dim}, Eigen::ArrayXd(0)), Eigen::MatrixXi(0, 6),
              Tensor::constant({0, mc.n_classes}, Eigen::ArrayXd(0))};
  CHECK_THROWS_AS(vkd_loss(m, empty, 1, 1, 0.5, 1, true), ValueError);
}

TEST_CASE("objectives: full objective passes finite differences") {
  GradCheckResult res = full_objective_gradcheck(31337);
  INFO("max relative error ", res.max_rel_err);
  CHECK(res.max_rel_err < kGradCheckTol);
}

// Linear-Gaussian toy with a tractable marginal likelihood: x = Wz + noise,
// z ~ N(0, I2), noise ~ N(0, s2 I3).
TEST_CASE("objectives: VAE bound matches its closed form and stays below log Z") {
  Eigen::Matrix<double, 3, 2> w;
  w << 0.9, -0.3, 0.4, 1.1, -0.7, 0.2;
  const double s2 = 0.25;
  Eigen::Vector3d x0(0.6, -0.4, 1.0);

  Tensor wt = Tensor::constant({3, 2}, {0.9, -0.3, 0.4, 1.1, -0.7, 0.2});
  Tensor xt = Tensor::constant({3}, {0.6, -0.4, 1.0});
  const double log2pi = std::log(2.0 * std::numbers::pi);
  auto log_lik = [&](const Tensor& z) {
    Tensor diff = sub(xt, matmul(wt, z));
    return add_const(scale(sum(square(diff)), -1.0 / (2.0 * s2)),
                     -1.5 * (log2pi + std::log(s2)));
  };

  Tensor mq = Tensor::parameter({2}, Eigen::ArrayXd::Zero(2));
  mq.mutable_values() << 0.5, -0.2;
  Tensor lq = Tensor::parameter({2}, Eigen::ArrayXd::Zero(2));
  lq.mutable_values() << -0.7, -1.2;
  DiagonalGaussian q(mq, lq);

  // closed-form expected log-likelihood under q
  Eigen::Vector2d muq(0.5, -0.2);
  Eigen::Vector2d varq(std::exp(-0.7), std::exp(-1.2));
  double e_ll = -1.5 * (log2pi + std::log(s2));
  e_ll -= ((x0 - w * muq).squaredNorm() + varq(0) * w.col(0).squaredNorm() +
           varq(1) * w.col(1).squaredNorm()) /
          (2.0 * s2);
  const double kl = kl_divergence(q, standard_normal(2)).value();
  const double elbo_closed = e_ll - kl;

  // exact marginal: x ~ N(0, W W^T + s2 I)
  Eigen::Matrix3d cov = w * w.transpose() + s2 * Eigen::Matrix3d::Identity();
  const double log_z = -0.5 * (3.0 * log2pi + std::log(cov.determinant()) +
                               x0.dot(cov.ldlt().solve(x0)));
  CHECK(elbo_closed < log_z);

  const int n = 4000;
  double acc = 0.0, acc2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = vae_elbo(q, log_lik, gaussian_tensor({2}, 7000 + i)).value();
    acc += v;
    acc2 += v * v;
  }
  const double mean = acc / n;
  const double se = std::sqrt(std::max(0.0, (acc2 - n * mean * mean) / (n - 1)) / n);
  CHECK(std::abs(mean - elbo_closed) < 3.0 * se);

  // the KL term vanishes for a standard-normal posterior
  DiagonalGaussian std_q(Tensor::zeros({2}), Tensor::zeros({2}));
  Tensor eps = gaussian_tensor({2}, 1);
  const double elbo_std = vae_elbo(std_q, log_lik, eps).value();
  const double ll_only = log_lik(reparam_sample(std_q, eps).z).value();
  CHECK(elbo_std == ll_only);

  // and the whole bound is differentiable
  auto f = [&] { return vae_elbo(q, log_lik, gaussian_tensor({2}, 99)); };
  CHECK(finite_difference_check(f, {mq, lq}, 1e-5) < 1e-4);
}
