#include "vkd/distributions.hpp"

#include <cmath>
#include <numbers>

#include "vkd/rng.hpp"

namespace vkd {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}
}  // namespace

DiagonalGaussian::DiagonalGaussian(Tensor mu_in, Tensor raw_log_var)
    : mu(std::move(mu_in)), log_var() {
  check_same_shape("DiagonalGaussian", mu, raw_log_var);
  log_var = clamp(raw_log_var, kLogVarMin, kLogVarMax);
}

DiagonalGaussian standard_normal(std::int64_t dim) {
  return DiagonalGaussian(Tensor::zeros({dim}), Tensor::zeros({dim}));
}

LatentSample reparam_sample(const DiagonalGaussian& d, const Tensor& eps) {
  check_same_shape("reparam_sample", d.mu, eps);
  Tensor sigma = exp(scale(d.log_var, 0.5));
  return LatentSample{add(d.mu, mul(sigma, eps)), eps};
}

Tensor kl_divergence(const DiagonalGaussian& q, const DiagonalGaussian& p) {
  check_same_shape("kl_divergence", q.mu, p.mu);
  // 0.5 * sum( lvp - lvq + exp(lvq - lvp) + (muq - mup)^2 * exp(-lvp) - 1 )
  Tensor dlv = sub(p.log_var, q.log_var);
  Tensor var_ratio = exp(sub(q.log_var, p.log_var));
  Tensor md = mul(square(sub(q.mu, p.mu)), exp(neg(p.log_var)));
  return scale(sum(add_const(add(add(dlv, var_ratio), md), -1.0)), 0.5);
}

Tensor log_prob(const DiagonalGaussian& d, const Tensor& z) {
  check_same_shape("log_prob", d.mu, z);
  Tensor md = mul(square(sub(z, d.mu)), exp(neg(d.log_var)));
  return scale(sum(add_const(add(d.log_var, md), kLog2Pi)), -0.5);
}

McEstimate mc_kl_estimate(const DiagonalGaussian& q, const DiagonalGaussian& p,
                          long long n_samples, std::uint64_t seed) {
  check_same_shape("mc_kl_estimate", q.mu, p.mu);
  if (n_samples < 1) throw ValueError("mc_kl_estimate: n_samples must be >= 1");

  // Plain double arithmetic: this is the oracle path, no graph involved.
  const Eigen::ArrayXd& mq = q.mu.values();
  const Eigen::ArrayXd& lq = q.log_var.values();
  const Eigen::ArrayXd& mp = p.mu.values();
  const Eigen::ArrayXd& lp = p.log_var.values();
  Eigen::ArrayXd sq = (0.5 * lq).exp();

  rng::Stream s(seed);
  const auto dim = mq.size();
  Eigen::ArrayXd z(dim);
  double acc = 0.0, acc2 = 0.0;
  for (long long i = 0; i < n_samples; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) z(j) = mq(j) + sq(j) * s.next_gaussian();
    double log_q = -0.5 * (static_cast<double>(dim) * kLog2Pi + lq.sum() +
                           ((z - mq).square() * (-lq).exp()).sum());
    double log_p = -0.5 * (static_cast<double>(dim) * kLog2Pi + lp.sum() +
                           ((z - mp).square() * (-lp).exp()).sum());
    const double w = log_q - log_p;
    acc += w;
    acc2 += w * w;
  }
  const double n = static_cast<double>(n_samples);
  const double mean = acc / n;
  double se = 0.0;
  if (n_samples > 1) {
    const double var = std::max(0.0, (acc2 - n * mean * mean) / (n - 1.0));
    se = std::sqrt(var / n);
  }
  return McEstimate{mean, se, n_samples};
}

Tensor gaussian_tensor(Shape shape, std::uint64_t seed) {
  rng::Stream s(seed);
  Eigen::ArrayXd v(shape_size(shape));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = s.next_gaussian();
  return Tensor::constant(std::move(shape), std::move(v));
}

}  // namespace vkd
