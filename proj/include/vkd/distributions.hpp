#pragma once

// Diagonal Gaussians over tensors: reparameterized sampling, log density, and
// the closed-form KL divergence used to align the text posterior with the
// image-conditional prior. All operations are differentiable through the
// distribution parameters; a Monte Carlo KL estimator serves as the oracle
// the closed form is tested against.

#include <cstdint>

#include "vkd/tensor.hpp"

namespace vkd {

// Networks emit unconstrained log-variance; it is clamped to this interval at
// construction so sigma stays positive and finite and the KL cannot blow up.
inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

struct DiagonalGaussian {
  Tensor mu;
  Tensor log_var;  // already clamped

  // Accepts rank-1 [Z] or batched rank-2 [N,Z] parameters.
  DiagonalGaussian(Tensor mu_in, Tensor raw_log_var);

  std::int64_t dim() const { return mu.shape().back(); }
  const Shape& shape() const { return mu.shape(); }
};

DiagonalGaussian standard_normal(std::int64_t dim);

struct LatentSample {
  Tensor z;
  Tensor eps;  // the standard-normal draw that produced z, kept for replay
};

// z = mu + exp(log_var/2) .* eps, differentiable w.r.t. mu and log_var.
LatentSample reparam_sample(const DiagonalGaussian& d, const Tensor& eps);

// sum_i [ log(sigma_p/sigma_q) + (sigma_q^2 + (mu_q - mu_p)^2) / (2 sigma_p^2) - 1/2 ],
// summed over every entry (batched inputs therefore sum over the batch too).
Tensor kl_divergence(const DiagonalGaussian& q, const DiagonalGaussian& p);

// Exact log density at z, summed over every entry.
Tensor log_prob(const DiagonalGaussian& d, const Tensor& z);

struct McEstimate {
  double estimate;
  double std_error;
  long long n;
};

// (1/n) sum [log q(z) - log p(z)] over z ~ q; rank-1 distributions only.
McEstimate mc_kl_estimate(const DiagonalGaussian& q, const DiagonalGaussian& p,
                          long long n_samples, std::uint64_t seed);

// Standard-normal draws shaped [n] or [rows, cols] from the given stream seed.
Tensor gaussian_tensor(Shape shape, std::uint64_t seed);

}  // namespace vkd
