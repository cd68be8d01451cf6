#pragma once

// Training objectives: the distillation objective (image CE over prior draws,
// text CE over posterior draws, KL from posterior to conditional prior), its
// two ablations, the plain VAE bound used as a toolkit reference, and the
// cyclical annealing schedule for the KL weight.

#include <cstdint>
#include <functional>
#include <vector>

#include "vkd/data.hpp"
#include "vkd/distributions.hpp"
#include "vkd/model.hpp"
#include "vkd/tensor.hpp"

namespace vkd {

enum class Objective { vkd, vkd_no_mi, cvi };

// Piecewise-linear cyclical ramp for the KL weight. With batches_per_epoch T
// and cycles C, iteration t (1-based) maps to cycle position
// tau = mod(t-1, floor(T/C)) / (T/C); beta = tau/R for tau <= R, else 1.
struct AnnealSchedule {
  std::int64_t batches_per_epoch = 100;  // T
  int cycles = 4;                        // C, per epoch
  double ramp_fraction = 0.5;            // R, in (0,1]
};

double beta_at(const AnnealSchedule& s, std::int64_t t);

// Mean over the batch of the per-sample sum over classes of stable
// sigmoid cross entropy: sum_k [softplus(l) - y*l].
Tensor multilabel_ce(const Tensor& logits, const Tensor& targets01);

struct Batch {
  Tensor images;           // [N, D]
  Eigen::MatrixXi tokens;  // [N, S]
  Tensor targets;          // [N, K] in {0,1}
  std::int64_t size() const { return images.dim(0); }
};

Batch make_batch(const Dataset& ds, const std::vector<std::int64_t>& rows);
Batch make_batch(const Dataset& ds);

struct LossBreakdown {
  Tensor total;     // scalar root for backward()
  double image_ce = 0.0;
  double text_ce = 0.0;
  double kl = 0.0;  // batch mean of the per-sample closed-form KL
  double beta = 0.0;
  double total_value() const { return total.value(); }
};

// Full objective: image_ce + text_ce + beta * kl. Monte Carlo eps draws are
// derived deterministically from noise_seed; dropout is active when train.
LossBreakdown vkd_loss(const VkdModel& m, const Batch& b, int mc_m, int mc_l, double beta,
                       std::uint64_t noise_seed, bool train);

// Ablation: text-branch cross entropy removed; the KL still trains the
// posterior. image_ce + beta * kl.
LossBreakdown vkd_no_mi_loss(const VkdModel& m, const Batch& b, int mc_m, double beta,
                             std::uint64_t noise_seed, bool train);

// Ablation: image branch alone; no text pass, no KL.
LossBreakdown cvi_loss(const VkdModel& m, const Batch& b, int mc_m, double beta,
                       std::uint64_t noise_seed, bool train);

LossBreakdown objective_loss(Objective obj, const VkdModel& m, const Batch& b, int mc_m,
                             int mc_l, double beta, std::uint64_t noise_seed, bool train);

// Explicit-noise variants; vkd_loss() draws the eps tensors and defers here.
LossBreakdown vkd_loss_with_eps(const VkdModel& m, const Batch& b,
                                const std::vector<Tensor>& eps_image,
                                const std::vector<Tensor>& eps_text, double beta,
                                const Mode& mode);

// One-sample bound E[log p(x|z)] - KL[q || N(0,I)] with z reparameterized
// from eps; reference objective for validating the distribution toolkit.
Tensor vae_elbo(const DiagonalGaussian& q, const std::function<Tensor(const Tensor&)>& log_lik,
                const Tensor& eps);

}  // namespace vkd
