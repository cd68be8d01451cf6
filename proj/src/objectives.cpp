#include "vkd/objectives.hpp"

#include <cmath>

#include "vkd/rng.hpp"

namespace vkd {

double beta_at(const AnnealSchedule& s, std::int64_t t) {
  if (s.cycles < 1) throw ConfigError("anneal: cycles must be >= 1");
  if (s.batches_per_epoch < s.cycles)
    throw ConfigError("anneal: batches_per_epoch " + std::to_string(s.batches_per_epoch) +
                      " < cycles " + std::to_string(s.cycles));
  if (!(s.ramp_fraction > 0.0 && s.ramp_fraction <= 1.0))
    throw ConfigError("anneal: ramp_fraction must be in (0,1]");
  if (t < 1) throw ValueError("anneal: iteration t must be >= 1");

  const std::int64_t period = s.batches_per_epoch / s.cycles;  // floor
  const double tc = static_cast<double>(s.batches_per_epoch) / static_cast<double>(s.cycles);
  const double tau = static_cast<double>((t - 1) % period) / tc;
  if (tau > s.ramp_fraction) return 1.0;
  return std::min(1.0, tau / s.ramp_fraction);
}

Tensor multilabel_ce(const Tensor& logits, const Tensor& targets01) {
  if (logits.rank() != 2 || logits.shape() != targets01.shape())
    throw ShapeError("multilabel_ce: shape mismatch " + shape_str(logits.shape()) + " vs " +
                     shape_str(targets01.shape()));
  const auto& y = targets01.values();
  if (!((y == 0.0) || (y == 1.0)).all())
    throw ValueError("multilabel_ce: targets must be 0/1");
  const double inv_n = 1.0 / static_cast<double>(logits.dim(0));
  return scale(sum(sub(softplus(logits), mul(targets01, logits))), inv_n);
}

Batch make_batch(const Dataset& ds, const std::vector<std::int64_t>& rows) {
  const auto n = static_cast<std::int64_t>(rows.size());
  Eigen::ArrayXd img(n * ds.input_dim);
  Eigen::ArrayXd lab(n * ds.n_classes);
  Eigen::MatrixXi tok(n, ds.seq_len);
  for (std::int64_t i = 0; i < n; ++i) {
    for (int d = 0; d < ds.input_dim; ++d) img(i * ds.input_dim + d) = ds.images(rows[i], d);
    for (int k = 0; k < ds.n_classes; ++k)
      lab(i * ds.n_classes + k) = static_cast<double>(ds.labels(rows[i], k));
    tok.row(i) = ds.tokens.row(rows[i]);
  }
  return Batch{Tensor::constant({n, ds.input_dim}, std::move(img)), std::move(tok),
               Tensor::constant({n, ds.n_classes}, std::move(lab))};
}

Batch make_batch(const Dataset& ds) {
  std::vector<std::int64_t> rows(static_cast<std::size_t>(ds.size()));
  for (std::int64_t i = 0; i < ds.size(); ++i) rows[static_cast<std::size_t>(i)] = i;
  return make_batch(ds, rows);
}

namespace {

void check_batch(const char* op, const Batch& b) {
  if (b.images.dim(0) == 0) throw ValueError(std::string(op) + ": empty batch");
}

// Mean over MC draws of the image-branch cross entropy.
Tensor image_ce_term(const VkdModel& m, const Batch& b, const ImageEncoding& enc,
                     const std::vector<Tensor>& eps_image, const Mode& mode) {
  Tensor acc;
  for (const Tensor& eps : eps_image) {
    Tensor z = reparam_sample(enc.prior, eps).z;
    Tensor logits = classify_image_branch(m, enc.feature, z, mode);
    Tensor ce = multilabel_ce(logits, b.targets);
    acc = acc.defined() ? add(acc, ce) : ce;
  }
  return scale(acc, 1.0 / static_cast<double>(eps_image.size()));
}

Tensor text_ce_term(const VkdModel& m, const Batch& b, const DiagonalGaussian& posterior,
                    const std::vector<Tensor>& eps_text, const Mode& mode) {
  Tensor acc;
  for (const Tensor& eps : eps_text) {
    Tensor z = reparam_sample(posterior, eps).z;
    Tensor logits = classify_text_branch(m, z, mode);
    Tensor ce = multilabel_ce(logits, b.targets);
    acc = acc.defined() ? add(acc, ce) : ce;
  }
  return scale(acc, 1.0 / static_cast<double>(eps_text.size()));
}

std::vector<Tensor> draw_eps(std::int64_t n, std::int64_t dim, int count, std::uint64_t seed,
                             std::uint64_t tag) {
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    out.push_back(gaussian_tensor({n, dim}, rng::derive(seed, {tag, static_cast<std::uint64_t>(i)})));
  return out;
}

}  // namespace

LossBreakdown vkd_loss_with_eps(const VkdModel& m, const Batch& b,
                                const std::vector<Tensor>& eps_image,
                                const std::vector<Tensor>& eps_text, double beta,
                                const Mode& mode) {
  check_batch("vkd_loss", b);
  if (eps_image.empty() || eps_text.empty())
    throw ValueError("vkd_loss: need at least one Monte Carlo sample per branch");

  ImageEncoding enc = encode_image(m, b.images, mode);
  DiagonalGaussian posterior = encode_text(m, b.tokens, mode);

  Tensor image_ce = image_ce_term(m, b, enc, eps_image, mode);
  Tensor text_ce = text_ce_term(m, b, posterior, eps_text, mode);
  const double inv_n = 1.0 / static_cast<double>(b.size());
  Tensor kl = scale(kl_divergence(posterior, enc.prior), inv_n);

  Tensor total = add(add(image_ce, text_ce), scale(kl, beta));
  return LossBreakdown{total, image_ce.value(), text_ce.value(), kl.value(), beta};
}

LossBreakdown vkd_loss(const VkdModel& m, const Batch& b, int mc_m, int mc_l, double beta,
                       std::uint64_t noise_seed, bool train) {
  check_batch("vkd_loss", b);
  if (mc_m < 1 || mc_l < 1) throw ValueError("vkd_loss: mc_m and mc_l must be >= 1");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ValueError("vkd_loss: beta must be in [0,1]");
  Mode mode{train, noise_seed, 0};
  auto eps_i = draw_eps(b.size(), m.cfg.latent_dim, mc_m, noise_seed, rng::kImageEps);
  auto eps_t = draw_eps(b.size(), m.cfg.latent_dim, mc_l, noise_seed, rng::kTextEps);
  return vkd_loss_with_eps(m, b, eps_i, eps_t, beta, mode);
}

LossBreakdown vkd_no_mi_loss(const VkdModel& m, const Batch& b, int mc_m, double beta,
                             std::uint64_t noise_seed, bool train) {
  check_batch("vkd_no_mi_loss", b);
  if (mc_m < 1) throw ValueError("vkd_no_mi_loss: mc_m must be >= 1");
  Mode mode{train, noise_seed, 0};
  ImageEncoding enc = encode_image(m, b.images, mode);
  DiagonalGaussian posterior = encode_text(m, b.tokens, mode);

  auto eps_i = draw_eps(b.size(), m.cfg.latent_dim, mc_m, noise_seed, rng::kImageEps);
  Tensor image_ce = image_ce_term(m, b, enc, eps_i, mode);
  const double inv_n = 1.0 / static_cast<double>(b.size());
  Tensor kl = scale(kl_divergence(posterior, enc.prior), inv_n);

  Tensor total = add(image_ce, scale(kl, beta));
  return LossBreakdown{total, image_ce.value(), 0.0, kl.value(), beta};
}

LossBreakdown cvi_loss(const VkdModel& m, const Batch& b, int mc_m, double beta,
                       std::uint64_t noise_seed, bool train) {
  check_batch("cvi_loss", b);
  if (mc_m < 1) throw ValueError("cvi_loss: mc_m must be >= 1");
  Mode mode{train, noise_seed, 0};
  ImageEncoding enc = encode_image(m, b.images, mode);
  auto eps_i = draw_eps(b.size(), m.cfg.latent_dim, mc_m, noise_seed, rng::kImageEps);
  Tensor image_ce = image_ce_term(m, b, enc, eps_i, mode);
  return LossBreakdown{image_ce, image_ce.value(), 0.0, 0.0, beta};
}

LossBreakdown objective_loss(Objective obj, const VkdModel& m, const Batch& b, int mc_m,
                             int mc_l, double beta, std::uint64_t noise_seed, bool train) {
  switch (obj) {
    case Objective::vkd: return vkd_loss(m, b, mc_m, mc_l, beta, noise_seed, train);
    case Objective::vkd_no_mi: return vkd_no_mi_loss(m, b, mc_m, beta, noise_seed, train);
    case Objective::cvi: return cvi_loss(m, b, mc_m, beta, noise_seed, train);
  }
  throw ValueError("objective_loss: unknown objective");
}

Tensor vae_elbo(const DiagonalGaussian& q, const std::function<Tensor(const Tensor&)>& log_lik,
                const Tensor& eps) {
  Tensor z = reparam_sample(q, eps).z;
  DiagonalGaussian prior(Tensor::zeros(q.shape()), Tensor::zeros(q.shape()));
  return sub(log_lik(z), kl_divergence(q, prior));
}

}  // namespace vkd
