#include "vkd/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "vkd/rng.hpp"
#include "vkd/text.hpp"

namespace vkd {

Eigen::VectorXd inference_eps(std::uint64_t seed, int draw, int latent_dim) {
  rng::Stream s(rng::derive(seed, {rng::kInferEps, static_cast<std::uint64_t>(draw)}));
  Eigen::VectorXd eps(latent_dim);
  for (int j = 0; j < latent_dim; ++j) eps(j) = s.next_gaussian();
  return eps;
}

Prediction predict_with_draws(const VkdModel& m, const Eigen::MatrixXd& images,
                              const std::vector<Eigen::VectorXd>& draws) {
  if (draws.empty()) throw ValueError("predict: need at least one draw");
  if (images.cols() != m.cfg.input_dim)
    throw ShapeError("predict: expected " + std::to_string(m.cfg.input_dim) +
                     "-wide images, got " + std::to_string(images.cols()));
  const auto n = images.rows();
  const int zd = m.cfg.latent_dim;

  Eigen::ArrayXd flat(n * m.cfg.input_dim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int d = 0; d < m.cfg.input_dim; ++d) flat(i * m.cfg.input_dim + d) = images(i, d);

  const Mode eval_mode{};  // dropout off
  ImageEncoding enc = encode_image(m, Tensor::constant({n, m.cfg.input_dim}, std::move(flat)),
                                   eval_mode);
  const Eigen::ArrayXd& mu = enc.prior.mu.values();
  Eigen::ArrayXd sigma = (0.5 * enc.prior.log_var.values()).exp();

  Eigen::MatrixXd probs = Eigen::MatrixXd::Zero(n, m.cfg.n_classes);
  for (const Eigen::VectorXd& eps : draws) {
    Eigen::ArrayXd z(n * zd);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int j = 0; j < zd; ++j) z(i * zd + j) = mu(i * zd + j) + sigma(i * zd + j) * eps(j);
    Tensor logits = classify_image_branch(m, enc.feature, Tensor::constant({n, zd}, std::move(z)),
                                          eval_mode);
    Tensor p = sigmoid(logits);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int k = 0; k < m.cfg.n_classes; ++k)
        probs(i, k) += p.values()(i * m.cfg.n_classes + k);
  }
  probs /= static_cast<double>(draws.size());

  Eigen::MatrixXd latent_mean(n, zd);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < zd; ++j) latent_mean(i, j) = mu(i * zd + j);
  return Prediction{std::move(probs), std::move(latent_mean)};
}

Prediction predict(const VkdModel& m, const Eigen::MatrixXd& images, int n_samples,
                   std::uint64_t seed) {
  if (n_samples < 1) throw ValueError("predict: n_samples must be >= 1");
  std::vector<Eigen::VectorXd> draws;
  draws.reserve(static_cast<std::size_t>(n_samples));
  for (int l = 0; l < n_samples; ++l) draws.push_back(inference_eps(seed, l, m.cfg.latent_dim));
  return predict_with_draws(m, images, draws);
}

std::optional<double> auc(const std::vector<double>& scores, const std::vector<int>& labels01) {
  if (scores.size() != labels01.size())
    throw ShapeError("auc: " + std::to_string(scores.size()) + " scores vs " +
                     std::to_string(labels01.size()) + " labels");
  std::int64_t np = 0, nn = 0;
  for (std::size_t i = 0; i < labels01.size(); ++i) {
    if (labels01[i] != 0 && labels01[i] != 1) throw ValueError("auc: labels must be 0/1");
    if (!std::isfinite(scores[i])) throw ValueError("auc: non-finite score");
    labels01[i] ? ++np : ++nn;
  }
  if (np == 0 || nn == 0) return std::nullopt;

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Rank sum of positives with midranks for ties: equals pairwise counting
  // with half credit, exactly (all quantities are dyadic rationals).
  double rank_sum = 0.0;
  std::size_t i = 0;
  const std::size_t n = idx.size();
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (labels01[idx[k]]) rank_sum += avg_rank;
    i = j;
  }
  const double u = rank_sum - static_cast<double>(np) * (static_cast<double>(np) + 1.0) / 2.0;
  return u / (static_cast<double>(np) * static_cast<double>(nn));
}

EvalReport report_from_scores(const Eigen::MatrixXd& scores, const Eigen::MatrixXi& labels) {
  if (scores.rows() != labels.rows() || scores.cols() != labels.cols())
    throw ShapeError("report_from_scores: score/label shape mismatch");
  EvalReport rep;
  rep.n_samples = scores.rows();
  const auto k = scores.cols();
  double acc = 0.0;
  int defined = 0;
  for (Eigen::Index c = 0; c < k; ++c) {
    std::vector<double> s(static_cast<std::size_t>(scores.rows()));
    std::vector<int> y(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      s[static_cast<std::size_t>(i)] = scores(i, c);
      y[static_cast<std::size_t>(i)] = labels(i, c);
    }
    auto a = auc(s, y);
    rep.class_auc.push_back(a);
    if (a) {
      acc += *a;
      ++defined;
    } else {
      rep.undefined_classes.push_back(static_cast<int>(c));
    }
  }
  if (defined == 0) throw ValueError("report_from_scores: AUC undefined for every class");
  rep.macro_auc = acc / static_cast<double>(defined);
  return rep;
}

EvalReport evaluate(const VkdModel& m, const Dataset& ds, int n_samples, std::uint64_t seed) {
  if (ds.size() == 0) throw ValueError("evaluate: empty dataset");
  Prediction pred = predict(m, ds.images, n_samples, seed);
  return report_from_scores(pred.probs, ds.labels);
}

void write_predictions_csv(const Eigen::MatrixXd& probs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_predictions_csv: cannot open '" + path + "'");
  out << "sample_id";
  for (Eigen::Index k = 0; k < probs.cols(); ++k) out << ",p_" << (k + 1);
  out << "\n";
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    out << i;
    for (Eigen::Index k = 0; k < probs.cols(); ++k) out << ',' << format_double(probs(i, k));
    out << "\n";
  }
  if (!out) throw IoError("write_predictions_csv: write failed on '" + path + "'");
}

void write_report_csv(const EvalReport& rep, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_report_csv: cannot open '" + path + "'");
  out << "class,auc\n";
  for (std::size_t k = 0; k < rep.class_auc.size(); ++k) {
    out << (k + 1) << ',';
    out << (rep.class_auc[k] ? format_double(*rep.class_auc[k]) : "-");
    out << "\n";
  }
  out << "macro," << format_double(rep.macro_auc) << "\n";
  if (!out) throw IoError("write_report_csv: write failed on '" + path + "'");
}

void export_latents(const VkdModel& m, const Dataset& ds, const std::string& path) {
  if (ds.size() == 0) throw ValueError("export_latents: empty dataset");
  Prediction pred = predict(m, ds.images, 1, 0);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("export_latents: cannot open '" + path + "'");
  for (int j = 0; j < m.cfg.latent_dim; ++j) out << (j ? "," : "") << "z_" << (j + 1);
  for (int k = 0; k < ds.n_classes; ++k) out << ",y_" << (k + 1);
  out << "\n";
  for (Eigen::Index i = 0; i < pred.latent_mean.rows(); ++i) {
    for (int j = 0; j < m.cfg.latent_dim; ++j)
      out << (j ? "," : "") << format_double(pred.latent_mean(i, j));
    for (int k = 0; k < ds.n_classes; ++k) out << ',' << ds.labels(i, k);
    out << "\n";
  }
  if (!out) throw IoError("export_latents: write failed on '" + path + "'");
}

}  // namespace vkd
