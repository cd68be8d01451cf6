#pragma once

// Image-only prediction by Monte Carlo marginalization over the conditional
// prior, plus rank-based per-class ROC AUC evaluation. The predict signature
// takes no text input; the text branch cannot influence anything here.

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vkd/data.hpp"
#include "vkd/model.hpp"

namespace vkd {

inline constexpr int kDefaultInferSamples = 8;

struct Prediction {
  Eigen::MatrixXd probs;        // n x K, mean sigmoid over latent draws
  Eigen::MatrixXd latent_mean;  // n x latent_dim, the prior mean mu_I
};

// probability = (1/L) sum_l sigmoid(head(feature, mu + sigma .* eps_l)).
// Each eps_l is one standard-normal row shared by every sample, so results
// do not depend on batch composition or sample order.
Prediction predict(const VkdModel& m, const Eigen::MatrixXd& images, int n_samples,
                   std::uint64_t seed);

// predict() with explicit noise rows; one draw per entry.
Prediction predict_with_draws(const VkdModel& m, const Eigen::MatrixXd& images,
                              const std::vector<Eigen::VectorXd>& draws);

// The shared inference noise row for draw l; exposed so the averaging
// decomposition is reproducible from outside.
Eigen::VectorXd inference_eps(std::uint64_t seed, int draw, int latent_dim);

// Mann-Whitney AUC with half credit for ties; nullopt when labels are
// single-class (undefined rather than an error).
std::optional<double> auc(const std::vector<double>& scores, const std::vector<int>& labels01);

struct EvalReport {
  std::vector<std::optional<double>> class_auc;  // K entries, nullopt = undefined
  double macro_auc = 0.0;                        // mean over defined classes
  std::vector<int> undefined_classes;            // 0-based indices excluded
  std::int64_t n_samples = 0;
};

// Per-class AUC from a score matrix; errors only when every class is undefined.
EvalReport report_from_scores(const Eigen::MatrixXd& scores, const Eigen::MatrixXi& labels);

EvalReport evaluate(const VkdModel& m, const Dataset& ds, int n_samples, std::uint64_t seed);

// CSV: header sample_id,p_1..p_K; one row per sample.
void write_predictions_csv(const Eigen::MatrixXd& probs, const std::string& path);
// CSV: class,auc rows (1-based class ids; '-' for undefined) plus macro,<value>.
void write_report_csv(const EvalReport& rep, const std::string& path);
// CSV of prior means plus label columns, one row per sample.
void export_latents(const VkdModel& m, const Dataset& ds, const std::string& path);

}  // namespace vkd
