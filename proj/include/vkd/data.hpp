#pragma once

// Synthetic paired-modality data. Each sample couples a noisy linear "image"
// view of a hidden concept vector with a token-sequence "text" view that
// carries near-direct label evidence (reserved finding tokens), mirroring the
// asymmetry between scans and clinician-written reports. Includes the VKDS
// text format and seeded splitting.

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vkd/errors.hpp"

namespace vkd {

struct GenSpec {
  std::int64_t n_samples = 6000;
  int concept_dim = 8;
  int input_dim = 16;   // width of the image view
  int seq_len = 32;     // fixed token-sequence length, 0-padded
  int vocab = 256;      // token ids in [0, vocab); 0 = padding, 1..n_classes = findings
  int n_classes = 6;
  double image_noise = 2.0;       // sigma of the additive image noise
  double text_keyword_prob = 0.9; // chance an active label emits its finding token
  std::uint64_t seed = 7;

  void validate() const;
};

struct Dataset {
  int input_dim = 0;
  int seq_len = 0;
  int vocab = 0;
  int n_classes = 0;
  Eigen::MatrixXd images;  // n x input_dim
  Eigen::MatrixXi tokens;  // n x seq_len
  Eigen::MatrixXi labels;  // n x n_classes, values in {0,1}

  std::int64_t size() const { return images.rows(); }
  bool operator==(const Dataset& o) const;
};

// One sample's worth of views; convenience for tests and row-wise checks.
struct PairedSample {
  Eigen::VectorXd image;
  Eigen::VectorXi tokens;
  Eigen::VectorXi labels;
};
PairedSample sample_at(const Dataset& ds, std::int64_t i);

// The seeded ground truth behind a spec: mixing matrix and label hyperplanes.
// Exposed so tests can compute Bayes-optimal scores.
struct TaskParams {
  Eigen::MatrixXd mixing;      // input_dim x concept_dim
  Eigen::MatrixXd hyperplanes; // n_classes x concept_dim
  Eigen::VectorXd offsets;     // n_classes (zero: balanced classes)
};
TaskParams task_parameters(const GenSpec& spec);

Dataset generate(const GenSpec& spec);

void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

struct SplitResult {
  Dataset train, val, test;
};
// Seeded permutation followed by a contiguous cut; fractions must sum to 1
// within 1e-9. Disjoint and exhaustive.
SplitResult split(const Dataset& ds, const std::array<double, 3>& fractions, std::uint64_t seed);

Dataset take_rows(const Dataset& ds, const std::vector<std::int64_t>& rows);

}  // namespace vkd
