#pragma once

// The two-branch latent-variable classifier. The image branch maps a feature
// vector to a conditional prior over the latent and classifies from the
// feature concatenated with a latent draw; the text branch pools a learned
// token embedding into a variational posterior and classifies from its latent
// alone. The text branch exists only at training time; prediction never
// touches it.

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vkd/distributions.hpp"
#include "vkd/tensor.hpp"

namespace vkd {

enum class Activation { relu, tanh };

struct ModelConfig {
  int input_dim = 16;
  int vocab = 256;
  int embed_dim = 32;
  int feature_dim = 32;
  int latent_dim = 32;
  int n_classes = 6;
  std::vector<int> hidden = {64, 64};  // inference-net hidden widths
  double dropout = 0.5;
  Activation activation = Activation::relu;

  void validate() const;
};

// Forward-pass context. Dropout masks are counter-seeded from
// (seed, site, step), so replaying a step reproduces them exactly.
struct Mode {
  bool train = false;
  std::uint64_t seed = 0;
  std::int64_t step = 0;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

struct VkdModel {
  ModelConfig cfg;
  std::vector<Linear> image_encoder;  // input_dim -> hidden[0] -> feature_dim
  Tensor token_table;                 // [vocab, embed_dim]
  std::vector<Linear> text_mlp;       // embed_dim -> hidden[0] -> feature_dim
  std::vector<Linear> prior_net;      // feature -> hidden... -> 2*latent
  std::vector<Linear> posterior_net;  // feature -> hidden... -> 2*latent
  std::vector<Linear> image_head;     // feature+latent -> hidden[0] -> n_classes
  std::vector<Linear> text_head;      // latent -> hidden[0] -> n_classes

  // Stable name -> tensor listing; the order defines checkpoint layout and
  // optimizer state indexing.
  std::vector<std::pair<std::string, Tensor>> parameters() const;
  std::vector<std::pair<std::string, Tensor>> text_branch_parameters() const;
  VkdModel clone() const;
};

// Glorot-uniform hidden layers, zero biases, and zero-initialized final
// projections, so a fresh model emits N(0,I) latents and 0.5 probabilities.
VkdModel init_params(const ModelConfig& cfg, std::uint64_t seed);

struct ImageEncoding {
  Tensor feature;          // [N, feature_dim]
  DiagonalGaussian prior;  // conditional prior p(z | image), batched
};

ImageEncoding encode_image(const VkdModel& m, const Tensor& images, const Mode& mode = {});

// tokens: [N, S] ids in [0, vocab), 0 = padding. Mean-pools embeddings over
// non-padding positions (all-padding rows pool to the zero vector).
DiagonalGaussian encode_text(const VkdModel& m, const Eigen::MatrixXi& tokens,
                             const Mode& mode = {});

Tensor classify_image_branch(const VkdModel& m, const Tensor& feature, const Tensor& z,
                             const Mode& mode = {});
Tensor classify_text_branch(const VkdModel& m, const Tensor& z, const Mode& mode = {});

}  // namespace vkd
