#include "vkd/model.hpp"

#include <cmath>

#include "vkd/rng.hpp"

namespace vkd {

namespace {

// Dropout site bases; combined with the layer index they give every dropout
// call a stable identity across runs and resumes.
constexpr std::uint64_t kSiteTextMlp = 200;
constexpr std::uint64_t kSitePrior = 300;
constexpr std::uint64_t kSitePosterior = 400;
constexpr std::uint64_t kSiteImageHead = 500;
constexpr std::uint64_t kSiteTextHead = 600;

Tensor apply_linear(const Linear& l, const Tensor& x) { return add(matmul(x, l.weight), l.bias); }

Tensor activate(Activation a, const Tensor& x) {
  return a == Activation::relu ? relu(x) : vkd::tanh(x);
}

Tensor drop(const Tensor& x, const ModelConfig& cfg, const Mode& mode, std::uint64_t site) {
  return dropout(x, cfg.dropout, mode.train,
                 rng::derive(mode.seed, {rng::kDropout, site, static_cast<std::uint64_t>(mode.step)}));
}

Linear glorot_linear(std::int64_t in, std::int64_t out, rng::Stream& s) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Eigen::ArrayXd w(in * out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = (2.0 * s.next_uniform() - 1.0) * limit;
  return Linear{Tensor::parameter({in, out}, std::move(w)),
                Tensor::parameter({out}, Eigen::ArrayXd::Zero(out))};
}

Linear zero_linear(std::int64_t in, std::int64_t out) {
  return Linear{Tensor::parameter({in, out}, Eigen::ArrayXd::Zero(in * out)),
                Tensor::parameter({out}, Eigen::ArrayXd::Zero(out))};
}

// Hidden stack + zero-initialized final projection.
std::vector<Linear> inference_net(std::int64_t in, const std::vector<int>& hidden,
                                  std::int64_t out, rng::Stream& s) {
  std::vector<Linear> net;
  std::int64_t cur = in;
  for (int h : hidden) {
    net.push_back(glorot_linear(cur, h, s));
    cur = h;
  }
  net.push_back(zero_linear(cur, out));
  return net;
}

void push_params(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                 const std::vector<Linear>& net) {
  for (std::size_t i = 0; i < net.size(); ++i) {
    out.emplace_back(prefix + "." + std::to_string(i) + ".w", net[i].weight);
    out.emplace_back(prefix + "." + std::to_string(i) + ".b", net[i].bias);
  }
}

std::vector<Linear> clone_net(const std::vector<Linear>& net) {
  std::vector<Linear> out;
  out.reserve(net.size());
  for (const Linear& l : net)
    out.push_back(Linear{Tensor::parameter(l.weight.shape(), l.weight.values()),
                         Tensor::parameter(l.bias.shape(), l.bias.values())});
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  if (input_dim < 1 || vocab < 1 || embed_dim < 1 || feature_dim < 1 || latent_dim < 1 ||
      n_classes < 1)
    throw ConfigError("model: all dimensions must be >= 1");
  if (hidden.empty()) throw ConfigError("model: hidden sizes must be non-empty");
  for (int h : hidden)
    if (h < 1) throw ConfigError("model: hidden sizes must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must be in [0,1)");
}

VkdModel init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  rng::Stream s(rng::derive(seed, {rng::kInitParams}));
  VkdModel m;
  m.cfg = cfg;

  m.image_encoder.push_back(glorot_linear(cfg.input_dim, cfg.hidden[0], s));
  m.image_encoder.push_back(glorot_linear(cfg.hidden[0], cfg.feature_dim, s));

  Eigen::ArrayXd table(static_cast<std::int64_t>(cfg.vocab) * cfg.embed_dim);
  const double tlim = std::sqrt(6.0 / static_cast<double>(cfg.vocab + cfg.embed_dim));
  for (Eigen::Index i = 0; i < table.size(); ++i)
    table(i) = (2.0 * s.next_uniform() - 1.0) * tlim;
  m.token_table = Tensor::parameter({cfg.vocab, cfg.embed_dim}, std::move(table));

  m.text_mlp.push_back(glorot_linear(cfg.embed_dim, cfg.hidden[0], s));
  m.text_mlp.push_back(glorot_linear(cfg.hidden[0], cfg.feature_dim, s));

  m.prior_net = inference_net(cfg.feature_dim, cfg.hidden, 2 * cfg.latent_dim, s);
  m.posterior_net = inference_net(cfg.feature_dim, cfg.hidden, 2 * cfg.latent_dim, s);

  m.image_head.push_back(glorot_linear(cfg.feature_dim + cfg.latent_dim, cfg.hidden[0], s));
  m.image_head.push_back(zero_linear(cfg.hidden[0], cfg.n_classes));
  m.text_head.push_back(glorot_linear(cfg.latent_dim, cfg.hidden[0], s));
  m.text_head.push_back(zero_linear(cfg.hidden[0], cfg.n_classes));
  return m;
}

std::vector<std::pair<std::string, Tensor>> VkdModel::parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  push_params(out, "image_encoder", image_encoder);
  out.emplace_back("text.table", token_table);
  push_params(out, "text_mlp", text_mlp);
  push_params(out, "prior", prior_net);
  push_params(out, "posterior", posterior_net);
  push_params(out, "image_head", image_head);
  push_params(out, "text_head", text_head);
  return out;
}

std::vector<std::pair<std::string, Tensor>> VkdModel::text_branch_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("text.table", token_table);
  push_params(out, "text_mlp", text_mlp);
  push_params(out, "posterior", posterior_net);
  push_params(out, "text_head", text_head);
  return out;
}

VkdModel VkdModel::clone() const {
  VkdModel m;
  m.cfg = cfg;
  m.image_encoder = clone_net(image_encoder);
  m.token_table = Tensor::parameter(token_table.shape(), token_table.values());
  m.text_mlp = clone_net(text_mlp);
  m.prior_net = clone_net(prior_net);
  m.posterior_net = clone_net(posterior_net);
  m.image_head = clone_net(image_head);
  m.text_head = clone_net(text_head);
  return m;
}

namespace {

DiagonalGaussian split_gaussian(const Tensor& raw, std::int64_t latent_dim) {
  Tensor mu = slice(raw, 1, 0, latent_dim);
  Tensor lv = slice(raw, 1, latent_dim, latent_dim);
  return DiagonalGaussian(mu, lv);
}

}  // namespace

ImageEncoding encode_image(const VkdModel& m, const Tensor& images, const Mode& mode) {
  if (images.rank() != 2 || images.dim(1) != m.cfg.input_dim)
    throw ShapeError("encode_image: expected [N," + std::to_string(m.cfg.input_dim) +
                     "] images, got " + shape_str(images.shape()));
  // Backbone stand-in: no dropout here.
  Tensor h = images;
  for (const Linear& l : m.image_encoder) h = activate(m.cfg.activation, apply_linear(l, h));
  Tensor feature = h;

  Tensor t = feature;
  for (std::size_t i = 0; i + 1 < m.prior_net.size(); ++i)
    t = drop(activate(m.cfg.activation, apply_linear(m.prior_net[i], t)), m.cfg, mode,
             kSitePrior + i);
  Tensor raw = apply_linear(m.prior_net.back(), t);
  return ImageEncoding{feature, split_gaussian(raw, m.cfg.latent_dim)};
}

DiagonalGaussian encode_text(const VkdModel& m, const Eigen::MatrixXi& tokens, const Mode& mode) {
  const auto n = tokens.rows(), s = tokens.cols();
  // Pooling matrix: row i holds count(token v in non-pad positions)/n_nonpad,
  // so masked mean-pooling becomes one matmul against the embedding table.
  // Integer counts divided once keep the pooling exactly invariant under
  // permutation and duplication of the non-padding tokens.
  Eigen::ArrayXd pool = Eigen::ArrayXd::Zero(n * m.cfg.vocab);
  for (Eigen::Index i = 0; i < n; ++i) {
    int nonpad = 0;
    for (Eigen::Index j = 0; j < s; ++j) {
      const int t = tokens(i, j);
      if (t < 0 || t >= m.cfg.vocab)
        throw ValueError("encode_text: token " + std::to_string(t) + " out of range [0," +
                         std::to_string(m.cfg.vocab) + ") at sample " + std::to_string(i) +
                         " position " + std::to_string(j));
      if (t != 0) {
        ++nonpad;
        pool(i * m.cfg.vocab + t) += 1.0;
      }
    }
    if (nonpad == 0) continue;  // all padding pools to the zero vector
    pool.segment(i * m.cfg.vocab, m.cfg.vocab) /= static_cast<double>(nonpad);
  }
  Tensor pooled = matmul(Tensor::constant({n, m.cfg.vocab}, std::move(pool)), m.token_table);

  Tensor h = pooled;
  for (std::size_t i = 0; i < m.text_mlp.size(); ++i)
    h = drop(activate(m.cfg.activation, apply_linear(m.text_mlp[i], h)), m.cfg, mode,
             kSiteTextMlp + i);

  Tensor t = h;
  for (std::size_t i = 0; i + 1 < m.posterior_net.size(); ++i)
    t = drop(activate(m.cfg.activation, apply_linear(m.posterior_net[i], t)), m.cfg, mode,
             kSitePosterior + i);
  Tensor raw = apply_linear(m.posterior_net.back(), t);
  return split_gaussian(raw, m.cfg.latent_dim);
}

Tensor classify_image_branch(const VkdModel& m, const Tensor& feature, const Tensor& z,
                             const Mode& mode) {
  if (z.rank() != 2 || z.dim(1) != m.cfg.latent_dim)
    throw ShapeError("classify_image_branch: expected [N," + std::to_string(m.cfg.latent_dim) +
                     "] latents, got " + shape_str(z.shape()));
  Tensor x = concat(feature, z, 1);
  Tensor h = drop(activate(m.cfg.activation, apply_linear(m.image_head[0], x)), m.cfg, mode,
                  kSiteImageHead);
  return apply_linear(m.image_head[1], h);
}

Tensor classify_text_branch(const VkdModel& m, const Tensor& z, const Mode& mode) {
  if (z.rank() != 2 || z.dim(1) != m.cfg.latent_dim)
    throw ShapeError("classify_text_branch: expected [N," + std::to_string(m.cfg.latent_dim) +
                     "] latents, got " + shape_str(z.shape()));
  Tensor h = drop(activate(m.cfg.activation, apply_linear(m.text_head[0], z)), m.cfg, mode,
                  kSiteTextHead);
  return apply_linear(m.text_head[1], h);
}

}  // namespace vkd
