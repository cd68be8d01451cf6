#include "vkd/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "vkd/config.hpp"
#include "vkd/inference.hpp"
#include "vkd/rng.hpp"
#include "vkd/text.hpp"

namespace vkd {

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (max_epochs < 0) throw ConfigError("train: max_epochs must be >= 0");
  if (mc_m < 1 || mc_l < 1) throw ConfigError("train: mc_m and mc_l must be >= 1");
  if (!(early_stop_tolerance > 0.0 && early_stop_tolerance < 1.0))
    throw ConfigError("train: early_stop_tolerance must be in (0,1)");
  if (patience < 1) throw ConfigError("train: patience must be >= 1");
  if (!(anneal_ramp > 0.0 && anneal_ramp <= 1.0))
    throw ConfigError("train: anneal_ramp must be in (0,1]");
  if (anneal_cycles < 1) throw ConfigError("train: anneal_cycles must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("train: adam betas must be in [0,1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be > 0");
}

void adam_step(const std::vector<std::pair<std::string, Tensor>>& params, AdamState& s,
               long long t, const TrainConfig& cfg) {
  if (s.m.size() != params.size() || s.v.size() != params.size())
    throw ValueError("adam_step: state size mismatch");
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Eigen::ArrayXd& g = params[i].second.grad();
    s.m[i] = cfg.adam_beta1 * s.m[i] + (1.0 - cfg.adam_beta1) * g;
    s.v[i] = cfg.adam_beta2 * s.v[i] + (1.0 - cfg.adam_beta2) * g.square();
    Eigen::ArrayXd m_hat = s.m[i] / bc1;
    Eigen::ArrayXd v_hat = s.v[i] / bc2;
    Tensor p = params[i].second;
    p.mutable_values() -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
  }
}

TrainState make_train_state(VkdModel model, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.latent_dim != model.cfg.latent_dim)
    throw ConfigError("train: config latent_dim " + std::to_string(cfg.latent_dim) +
                      " != model latent_dim " + std::to_string(model.cfg.latent_dim));
  TrainState st;
  st.best_model = model.clone();
  st.model = std::move(model);
  auto params = st.model.parameters();
  st.opt.m.reserve(params.size());
  st.opt.v.reserve(params.size());
  for (const auto& [name, p] : params) {
    st.opt.m.push_back(Eigen::ArrayXd::Zero(p.size()));
    st.opt.v.push_back(Eigen::ArrayXd::Zero(p.size()));
  }
  return st;
}

namespace {

void check_dataset_dims(const char* which, const Dataset& ds, const ModelConfig& mc) {
  if (ds.size() == 0) throw ValueError(std::string("train: empty ") + which + " dataset");
  if (ds.input_dim != mc.input_dim || ds.n_classes != mc.n_classes || ds.vocab > mc.vocab)
    throw ShapeError(std::string("train: ") + which + " dataset (d=" +
                     std::to_string(ds.input_dim) + ", k=" + std::to_string(ds.n_classes) +
                     ", v=" + std::to_string(ds.vocab) + ") incompatible with model (d=" +
                     std::to_string(mc.input_dim) + ", k=" + std::to_string(mc.n_classes) +
                     ", v=" + std::to_string(mc.vocab) + ")");
}

double validation_ce(const Eigen::MatrixXd& probs, const Eigen::MatrixXi& labels) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    for (Eigen::Index k = 0; k < probs.cols(); ++k) {
      const double p = std::clamp(probs(i, k), 1e-12, 1.0 - 1e-12);
      acc -= labels(i, k) ? std::log(p) : std::log1p(-p);
    }
  return acc / static_cast<double>(probs.rows());
}

}  // namespace

void run_training(TrainState& st, const Dataset& train_ds, const Dataset& val_ds,
                  const TrainConfig& cfg) {
  cfg.validate();
  check_dataset_dims("train", train_ds, st.model.cfg);
  check_dataset_dims("val", val_ds, st.model.cfg);

  const std::int64_t n = train_ds.size();
  const std::int64_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const AnnealSchedule sched{batches_per_epoch, cfg.anneal_cycles, cfg.anneal_ramp};
  auto params = st.model.parameters();

  while (st.epoch < cfg.max_epochs && st.epoch - st.sig_epoch < cfg.patience) {
    const int epoch = st.epoch + 1;
    const auto wall0 = std::chrono::steady_clock::now();

    auto perm = rng::permutation(
        n, rng::derive(cfg.seed, {rng::kShuffle, static_cast<std::uint64_t>(epoch)}));

    double sum_total = 0.0, sum_ice = 0.0, sum_tce = 0.0, sum_kl = 0.0;
    double last_beta = 0.0;
    for (std::int64_t start = 0; start < n; start += cfg.batch_size) {
      ++st.step;
      const double beta = (cfg.objective == Objective::cvi) ? 0.0 : beta_at(sched, st.step);
      const std::int64_t len = std::min<std::int64_t>(cfg.batch_size, n - start);
      std::vector<std::int64_t> rows(perm.begin() + start, perm.begin() + start + len);
      Batch b = make_batch(train_ds, rows);

      const std::uint64_t noise =
          rng::derive(cfg.seed, {rng::kStepNoise, static_cast<std::uint64_t>(st.step)});
      LossBreakdown lb =
          objective_loss(cfg.objective, st.model, b, cfg.mc_m, cfg.mc_l, beta, noise, true);
      if (!std::isfinite(lb.total_value()))
        throw TrainAbort("non-finite loss at batch iteration " + std::to_string(st.step) +
                             ": total=" + format_double(lb.total_value()) +
                             " image_ce=" + format_double(lb.image_ce) +
                             " text_ce=" + format_double(lb.text_ce) +
                             " kl=" + format_double(lb.kl) + " beta=" + format_double(lb.beta),
                         st.step);

      for (auto& [name, p] : params) p.zero_grad();
      backward(lb.total);
      adam_step(params, st.opt, st.step, cfg);

      sum_total += lb.total_value();
      sum_ice += lb.image_ce;
      sum_tce += lb.text_ce;
      sum_kl += lb.kl;
      last_beta = beta;
    }

    // Validation through the image-only path; fixed noise keeps epochs comparable.
    Prediction pred = predict(st.model, val_ds.images, kDefaultInferSamples,
                              rng::derive(cfg.seed, {rng::kValNoise}));
    EvalReport rep = report_from_scores(pred.probs, val_ds.labels);
    const double val_ce = validation_ce(pred.probs, val_ds.labels);

    const auto wall1 = std::chrono::steady_clock::now();
    TrainLogRow row;
    row.epoch = epoch;
    row.t = st.step;
    row.beta = last_beta;
    const double nb = static_cast<double>(batches_per_epoch);
    row.train_total = sum_total / nb;
    row.train_image_ce = sum_ice / nb;
    row.train_text_ce = sum_tce / nb;
    row.train_kl = sum_kl / nb;
    row.val_ce = val_ce;
    row.val_auc = rep.macro_auc;
    row.wall_ms = std::chrono::duration<double, std::milli>(wall1 - wall0).count();
    st.log.push_back(row);
    st.epoch = epoch;

    if (rep.macro_auc > st.best_auc) {
      st.best_auc = rep.macro_auc;
      st.best_model = st.model.clone();
    }
    if (st.sig_auc < 0.0 || rep.macro_auc >= st.sig_auc * (1.0 + cfg.early_stop_tolerance)) {
      st.sig_auc = rep.macro_auc;
      st.sig_epoch = epoch;
    }
  }
}

TrainState train(VkdModel model, const Dataset& train_ds, const Dataset& val_ds,
                 const TrainConfig& cfg) {
  TrainState st = make_train_state(std::move(model), cfg);
  run_training(st, train_ds, val_ds, cfg);
  return st;
}

void write_train_log_csv(const std::vector<TrainLogRow>& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("train log: cannot open '" + path + "'");
  out << "epoch,t,beta,train_total,train_image_ce,train_text_ce,train_kl,val_ce,val_auc,"
         "wall_ms\n";
  for (const TrainLogRow& r : log) {
    out << r.epoch << ',' << r.t << ',' << format_double(r.beta) << ','
        << format_double(r.train_total) << ',' << format_double(r.train_image_ce) << ','
        << format_double(r.train_text_ce) << ',' << format_double(r.train_kl) << ','
        << format_double(r.val_ce) << ',' << format_double(r.val_auc) << ','
        << format_double(r.wall_ms) << "\n";
  }
  if (!out) throw IoError("train log: write failed on '" + path + "'");
}

// ---- checkpoints -----------------------------------------------------------

namespace {

void write_tensor(std::ofstream& out, const std::string& name, const Shape& shape,
                  const Eigen::ArrayXd& values) {
  out << name << ' ' << shape.size();
  for (auto d : shape) out << ' ' << d;
  out << "\n";
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (i) out << ' ';
    out << format_double(values(i));
  }
  out << "\n";
}

Eigen::ArrayXd scalar_array(double v) {
  Eigen::ArrayXd a(1);
  a(0) = v;
  return a;
}

struct RawTensor {
  Shape shape;
  Eigen::ArrayXd values;
};

const RawTensor& expect_tensor(const std::map<std::string, RawTensor>& raw,
                               const std::string& name, const std::string& path) {
  auto it = raw.find(name);
  if (it == raw.end()) throw IoError(path + ": checkpoint is missing tensor '" + name + "'");
  return it->second;
}

void assign_values(Tensor param, const std::string& name, const RawTensor& rt,
                   const std::string& path) {
  if (rt.shape != param.shape())
    throw IoError(path + ": checkpoint tensor '" + name + "' has shape " + shape_str(rt.shape) +
                  ", model expects " + shape_str(param.shape()));
  param.mutable_values() = rt.values;
}

}  // namespace

void save_checkpoint(const TrainState& st, const Config& cfg, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("checkpoint: cannot open '" + tmp + "'");
    out << "vkdc 1\n";
    bool first = true;
    for (const auto& [k, v] : to_kv(cfg)) {
      if (!first) out << ' ';
      out << k << '=' << v;
      first = false;
    }
    out << "\n";

    auto params = st.model.parameters();
    for (const auto& [name, p] : params) write_tensor(out, name, p.shape(), p.values());
    for (std::size_t i = 0; i < params.size(); ++i) {
      write_tensor(out, params[i].first + ".m", params[i].second.shape(), st.opt.m[i]);
      write_tensor(out, params[i].first + ".v", params[i].second.shape(), st.opt.v[i]);
    }
    for (const auto& [name, p] : st.best_model.parameters())
      write_tensor(out, "best." + name, p.shape(), p.values());
    write_tensor(out, "meta.epoch", {}, scalar_array(static_cast<double>(st.epoch)));
    write_tensor(out, "meta.best_val_auc", {}, scalar_array(st.best_auc));
    write_tensor(out, "meta.sig_val_auc", {}, scalar_array(st.sig_auc));
    write_tensor(out, "meta.sig_epoch", {}, scalar_array(static_cast<double>(st.sig_epoch)));
    out << "step=" << st.step << "\n";
    if (!out) throw IoError("checkpoint: write failed on '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::string& path, Config& out_config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "vkdc 1")
    throw IoError(path + ": expected header 'vkdc 1', got '" + line + "'");
  if (!std::getline(in, line)) throw IoError(path + ": missing config line");

  ConfigKv kv;
  for (auto field : split_fields(line)) {
    auto eq = field.find('=');
    if (eq == std::string_view::npos)
      throw IoError(path + ": bad config entry '" + std::string(field) + "'");
    kv.emplace_back(std::string(field.substr(0, eq)), std::string(field.substr(eq + 1)));
  }
  out_config = apply_overrides(default_config(), kv);

  std::map<std::string, RawTensor> raw;
  long long step = -1;
  while (std::getline(in, line)) {
    if (line.rfind("step=", 0) == 0) {
      step = parse_int(std::string_view(line).substr(5), path + ": step");
      break;
    }
    auto head = split_fields(line);
    if (head.size() < 2) throw IoError(path + ": bad tensor header '" + line + "'");
    std::string name(head[0]);
    const auto rank = parse_int(head[1], path + ": rank of " + name);
    if (rank < 0 || static_cast<std::size_t>(rank) + 2 != head.size())
      throw IoError(path + ": tensor '" + name + "' rank/extents mismatch");
    Shape shape;
    for (std::int64_t r = 0; r < rank; ++r)
      shape.push_back(parse_int(head[static_cast<std::size_t>(r) + 2], path + ": extent"));
    if (!std::getline(in, line)) throw IoError(path + ": missing values for '" + name + "'");
    auto fields = split_fields(line);
    if (static_cast<std::int64_t>(fields.size()) != shape_size(shape))
      throw IoError(path + ": tensor '" + name + "' expects " +
                    std::to_string(shape_size(shape)) + " values, found " +
                    std::to_string(fields.size()));
    Eigen::ArrayXd values(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i)
      values(static_cast<Eigen::Index>(i)) = parse_double(fields[i], path + ": value of " + name);
    if (!raw.emplace(name, RawTensor{std::move(shape), std::move(values)}).second)
      throw IoError(path + ": duplicate tensor '" + name + "'");
  }
  if (step < 0) throw IoError(path + ": missing final step= line");

  TrainState st = make_train_state(init_params(out_config.model, out_config.train.seed),
                                   out_config.train);
  auto params = st.model.parameters();
  std::size_t used = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, p] = params[i];
    assign_values(p, name, expect_tensor(raw, name, path), path);
    const RawTensor& m = expect_tensor(raw, name + ".m", path);
    const RawTensor& v = expect_tensor(raw, name + ".v", path);
    if (m.values.size() != p.size() || v.values.size() != p.size())
      throw IoError(path + ": optimizer moment size mismatch for '" + name + "'");
    st.opt.m[i] = m.values;
    st.opt.v[i] = v.values;
    used += 3;
  }
  for (const auto& [name, p] : st.best_model.parameters()) {
    assign_values(p, "best." + name, expect_tensor(raw, "best." + name, path), path);
    ++used;
  }
  st.epoch = static_cast<int>(expect_tensor(raw, "meta.epoch", path).values(0));
  st.best_auc = expect_tensor(raw, "meta.best_val_auc", path).values(0);
  st.sig_auc = expect_tensor(raw, "meta.sig_val_auc", path).values(0);
  st.sig_epoch = static_cast<int>(expect_tensor(raw, "meta.sig_epoch", path).values(0));
  used += 4;
  if (used != raw.size())
    throw IoError(path + ": checkpoint holds " + std::to_string(raw.size()) +
                  " tensors, expected " + std::to_string(used));
  st.step = step;
  return st;
}

}  // namespace vkd
