#pragma once

// Batched Adam training with cyclical KL annealing, image-path validation,
// relative-improvement early stopping, CSV logging, and text checkpoints that
// replay bitwise on resume.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vkd/data.hpp"
#include "vkd/model.hpp"
#include "vkd/objectives.hpp"

namespace vkd {

struct Config;  // full flat configuration; defined in config.hpp

struct TrainConfig {
  Objective objective = Objective::vkd;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 64;
  int max_epochs = 40;
  int mc_m = 1;  // prior draws per step
  int mc_l = 1;  // posterior draws per step
  double anneal_ramp = 0.5;
  int anneal_cycles = 4;
  double early_stop_tolerance = 0.01;  // relative val-AUC improvement that resets patience
  int patience = 5;                    // epochs without such improvement before stopping
  std::uint64_t seed = 7;
  int latent_dim = 32;

  void validate() const;
};

struct TrainLogRow {
  int epoch = 0;
  long long t = 0;  // global batch iteration at epoch end
  double beta = 0.0;
  double train_total = 0.0;
  double train_image_ce = 0.0;
  double train_text_ce = 0.0;
  double train_kl = 0.0;
  double val_ce = 0.0;
  double val_auc = 0.0;
  double wall_ms = 0.0;  // the one nondeterministic column
};

struct AdamState {
  std::vector<Eigen::ArrayXd> m, v;
};

// One bias-corrected Adam update; t is the 1-based update count.
void adam_step(const std::vector<std::pair<std::string, Tensor>>& params, AdamState& s,
               long long t, const TrainConfig& cfg);

struct TrainState {
  VkdModel model;       // current parameters
  AdamState opt;
  long long step = 0;   // global batch iteration, drives the anneal schedule
  int epoch = 0;        // completed epochs
  VkdModel best_model;  // highest-val-AUC snapshot; what training returns
  double best_auc = -1.0;
  double sig_auc = -1.0;  // last val AUC that counted as a significant improvement
  int sig_epoch = 0;
  std::vector<TrainLogRow> log;  // rows appended by this process only
};

TrainState make_train_state(VkdModel model, const TrainConfig& cfg);

// Runs epochs until early stop or cfg.max_epochs; resumable from a loaded
// state. Seeds are derived from (cfg.seed, epoch/step counters) only, so a
// resumed run replays the uninterrupted one bitwise.
void run_training(TrainState& st, const Dataset& train_ds, const Dataset& val_ds,
                  const TrainConfig& cfg);

// Convenience: fresh state + full run.
TrainState train(VkdModel model, const Dataset& train_ds, const Dataset& val_ds,
                 const TrainConfig& cfg);

void write_train_log_csv(const std::vector<TrainLogRow>& log, const std::string& path);

// Text checkpoint: version line, full config as key=value pairs, then named
// tensors (parameters, Adam moments as .m/.v, best.* snapshot, meta.*
// bookkeeping scalars), and a final step=<t> line. Written atomically.
void save_checkpoint(const TrainState& st, const Config& cfg, const std::string& path);
TrainState load_checkpoint(const std::string& path, Config& out_config);

}  // namespace vkd
