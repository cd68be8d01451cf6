// Command-line front end: dataset generation and splitting, training,
// evaluation, inference, latent export, and the gradient self-test.
//
// Exit codes: 0 ok, 1 check failure, 2 usage/config error, 3 I/O error,
// 4 numeric abort during training.

#include <CLI11.hpp>

#include <array>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "vkd/config.hpp"
#include "vkd/data.hpp"
#include "vkd/gradcheck.hpp"
#include "vkd/inference.hpp"
#include "vkd/model.hpp"
#include "vkd/text.hpp"
#include "vkd/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

vkd::Config load_config(const std::string& path) {
  return path.empty() ? vkd::default_config() : vkd::parse_config_file(path);
}

int cmd_gen_data(const std::string& config_path, const std::string& out,
                 const std::string& seed_override) {
  vkd::Config cfg = load_config(config_path);
  if (!seed_override.empty()) vkd::set_config_key(cfg, "seed", seed_override);
  vkd::Dataset ds = vkd::generate(cfg.gen);
  vkd::write_dataset(ds, out);
  std::cout << "wrote " << ds.size() << " samples to " << out << "\n";
  std::cout << "class prevalence:";
  for (int k = 0; k < ds.n_classes; ++k) {
    const double p = ds.size() ? ds.labels.col(k).cast<double>().mean() : 0.0;
    std::cout << ' ' << vkd::format_double(p);
  }
  std::cout << "\n";
  return kExitOk;
}

int cmd_split(const std::string& in, const std::string& out_train, const std::string& out_val,
              const std::string& out_test, const std::string& fractions, std::uint64_t seed) {
  std::array<double, 3> f{};
  std::stringstream ss(fractions);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= 3) throw vkd::ConfigError("split: expected three fractions");
    f[i++] = vkd::parse_double(item, "fractions");
  }
  if (i != 3) throw vkd::ConfigError("split: expected three fractions");
  vkd::Dataset ds = vkd::read_dataset(in);
  vkd::SplitResult parts = vkd::split(ds, f, seed);
  vkd::write_dataset(parts.train, out_train);
  vkd::write_dataset(parts.val, out_val);
  vkd::write_dataset(parts.test, out_test);
  std::cout << "split " << ds.size() << " -> " << parts.train.size() << "/" << parts.val.size()
            << "/" << parts.test.size() << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& val_path, const std::string& out,
              const std::string& log_path) {
  vkd::Config cfg = load_config(config_path);
  vkd::Dataset train_ds = vkd::read_dataset(data_path);
  vkd::Dataset val_ds = vkd::read_dataset(val_path);
  vkd::VkdModel model = vkd::init_params(cfg.model, cfg.train.seed);
  vkd::TrainState st = vkd::train(std::move(model), train_ds, val_ds, cfg.train);
  vkd::save_checkpoint(st, cfg, out);
  if (!log_path.empty()) vkd::write_train_log_csv(st.log, log_path);
  std::cout << "epochs " << st.epoch << ", final val macro AUC "
            << vkd::format_double(st.best_auc) << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& data_path, int samples,
             const std::string& report_path) {
  vkd::Config cfg;
  vkd::TrainState st = vkd::load_checkpoint(model_path, cfg);
  vkd::Dataset ds = vkd::read_dataset(data_path);
  vkd::EvalReport rep = vkd::evaluate(st.best_model, ds, samples, cfg.train.seed);
  std::cout << "class,auc\n";
  for (std::size_t k = 0; k < rep.class_auc.size(); ++k)
    std::cout << (k + 1) << ','
              << (rep.class_auc[k] ? vkd::format_double(*rep.class_auc[k]) : "-") << "\n";
  std::cout << "macro," << vkd::format_double(rep.macro_auc) << "\n";
  if (!report_path.empty()) vkd::write_report_csv(rep, report_path);
  return kExitOk;
}

int cmd_infer(const std::string& model_path, const std::string& data_path, int samples,
              const std::string& out) {
  vkd::Config cfg;
  vkd::TrainState st = vkd::load_checkpoint(model_path, cfg);
  vkd::Dataset ds = vkd::read_dataset(data_path);
  vkd::Prediction pred = vkd::predict(st.best_model, ds.images, samples, cfg.train.seed);
  vkd::write_predictions_csv(pred.probs, out);
  std::cout << "wrote " << pred.probs.rows() << " predictions to " << out << "\n";
  return kExitOk;
}

int cmd_export_latents(const std::string& model_path, const std::string& data_path,
                       const std::string& out) {
  vkd::Config cfg;
  vkd::TrainState st = vkd::load_checkpoint(model_path, cfg);
  vkd::Dataset ds = vkd::read_dataset(data_path);
  vkd::export_latents(st.best_model, ds, out);
  std::cout << "wrote " << ds.size() << " latent rows to " << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vkd: latent-variable distillation from a privileged text view"};
  app.require_subcommand(1);
  app.footer(vkd::config_help());

  std::string config_path, out, data_path, val_path, log_path, report_path, seed_str;
  std::string in_path, out_train, out_val, out_test, fractions = "0.8,0.1,0.1";
  std::uint64_t split_seed = 7;
  int samples = vkd::kDefaultInferSamples;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic paired-view dataset");
  gen->add_option("--out", out, "output VKDS file")->required();
  gen->add_option("--config", config_path, "key=value config file");
  gen->add_option("--seed", seed_str, "override the config seed");

  auto* spl = app.add_subcommand("split", "split a VKDS file into train/val/test");
  spl->add_option("--in", in_path, "input VKDS file")->required();
  spl->add_option("--out-train", out_train, "train output")->required();
  spl->add_option("--out-val", out_val, "val output")->required();
  spl->add_option("--out-test", out_test, "test output")->required();
  spl->add_option("--fractions", fractions, "three comma-separated fractions summing to 1");
  spl->add_option("--seed", split_seed, "shuffle seed");

  auto* tr = app.add_subcommand("train", "train a model; writes checkpoint and CSV log");
  tr->add_option("--data", data_path, "training VKDS file")->required();
  tr->add_option("--val", val_path, "validation VKDS file")->required();
  tr->add_option("--config", config_path, "key=value config file");
  tr->add_option("--out", out, "checkpoint output path")->required();
  tr->add_option("--log", log_path, "training log CSV path");

  auto* ev = app.add_subcommand("eval", "per-class AUC of a checkpoint on a dataset");
  ev->add_option("--data", data_path, "VKDS file")->required();
  ev->add_option("--model", in_path, "checkpoint path")->required();
  ev->add_option("--samples", samples, "Monte Carlo draws from the conditional prior");
  ev->add_option("--report", report_path, "report CSV output path");

  auto* inf = app.add_subcommand("infer", "write per-sample class probabilities");
  inf->add_option("--data", data_path, "VKDS file")->required();
  inf->add_option("--model", in_path, "checkpoint path")->required();
  inf->add_option("--samples", samples, "Monte Carlo draws from the conditional prior");
  inf->add_option("--out", out, "predictions CSV output path")->required();

  auto* ex = app.add_subcommand("export-latents", "write prior means plus labels as CSV");
  ex->add_option("--data", data_path, "VKDS file")->required();
  ex->add_option("--model", in_path, "checkpoint path")->required();
  ex->add_option("--out", out, "latent CSV output path")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every op family");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, out, seed_str);
    if (spl->parsed()) return cmd_split(in_path, out_train, out_val, out_test, fractions, split_seed);
    if (tr->parsed()) return cmd_train(config_path, data_path, val_path, out, log_path);
    if (ev->parsed()) return cmd_eval(in_path, data_path, samples, report_path);
    if (inf->parsed()) return cmd_infer(in_path, data_path, samples, out);
    if (ex->parsed()) return cmd_export_latents(in_path, data_path, out);
    if (gc->parsed()) return vkd::run_gradcheck(std::cout);
  } catch (const vkd::TrainAbort& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const vkd::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const vkd::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const vkd::ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const vkd::ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheckFailure;
  }
  return kExitConfig;
}
