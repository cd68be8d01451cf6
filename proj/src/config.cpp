#include "vkd/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <unordered_set>

#include "vkd/text.hpp"

namespace vkd {

namespace {

int to_int(const std::string& key, const std::string& v, int lo) {
  std::int64_t x;
  try {
    x = parse_int(v, key);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  if (x < lo) throw ConfigError(key + ": must be >= " + std::to_string(lo));
  return static_cast<int>(x);
}

double to_dbl(const std::string& key, const std::string& v) {
  try {
    return parse_double(v, key);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw ConfigError(key + ": bad unsigned integer '" + v + "'");
  return x;
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(to_int(key, item, 1));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

std::string int_list_str(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

const char* objective_str(Objective o) {
  switch (o) {
    case Objective::vkd: return "vkd";
    case Objective::vkd_no_mi: return "vkd_no_mi";
    case Objective::cvi: return "cvi";
  }
  return "vkd";
}

struct KeyHandler {
  ConfigKeyInfo info;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

const std::vector<KeyHandler>& handlers() {
  static const std::vector<KeyHandler> h = {
      {{"n_samples", "6000", "samples to generate"},
       [](Config& c, const std::string& v) { c.gen.n_samples = to_int("n_samples", v, 0); },
       [](const Config& c) { return std::to_string(c.gen.n_samples); }},
      {{"concept_dim", "8", "hidden concept dimensionality behind both views"},
       [](Config& c, const std::string& v) { c.gen.concept_dim = to_int("concept_dim", v, 1); },
       [](const Config& c) { return std::to_string(c.gen.concept_dim); }},
      {{"input_dim", "16", "width of the image view"},
       [](Config& c, const std::string& v) {
         c.gen.input_dim = c.model.input_dim = to_int("input_dim", v, 1);
       },
       [](const Config& c) { return std::to_string(c.gen.input_dim); }},
      {{"seq_len", "32", "token sequence length (0-padded)"},
       [](Config& c, const std::string& v) { c.gen.seq_len = to_int("seq_len", v, 1); },
       [](const Config& c) { return std::to_string(c.gen.seq_len); }},
      {{"vocab", "256", "token vocabulary size; 0 is padding, 1..n_classes are findings"},
       [](Config& c, const std::string& v) {
         c.gen.vocab = c.model.vocab = to_int("vocab", v, 1);
       },
       [](const Config& c) { return std::to_string(c.gen.vocab); }},
      {{"n_classes", "6", "number of binary labels"},
       [](Config& c, const std::string& v) {
         c.gen.n_classes = c.model.n_classes = to_int("n_classes", v, 1);
       },
       [](const Config& c) { return std::to_string(c.gen.n_classes); }},
      {{"image_noise", "2", "sigma of additive noise on the image view"},
       [](Config& c, const std::string& v) { c.gen.image_noise = to_dbl("image_noise", v); },
       [](const Config& c) { return format_double(c.gen.image_noise); }},
      {{"text_keyword_prob", "0.9", "chance an active label emits its finding token"},
       [](Config& c, const std::string& v) {
         c.gen.text_keyword_prob = to_dbl("text_keyword_prob", v);
       },
       [](const Config& c) { return format_double(c.gen.text_keyword_prob); }},
      {{"embed_dim", "32", "token embedding width"},
       [](Config& c, const std::string& v) { c.model.embed_dim = to_int("embed_dim", v, 1); },
       [](const Config& c) { return std::to_string(c.model.embed_dim); }},
      {{"feature_dim", "32", "encoder feature width shared by both branches"},
       [](Config& c, const std::string& v) { c.model.feature_dim = to_int("feature_dim", v, 1); },
       [](const Config& c) { return std::to_string(c.model.feature_dim); }},
      {{"latent_dim", "32", "latent space width"},
       [](Config& c, const std::string& v) {
         c.model.latent_dim = to_int("latent_dim", v, 1);
         c.train.latent_dim = c.model.latent_dim;
       },
       [](const Config& c) { return std::to_string(c.model.latent_dim); }},
      {{"hidden", "64,64", "inference-net hidden widths, comma separated"},
       [](Config& c, const std::string& v) { c.model.hidden = to_int_list("hidden", v); },
       [](const Config& c) { return int_list_str(c.model.hidden); }},
      {{"dropout", "0.5", "dropout rate on trainable hidden layers"},
       [](Config& c, const std::string& v) { c.model.dropout = to_dbl("dropout", v); },
       [](const Config& c) { return format_double(c.model.dropout); }},
      {{"activation", "relu", "hidden activation: relu or tanh"},
       [](Config& c, const std::string& v) {
         if (v == "relu") c.model.activation = Activation::relu;
         else if (v == "tanh") c.model.activation = Activation::tanh;
         else throw ConfigError("activation: expected relu or tanh, got '" + v + "'");
       },
       [](const Config& c) {
         return std::string(c.model.activation == Activation::relu ? "relu" : "tanh");
       }},
      {{"objective", "vkd", "training objective: vkd, vkd_no_mi, or cvi"},
       [](Config& c, const std::string& v) {
         if (v == "vkd") c.train.objective = Objective::vkd;
         else if (v == "vkd_no_mi") c.train.objective = Objective::vkd_no_mi;
         else if (v == "cvi") c.train.objective = Objective::cvi;
         else throw ConfigError("objective: expected vkd, vkd_no_mi, or cvi, got '" + v + "'");
       },
       [](const Config& c) { return std::string(objective_str(c.train.objective)); }},
      {{"lr", "0.001", "Adam learning rate"},
       [](Config& c, const std::string& v) { c.train.lr = to_dbl("lr", v); },
       [](const Config& c) { return format_double(c.train.lr); }},
      {{"adam_beta1", "0.9", "Adam first-moment decay"},
       [](Config& c, const std::string& v) { c.train.adam_beta1 = to_dbl("adam_beta1", v); },
       [](const Config& c) { return format_double(c.train.adam_beta1); }},
      {{"adam_beta2", "0.999", "Adam second-moment decay"},
       [](Config& c, const std::string& v) { c.train.adam_beta2 = to_dbl("adam_beta2", v); },
       [](const Config& c) { return format_double(c.train.adam_beta2); }},
      {{"adam_eps", "1e-08", "Adam denominator epsilon"},
       [](Config& c, const std::string& v) { c.train.adam_eps = to_dbl("adam_eps", v); },
       [](const Config& c) { return format_double(c.train.adam_eps); }},
      {{"batch_size", "64", "training batch size"},
       [](Config& c, const std::string& v) { c.train.batch_size = to_int("batch_size", v, 1); },
       [](const Config& c) { return std::to_string(c.train.batch_size); }},
      {{"max_epochs", "40", "epoch cap when early stopping never fires"},
       [](Config& c, const std::string& v) { c.train.max_epochs = to_int("max_epochs", v, 0); },
       [](const Config& c) { return std::to_string(c.train.max_epochs); }},
      {{"mc_m", "1", "Monte Carlo draws from the conditional prior per step"},
       [](Config& c, const std::string& v) { c.train.mc_m = to_int("mc_m", v, 1); },
       [](const Config& c) { return std::to_string(c.train.mc_m); }},
      {{"mc_l", "1", "Monte Carlo draws from the text posterior per step"},
       [](Config& c, const std::string& v) { c.train.mc_l = to_int("mc_l", v, 1); },
       [](const Config& c) { return std::to_string(c.train.mc_l); }},
      {{"anneal_ramp", "0.5", "fraction of each KL-anneal cycle spent ramping"},
       [](Config& c, const std::string& v) { c.train.anneal_ramp = to_dbl("anneal_ramp", v); },
       [](const Config& c) { return format_double(c.train.anneal_ramp); }},
      {{"anneal_cycles", "4", "KL-anneal cycles per epoch"},
       [](Config& c, const std::string& v) {
         c.train.anneal_cycles = to_int("anneal_cycles", v, 1);
       },
       [](const Config& c) { return std::to_string(c.train.anneal_cycles); }},
      {{"early_stop_tolerance", "0.01", "relative val-AUC gain that resets patience"},
       [](Config& c, const std::string& v) {
         c.train.early_stop_tolerance = to_dbl("early_stop_tolerance", v);
       },
       [](const Config& c) { return format_double(c.train.early_stop_tolerance); }},
      {{"patience", "5", "epochs without significant improvement before stopping"},
       [](Config& c, const std::string& v) { c.train.patience = to_int("patience", v, 1); },
       [](const Config& c) { return std::to_string(c.train.patience); }},
      {{"seed", "7", "base seed for generation and training"},
       [](Config& c, const std::string& v) {
         c.gen.seed = c.train.seed = to_u64("seed", v);
       },
       [](const Config& c) { return std::to_string(c.train.seed); }},
  };
  return h;
}

const KeyHandler& find_handler(const std::string& key) {
  for (const KeyHandler& h : handlers())
    if (h.info.key == key) return h;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<ConfigKeyInfo>& config_keys() {
  static const std::vector<ConfigKeyInfo> keys = [] {
    std::vector<ConfigKeyInfo> k;
    for (const KeyHandler& h : handlers()) k.push_back(h.info);
    return k;
  }();
  return keys;
}

Config default_config() {
  Config c;
  for (const KeyHandler& h : handlers()) h.set(c, h.info.def);
  return c;
}

void set_config_key(Config& cfg, const std::string& key, const std::string& value) {
  find_handler(key).set(cfg, value);
}

Config apply_overrides(Config base, const ConfigKv& kv) {
  std::unordered_set<std::string> seen;
  for (const auto& [k, v] : kv) {
    if (!seen.insert(k).second) throw ConfigError("duplicate config key '" + k + "'");
    set_config_key(base, k, v);
  }
  base.gen.validate();
  base.model.validate();
  base.train.validate();
  return base;
}

Config parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open '" + path + "'");
  ConfigKv kv;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    std::size_t e = line.find_last_not_of(" \t\r");
    std::string body = line.substr(b, e - b + 1);
    std::size_t eq = body.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value, got '" +
                        body + "'");
    kv.emplace_back(body.substr(0, eq), body.substr(eq + 1));
  }
  return apply_overrides(default_config(), kv);
}

ConfigKv to_kv(const Config& cfg) {
  ConfigKv kv;
  for (const KeyHandler& h : handlers()) kv.emplace_back(h.info.key, h.get(cfg));
  return kv;
}

std::string config_help() {
  std::ostringstream os;
  os << "Config keys (key=value lines, '#' comments):\n";
  for (const KeyHandler& h : handlers())
    os << "  " << h.info.key << " (default " << h.info.def << "): " << h.info.help << "\n";
  return os.str();
}

}  // namespace vkd
