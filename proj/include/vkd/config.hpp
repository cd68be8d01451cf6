#pragma once

// Flat key=value configuration covering data generation, model dimensions and
// training. One registry defines every key, its default and its help line;
// the parser, the serializer and the CLI help all read from it, so they can
// never drift apart.

#include <string>
#include <utility>
#include <vector>

#include "vkd/data.hpp"
#include "vkd/model.hpp"
#include "vkd/trainer.hpp"

namespace vkd {

struct Config {
  GenSpec gen;
  ModelConfig model;
  TrainConfig train;
};

struct ConfigKeyInfo {
  std::string key;
  std::string def;
  std::string help;
};

const std::vector<ConfigKeyInfo>& config_keys();

Config default_config();

// Assigns one key; throws ConfigError for unknown keys or bad values. Shared
// keys (input_dim, vocab, n_classes, latent_dim, seed) set every struct that
// carries them.
void set_config_key(Config& cfg, const std::string& key, const std::string& value);

using ConfigKv = std::vector<std::pair<std::string, std::string>>;

Config apply_overrides(Config base, const ConfigKv& kv);

// '#' comment lines and blank lines allowed; duplicate keys are an error.
Config parse_config_file(const std::string& path);

// Full value set in registry order; parse(to_kv(c)) == c.
ConfigKv to_kv(const Config& cfg);

std::string config_help();

}  // namespace vkd
