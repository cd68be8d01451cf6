#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "vkd/config.hpp"

using namespace vkd;

TEST_CASE("config: registry keys are unique and fully documented") {
  std::set<std::string> seen;
  for (const auto& k : config_keys()) {
    CHECK(seen.insert(k.key).second);
    CHECK_FALSE(k.help.empty());
    CHECK_FALSE(k.def.empty());
  }
  const std::string help = config_help();
  for (const auto& k : config_keys()) CHECK(help.find(k.key) != std::string::npos);
}

TEST_CASE("config: defaults round-trip through the serializer") {
  Config c = default_config();
  Config back = apply_overrides(default_config(), to_kv(c));
  CHECK(to_kv(back) == to_kv(c));
}

TEST_CASE("config: shared keys fan out to every struct") {
  Config c = default_config();
  set_config_key(c, "input_dim", "24");
  CHECK(c.gen.input_dim == 24);
  CHECK(c.model.input_dim == 24);
  set_config_key(c, "latent_dim", "16");
  CHECK(c.model.latent_dim == 16);
  CHECK(c.train.latent_dim == 16);
  set_config_key(c, "seed", "99");
  CHECK(c.gen.seed == 99);
  CHECK(c.train.seed == 99);
}

TEST_CASE("config: unknown keys are named in the error") {
  Config c = default_config();
  CHECK_THROWS_WITH_AS(set_config_key(c, "foo", "1"), doctest::Contains("foo"), ConfigError);
}

TEST_CASE("config: duplicate keys are rejected") {
  CHECK_THROWS_WITH_AS(
      apply_overrides(default_config(), {{"lr", "0.1"}, {"lr", "0.2"}}),
      doctest::Contains("duplicate"), ConfigError);
}

TEST_CASE("config: enums and lists parse both ways") {
  Config c = default_config();
  set_config_key(c, "activation", "tanh");
  CHECK(c.model.activation == Activation::tanh);
  set_config_key(c, "objective", "vkd_no_mi");
  CHECK(c.train.objective == Objective::vkd_no_mi);
  set_config_key(c, "hidden", "16,8,4");
  CHECK(c.model.hidden == std::vector<int>{16, 8, 4});
  CHECK_THROWS_AS(set_config_key(c, "activation", "gelu"), ConfigError);
  CHECK_THROWS_AS(set_config_key(c, "objective", "mse"), ConfigError);
  CHECK_THROWS_AS(set_config_key(c, "hidden", ""), ConfigError);
  CHECK_THROWS_AS(set_config_key(c, "batch_size", "zero"), ConfigError);
}

TEST_CASE("config: files support comments, blanks, and reject junk") {
  const std::string path = "/tmp/vkd_test_cfg.txt";
  {
    std::ofstream out(path);
    out << "# a comment\n\nlr=0.25\n  batch_size=16  \nobjective=cvi\n";
  }
  Config c = parse_config_file(path);
  CHECK(c.train.lr == 0.25);
  CHECK(c.train.batch_size == 16);
  CHECK(c.train.objective == Objective::cvi);
  {
    std::ofstream out(path);
    out << "lr 0.25\n";
  }
  CHECK_THROWS_AS(parse_config_file(path), ConfigError);
  {
    std::ofstream out(path);
    out << "lr=0.1\nlr=0.2\n";
  }
  CHECK_THROWS_AS(parse_config_file(path), ConfigError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(parse_config_file("/tmp/definitely_missing_vkd.cfg"), IoError);
}

TEST_CASE("config: validation failures surface on apply") {
  CHECK_THROWS_AS(apply_overrides(default_config(), {{"dropout", "1.5"}}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(default_config(), {{"vocab", "3"}}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(default_config(), {{"anneal_ramp", "0"}}),
                  ConfigError);
}
