#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "vkd/config.hpp"

namespace {

std::string cli_path() {
  const char* p = std::getenv("VKD_CLI_BIN");
  REQUIRE_MESSAGE(p != nullptr, "VKD_CLI_BIN must point at the built binary");
  return p;
}

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

RunResult run(const std::string& args) {
  const std::string cmd = cli_path() + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult r;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kDir = "/tmp/vkd_cli_test";

std::string path(const std::string& name) { return std::string(kDir) + "/" + name; }

void write_small_config(const std::string& p, const std::string& extra = "") {
  std::ofstream out(p);
  out << "n_samples=500\nconcept_dim=4\ninput_dim=8\nseq_len=6\nvocab=12\nn_classes=3\n"
         "embed_dim=6\nfeature_dim=6\nlatent_dim=4\nhidden=8,8\nbatch_size=32\n"
         "max_epochs=4\npatience=2\nseed=5\n"
      << extra;
}

// Strips the wall_ms column (the one legitimately nondeterministic field).
std::string without_wall(const std::string& csv) {
  std::istringstream in(csv);
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    const auto last = line.rfind(',');
    out << line.substr(0, last) << "\n";
  }
  return out.str();
}

}  // namespace

TEST_CASE("cli: dataset generation is idempotent and reports prevalence") {
  std::system((std::string("mkdir -p ") + kDir).c_str());
  write_small_config(path("cfg.txt"));
  RunResult a = run("gen-data --out " + path("a.vkds") + " --config " + path("cfg.txt"));
  CHECK(a.exit_code == 0);
  CHECK(a.output.find("class prevalence:") != std::string::npos);
  RunResult b = run("gen-data --out " + path("b.vkds") + " --config " + path("cfg.txt"));
  CHECK(b.exit_code == 0);
  CHECK(slurp(path("a.vkds")) == slurp(path("b.vkds")));
  CHECK(slurp(path("a.vkds")).rfind("vkds 1\n", 0) == 0);

  RunResult c = run("gen-data --out " + path("c.vkds") + " --config " + path("cfg.txt") +
                    " --seed 33");
  CHECK(c.exit_code == 0);
  CHECK_FALSE(slurp(path("a.vkds")) == slurp(path("c.vkds")));
}

TEST_CASE("cli: unknown config keys exit 2 and are named") {
  write_small_config(path("bad.txt"), "foo=1\n");
  RunResult r = run("gen-data --out " + path("x.vkds") + " --config " + path("bad.txt"));
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("foo") != std::string::npos);
}

TEST_CASE("cli: missing required flags exit 2") {
  RunResult r = run("train --data " + path("a.vkds") + " --out " + path("ck.txt"));
  CHECK(r.exit_code == 2);
}

TEST_CASE("cli: unwritable output path exits 3") {
  write_small_config(path("cfg.txt"));
  RunResult r = run("gen-data --out /nonexistent_dir_vkd/out.vkds --config " + path("cfg.txt"));
  CHECK(r.exit_code == 3);
}

TEST_CASE("cli: split then train then eval, and training is idempotent") {
  std::system((std::string("mkdir -p ") + kDir).c_str());
  write_small_config(path("cfg.txt"), "objective=cvi\n");
  REQUIRE(run("gen-data --out " + path("all.vkds") + " --config " + path("cfg.txt")).exit_code ==
          0);
  RunResult sp = run("split --in " + path("all.vkds") + " --out-train " + path("tr.vkds") +
                     " --out-val " + path("va.vkds") + " --out-test " + path("te.vkds") +
                     " --fractions 0.7,0.15,0.15 --seed 5");
  CHECK(sp.exit_code == 0);
  CHECK(sp.output.find("350/75/75") != std::string::npos);

  const std::string train_cmd = "train --data " + path("tr.vkds") + " --val " + path("va.vkds") +
                                " --config " + path("cfg.txt") + " --out " + path("ck.txt") +
                                " --log " + path("log.csv");
  RunResult t1 = run(train_cmd);
  CHECK(t1.exit_code == 0);
  CHECK(t1.output.find("final val macro AUC") != std::string::npos);

  // the cvi objective starts at K ln 2; the logged epoch means must sit below
  std::istringstream log(slurp(path("log.csv")));
  std::string line, last;
  std::getline(log, line);  // header
  double first_total = -1;
  while (std::getline(log, line)) {
    if (first_total < 0) {
      std::istringstream ls(line);
      std::string cell;
      std::getline(ls, cell, ',');
      std::getline(ls, cell, ',');
      std::getline(ls, cell, ',');
      std::getline(ls, cell, ',');
      first_total = std::stod(cell);
    }
    last = line;
  }
  CHECK(first_total > 0.0);
  CHECK(first_total < 3 * 0.6931471805599453);

  const std::string ck1 = slurp(path("ck.txt"));
  const std::string log1 = slurp(path("log.csv"));
  RunResult t2 = run(train_cmd);
  CHECK(t2.exit_code == 0);
  CHECK(slurp(path("ck.txt")) == ck1);
  CHECK(without_wall(slurp(path("log.csv"))) == without_wall(log1));

  RunResult ev = run("eval --data " + path("tr.vkds") + " --model " + path("ck.txt") +
                     " --report " + path("rep.csv"));
  CHECK(ev.exit_code == 0);
  CHECK(ev.output.find("macro,") != std::string::npos);
  const std::string rep = slurp(path("rep.csv"));
  const auto macro_pos = rep.find("macro,");
  REQUIRE(macro_pos != std::string::npos);
  const double macro = std::stod(rep.substr(macro_pos + 6));
  CHECK(macro > 0.5);  // a trained model beats chance on its own training data
  CHECK(macro <= 1.0);
}

TEST_CASE("cli: vkd training logs a live KL column") {
  write_small_config(path("cfgv.txt"), "objective=vkd\nmax_epochs=3\n");
  REQUIRE(run("gen-data --out " + path("allv.vkds") + " --config " + path("cfgv.txt")).exit_code ==
          0);
  REQUIRE(run("split --in " + path("allv.vkds") + " --out-train " + path("trv.vkds") +
              " --out-val " + path("vav.vkds") + " --out-test " + path("tev.vkds") +
              " --fractions 0.8,0.2,0 --seed 5")
              .exit_code == 0);
  RunResult t = run("train --data " + path("trv.vkds") + " --val " + path("vav.vkds") +
                    " --config " + path("cfgv.txt") + " --out " + path("ckv.txt") + " --log " +
                    path("logv.csv"));
  CHECK(t.exit_code == 0);
  std::istringstream log(slurp(path("logv.csv")));
  std::string line;
  std::getline(log, line);
  bool kl_nonzero = false;
  while (std::getline(log, line)) {
    std::istringstream ls(line);
    std::string cell;
    for (int i = 0; i < 7; ++i) std::getline(ls, cell, ',');
    kl_nonzero = kl_nonzero || std::stod(cell) > 0.0;
  }
  CHECK(kl_nonzero);
}

TEST_CASE("cli: inference writes one row per sample and respects --samples") {
  RunResult i1 = run("infer --data " + path("te.vkds") + " --model " + path("ck.txt") +
                     " --samples 1 --out " + path("p1.csv"));
  CHECK(i1.exit_code == 0);
  RunResult i64 = run("infer --data " + path("te.vkds") + " --model " + path("ck.txt") +
                      " --samples 64 --out " + path("p64.csv"));
  CHECK(i64.exit_code == 0);
  std::istringstream in(slurp(path("p1.csv")));
  std::string line;
  std::getline(in, line);
  CHECK(line == "sample_id,p_1,p_2,p_3");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 75);
  CHECK_FALSE(slurp(path("p1.csv")) == slurp(path("p64.csv")));
}

TEST_CASE("cli: latent export matches the dataset size") {
  RunResult r = run("export-latents --data " + path("te.vkds") + " --model " + path("ck.txt") +
                    " --out " + path("lat.csv"));
  CHECK(r.exit_code == 0);
  std::istringstream in(slurp(path("lat.csv")));
  std::string line;
  int rows = -1;  // header
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 75);
}

TEST_CASE("cli: dimension mismatches between model and data exit 2 with shapes") {
  write_small_config(path("cfg16.txt"), "input_dim=16\n");
  REQUIRE(run("gen-data --out " + path("wide.vkds") + " --config " + path("cfg16.txt")).exit_code ==
          0);
  RunResult r = run("eval --data " + path("wide.vkds") + " --model " + path("ck.txt"));
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("8") != std::string::npos);
  CHECK(r.output.find("16") != std::string::npos);
}

TEST_CASE("cli: gradcheck passes and lists every op family") {
  RunResult r = run("gradcheck");
  CHECK(r.exit_code == 0);
  for (const char* fam : {"add", "sub", "mul", "matmul", "relu", "tanh", "exp", "log",
                          "softplus", "sigmoid", "clamp", "sum", "mean", "concat", "slice",
                          "dropout", "full_objective"})
    CHECK(r.output.find(fam) != std::string::npos);
}

TEST_CASE("cli: help documents exactly the parser's key set") {
  RunResult r = run("--help");
  CHECK(r.exit_code == 0);
  for (const auto& k : vkd::config_keys()) {
    INFO(k.key);
    CHECK(r.output.find("  " + k.key + " (default ") != std::string::npos);
  }
}
