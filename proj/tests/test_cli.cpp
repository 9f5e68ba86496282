#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "gpo/common.hpp"
#include "gpo/container.hpp"

// Shells out to the installed binary (GPO_BIN); configs live in GPO_CONFIG_DIR.

namespace fs = std::filesystem;
using namespace gpo;

namespace {

std::string env_path(const char* name) {
  const char* v = std::getenv(name);
  REQUIRE(v != nullptr);
  return v;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "gpo_cli" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct RunResult {
  int code = -1;
  std::string out, err;
};

RunResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path out_path = dir / "stdout.txt";
  const fs::path err_path = dir / "stderr.txt";
  const std::string cmd =
      env_path("GPO_BIN") + " " + args + " > " + out_path.string() + " 2> " + err_path.string();
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.code = WEXITSTATUS(raw);
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

// Tiny Burgers experiment, a few seconds end to end.
const char* tiny_config =
    "pde = burgers\n"
    "train_count = 4\n"
    "test_count = 2\n"
    "resolution = 16\n"
    "s_init = 2\n"
    "init_steps = 2\n"
    "sdd_batch = 2\n"
    "sdd_epochs = 5\n"
    "wno_levels = 2\n"
    "wno_basis = haar\n"
    "wno_width = 4\n"
    "wno_layers = 1\n"
    "wno_latent = 3\n"
    "data_seed = 7\n"
    "train_seed = 3\n"
    "samples = 32\n";

fs::path write_tiny_config(const fs::path& dir) {
  const fs::path path = dir / "tiny.cfg";
  std::ofstream(path) << tiny_config;
  return path;
}

std::vector<std::vector<double>> read_csv_rows(const fs::path& path, std::string* header) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  REQUIRE(std::getline(in, line));
  if (header) *header = line;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::stringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

TEST_CASE("generate: shape contract and byte-identical reruns") {
  fs::path dir = fresh_dir("generate");
  fs::path config = write_tiny_config(dir);
  RunResult first = run_cli("generate --config " + config.string() + " --out " +
                                (dir / "a").string(), dir);
  CHECK(first.code == 0);
  CHECK(first.out.find("4 train") != std::string::npos);

  ad::Tensor inputs = io::read_gpot((dir / "a" / "train.inputs.gpot").string());
  CHECK(inputs.shape == std::vector<int64_t>{4, 1, 16});
  ad::Tensor targets = io::read_gpot((dir / "a" / "test.targets.gpot").string());
  CHECK(targets.shape == std::vector<int64_t>{2, 1, 16});

  RunResult second = run_cli("generate --config " + config.string() + " --out " +
                                 (dir / "b").string(), dir);
  CHECK(second.code == 0);
  CHECK(slurp(dir / "a" / "train.inputs.gpot") == slurp(dir / "b" / "train.inputs.gpot"));
  CHECK(slurp(dir / "a" / "test.targets.gpot") == slurp(dir / "b" / "test.targets.gpot"));

  // The seed override changes the payload.
  RunResult third = run_cli("generate --config " + config.string() + " --seed 1234 --out " +
                                (dir / "c").string(), dir);
  CHECK(third.code == 0);
  CHECK(slurp(dir / "a" / "train.inputs.gpot") != slurp(dir / "c" / "train.inputs.gpot"));

  // The config is echoed next to the containers.
  CHECK(slurp(dir / "a" / "config.cfg").find("pde = burgers") != std::string::npos);
}

TEST_CASE("train: corrupted container fails with an io error naming the file") {
  fs::path dir = fresh_dir("corrupt");
  fs::path config = write_tiny_config(dir);
  REQUIRE(run_cli("generate --config " + config.string() + " --out " + (dir / "data").string(),
                  dir).code == 0);

  const fs::path victim = dir / "data" / "train.inputs.gpot";
  std::string bytes = slurp(victim);
  bytes[bytes.size() / 2] ^= 0x5a;
  std::ofstream(victim, std::ios::binary) << bytes;

  RunResult r = run_cli("train --config " + config.string() + " --data " +
                            (dir / "data").string() + " --out " + (dir / "model").string(), dir);
  CHECK(r.code == 4);
  CHECK(r.err.find("train.inputs.gpot") != std::string::npos);
}

TEST_CASE("train/evaluate: burgers-64 smoke run improves and reports") {
  fs::path dir = fresh_dir("smoke64");
  const std::string config = env_path("GPO_CONFIG_DIR") + std::string("/burgers_smoke.cfg");
  REQUIRE(run_cli("generate --config " + config + " --out " + (dir / "data").string(), dir).code ==
          0);
  RunResult tr = run_cli("train --config " + config + " --data " + (dir / "data").string() +
                             " --out " + (dir / "model").string(), dir);
  CHECK(tr.code == 0);

  // Trace accounting: one row per init step plus one per descent step.
  std::string header;
  std::vector<std::vector<double>> rows = read_csv_rows(dir / "model" / "trace.csv", &header);
  CHECK(header == "step,primal_loss,grad_norm,wall_ms");
  const int64_t descent_steps = 10 * (64 / 16);
  CHECK(static_cast<int64_t>(rows.size()) == 30 + descent_steps);

  // The descent phase makes progress on the primal objective.
  double first_primal = 0.0, last_primal = 0.0;
  for (const auto& row : rows)
    if (row[0] >= 0) {
      first_primal = row[1];
      break;
    }
  last_primal = rows.back()[1];
  CHECK(last_primal < first_primal);

  RunResult ev = run_cli("evaluate --model " + (dir / "model").string() + " --data " +
                             (dir / "data").string() + " --out " + (dir / "report").string() +
                             " --samples 32", dir);
  CHECK(ev.code == 0);
  CHECK(ev.out.find("relative L2") != std::string::npos);
  CHECK(ev.out.find("coverage") != std::string::npos);
  std::vector<std::vector<double>> report = read_csv_rows(dir / "report" / "report.csv", &header);
  CHECK(header == "sample,rel_l2");
  CHECK(report.size() == 16);
  CHECK(slurp(dir / "report" / "report.txt").find("standard deviation") != std::string::npos);
  CHECK(fs::exists(dir / "report" / "overlay_0.svg"));
}

TEST_CASE("sample: draws container and seeded determinism") {
  fs::path dir = fresh_dir("sample");
  fs::path config = write_tiny_config(dir);
  REQUIRE(run_cli("generate --config " + config.string() + " --out " + (dir / "data").string(),
                  dir).code == 0);
  REQUIRE(run_cli("train --config " + config.string() + " --data " + (dir / "data").string() +
                      " --out " + (dir / "model").string(), dir).code == 0);

  const std::string base = "sample --model " + (dir / "model").string() + " --data " +
                           (dir / "data").string() + " --index 1 --samples 4";
  CHECK(run_cli(base + " --seed 5 --out " + (dir / "a").string(), dir).code == 0);
  CHECK(run_cli(base + " --seed 5 --out " + (dir / "b").string(), dir).code == 0);
  CHECK(run_cli(base + " --seed 6 --out " + (dir / "c").string(), dir).code == 0);

  ad::Tensor draws = io::read_gpot((dir / "a" / "draws.gpot").string());
  CHECK(draws.shape == std::vector<int64_t>{4, 16, 1});
  CHECK(slurp(dir / "a" / "draws.gpot") == slurp(dir / "b" / "draws.gpot"));
  CHECK(slurp(dir / "a" / "draws.gpot") != slurp(dir / "c" / "draws.gpot"));

  RunResult bad = run_cli(base + " --seed 5 --out x --index 7", dir);
  CHECK(bad.code == 2);
}

TEST_CASE("evaluate: inadmissible super-resolution grid is a validation error") {
  fs::path dir = fresh_dir("superres");
  fs::path config = write_tiny_config(dir);
  REQUIRE(run_cli("generate --config " + config.string() + " --out " + (dir / "data").string(),
                  dir).code == 0);
  REQUIRE(run_cli("train --config " + config.string() + " --data " + (dir / "data").string() +
                      " --out " + (dir / "model").string(), dir).code == 0);

  RunResult good = run_cli("evaluate --model " + (dir / "model").string() + " --data " +
                               (dir / "data").string() + " --out " + (dir / "ok").string() +
                               " --samples 0 --superres 32", dir);
  CHECK(good.code == 0);
  CHECK(good.out.find("super-resolution 32") != std::string::npos);

  RunResult bad = run_cli("evaluate --model " + (dir / "model").string() + " --data " +
                              (dir / "data").string() + " --out " + (dir / "nope").string() +
                              " --samples 0 --superres 24", dir);
  CHECK(bad.code == 2);
  CHECK(bad.err.find("inadmissible") != std::string::npos);
}

TEST_CASE("sweep: degenerate single value and csv schema") {
  fs::path dir = fresh_dir("sweep");
  fs::path config = write_tiny_config(dir);
  RunResult r = run_cli("sweep --config " + config.string() +
                            " --axis s_sdd --values 4 --seeds 2 --out " + (dir / "out").string(),
                        dir);
  CHECK(r.code == 0);
  std::string header;
  std::vector<std::vector<double>> rows = read_csv_rows(dir / "out" / "sweep.csv", &header);
  CHECK(header == "axis_value,seed,rel_l2");
  CHECK(rows.size() == 2);
  CHECK(rows[0][0] == 4.0);
  CHECK(fs::exists(dir / "out" / "sweep.svg"));
}

TEST_CASE("exit codes: validation 2, io 4") {
  fs::path dir = fresh_dir("codes");
  CHECK(run_cli("generate --config " + (dir / "missing.cfg").string() + " --out " +
                    (dir / "x").string(), dir).code == 4);

  std::ofstream(dir / "bad.cfg") << "pde = heat\n";
  CHECK(run_cli("generate --config " + (dir / "bad.cfg").string() + " --out " +
                    (dir / "x").string(), dir).code == 2);

  CHECK(run_cli("generate --bogus-flag", dir).code == 2);
  CHECK(run_cli("", dir).code == 2);
}
