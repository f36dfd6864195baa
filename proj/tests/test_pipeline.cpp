#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "asopf/datagen.hpp"
#include "asopf/grid.hpp"
#include "asopf/labels.hpp"
#include "asopf/mlp.hpp"
#include "asopf/opf.hpp"

namespace fs = std::filesystem;
using namespace asopf;
using nlohmann::json;

namespace {

fs::path scratch_dir() {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() /
               ("asopf_it_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++));
  fs::create_directories(p);
  return p;
}

// Runs the installed binary with stdout/stderr captured to a log file and
// returns the exit code.
int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd =
      std::string(ASOPF_CLI_PATH) + " " + args + " >" + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int line_count(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  int n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("bad invocations exit with the input-error code") {
  const fs::path dir = scratch_dir();
  const fs::path log = dir / "log.txt";
  CHECK(run_cli("", log) == 2);
  CHECK(run_cli("frobnicate", log) == 2);
  CHECK(run_cli("solve --grid " + (dir / "missing.json").string(), log) == 2);
  CHECK(run_cli("--help", log) == 0);

  std::ofstream(dir / "garbage.json") << "this is not a grid\n";
  CHECK(run_cli("solve --grid " + (dir / "garbage.json").string(), log) == 2);

  std::ofstream(dir / "empty.json") << "{}\n";
  CHECK(run_cli("solve --grid " + (dir / "empty.json").string(), log) == 2);
}

TEST_CASE("solve subcommand reproduces the in-process answer") {
  const fs::path dir = scratch_dir();
  const fs::path log = dir / "log.txt";
  const fs::path gpath = dir / "g.json";
  REQUIRE(run_cli("grid-gen --buses 12 --seed 3 --out " + gpath.string(), log) == 0);
  CHECK(slurp(log).find("12 buses") != std::string::npos);

  Grid g = load_grid(gpath.string());
  OpfSolution ref = solve_dcopf(g, g.base_net_load());
  REQUIRE(ref.status == SolveStatus::optimal);

  const fs::path spath = dir / "sol.json";
  REQUIRE(run_cli("solve --grid " + gpath.string() + " --out " + spath.string(),
                  log) == 0);
  json j = json::parse(slurp(spath));
  CHECK(j.at("status").get<std::string>() == "optimal");
  CHECK(j.at("objective_usd_per_h").get<double>() ==
        doctest::Approx(ref.objective).epsilon(1e-9));
  CHECK(j.at("p_pu").size() == static_cast<std::size_t>(g.gen_count()));

  // Without --out the solution goes to stdout.
  REQUIRE(run_cli("solve --grid " + gpath.string(), log) == 0);
  CHECK(slurp(log).find("objective_usd_per_h") != std::string::npos);
}

TEST_CASE("a disconnected grid file exits with the numerical-error code") {
  const fs::path dir = scratch_dir();
  const fs::path log = dir / "log.txt";

  Grid g;
  for (int i = 0; i < 4; ++i) {
    Bus b;
    b.load = 0.2;
    b.shed_penalty = 1000.0 + i;
    g.buses.push_back(b);
  }
  for (int i = 0; i < 3; ++i) {
    Line l;
    l.from = i;
    l.to = i + 1;
    l.susceptance = 10.0;
    l.flow_limit = 2.0;
    g.lines.push_back(l);
  }
  Generator gen;
  gen.bus = 0;
  gen.p_min = 0.0;
  gen.p_max = 2.0;
  gen.cost_quad = 0.01;
  gen.cost_lin = 10.0;
  g.generators.push_back(gen);
  g.finalize();
  const fs::path gpath = dir / "g.json";
  save_grid(g, gpath.string());

  // Drop the middle branch so buses 3 and 4 lose their path to the slack.
  json j = json::parse(slurp(gpath));
  j["lines"].erase(1);
  std::ofstream(dir / "cut.json") << j.dump(2) << "\n";
  CHECK(run_cli("solve --grid " + (dir / "cut.json").string(), log) == 3);
  CHECK(slurp(log).find("error") != std::string::npos);
}

TEST_CASE("file stages chain into each other") {
  const fs::path dir = scratch_dir();
  const fs::path log = dir / "log.txt";
  const std::string gpath = (dir / "g.json").string();
  const std::string dspath = (dir / "ds.json").string();

  REQUIRE(run_cli("grid-gen --buses 10 --seed 2 --out " + gpath, log) == 0);
  REQUIRE(run_cli("generate --grid " + gpath +
                      " --eta 0.05 --n 8 --seed 4 --out " + dspath,
                  log) == 0);
  Dataset ds = load_dataset(dspath);
  REQUIRE(ds.samples.size() == 8);
  CHECK(ds.train_indices.size() == 4);
  CHECK(ds.test_indices.size() == 4);

  const std::string labpath = (dir / "labels.json").string();
  REQUIRE(run_cli("label --dataset " + dspath + " --out " + labpath, log) == 0);
  auto [manifest, rows] = load_labels(labpath);
  CHECK(manifest == LabelManifest::for_grid(ds.grid));
  CHECK(rows.size() == 8);

  const std::string mpath = (dir / "model.json").string();
  REQUIRE(run_cli("train --dataset " + dspath +
                      " --epochs 50 --seed 1 --hidden 16 16 --out " + mpath,
                  log) == 0);
  MlpModel model = load_model(mpath);
  CHECK(model.input_dim() == ds.feature_dim());
  CHECK(model.output_dim() == manifest.total());
  CHECK(model.epochs_run <= 50);

  const std::string ppath = (dir / "pred.json").string();
  REQUIRE(run_cli("predict --model " + mpath + " --dataset " + dspath +
                      " --out " + ppath,
                  log) == 0);
  auto [pm, prows] = load_labels(ppath);
  CHECK(pm == manifest);
  CHECK(prows.size() == 8);

  const fs::path esecsv = dir / "ese.csv";
  REQUIRE(run_cli("ese --dataset " + dspath + " --labels " + ppath + " --out " +
                      esecsv.string(),
                  log) == 0);
  CHECK(line_count(esecsv) == 9);

  // True labels (no --labels) must reproduce the optimizer on every sample.
  REQUIRE(run_cli("ese --dataset " + dspath, log) == 0);
  CHECK(slurp(log).find("8 samples: 8 trusted") != std::string::npos);

  const fs::path valcsv = dir / "val.csv";
  REQUIRE(run_cli("validate --dataset " + dspath + " --out " + valcsv.string(),
                  log) == 0);
  CHECK(line_count(valcsv) == 9);

  const fs::path bencsv = dir / "bench.csv";
  REQUIRE(run_cli("bench --grid " + gpath + " --eta 0.05 --n 10 --seed 3 --out " +
                      bencsv.string(),
                  log) == 0);
  CHECK(line_count(bencsv) == 2);
  CHECK(slurp(log).find("median speedup") != std::string::npos);

  SUBCASE("label layout mismatches are rejected") {
    const std::string g2 = (dir / "g2.json").string();
    const std::string ds2 = (dir / "ds2.json").string();
    REQUIRE(run_cli("grid-gen --buses 6 --seed 9 --out " + g2, log) == 0);
    REQUIRE(run_cli("generate --grid " + g2 + " --eta 0.05 --n 4 --seed 1 --out " + ds2,
                    log) == 0);
    CHECK(run_cli("ese --dataset " + ds2 + " --labels " + ppath, log) == 2);
    CHECK(run_cli("predict --model " + mpath + " --dataset " + ds2 + " --out " +
                      (dir / "px.json").string(),
                  log) == 2);
  }
}

TEST_CASE("dataset files are byte-stable across identical invocations") {
  const fs::path dir = scratch_dir();
  const fs::path log = dir / "log.txt";
  const std::string gpath = (dir / "g.json").string();
  REQUIRE(run_cli("grid-gen --buses 8 --seed 6 --out " + gpath, log) == 0);
  const std::string a = (dir / "a.json").string();
  const std::string b = (dir / "b.json").string();
  REQUIRE(run_cli("generate --grid " + gpath + " --eta 0.1 --n 6 --seed 7 --out " + a,
                  log) == 0);
  REQUIRE(run_cli("generate --grid " + gpath + " --eta 0.1 --n 6 --seed 7 --out " + b,
                  log) == 0);
  CHECK(slurp(a) == slurp(b));
}

TEST_CASE("pipeline run writes the full report tree") {
  const fs::path dir = scratch_dir();
  const fs::path log = dir / "log.txt";

  json cfg;
  cfg["grid"] = {{"synthetic_buses", 8}, {"synthetic_seed", 5}};
  cfg["etas"] = {0.05};
  cfg["n_samples"] = 12;
  cfg["seed"] = 9;
  cfg["train"] = {{"epochs", 40}};
  cfg["out_dir"] = (dir / "run1").string();
  std::ofstream(dir / "cfg.json") << cfg.dump(2) << "\n";

  REQUIRE(run_cli("pipeline --config " + (dir / "cfg.json").string(), log) == 0);
  CHECK(slurp(log).find("case S8B") != std::string::npos);

  const fs::path root = dir / "run1";
  for (const char* name :
       {"manifest.json", "grid.json", "misclassification.csv", "error_summary.csv",
        "market_summary.csv", "timing.csv"})
    CHECK(fs::exists(root / name));
  const fs::path eta = root / "eta_0.05";
  for (const char* name :
       {"dataset.json", "model.json", "per_sample.csv", "per_bus.csv", "per_gen.csv"})
    CHECK(fs::exists(eta / name));

  json man = json::parse(slurp(root / "manifest.json"));
  CHECK(man.at("case").get<std::string>() == "S8B");
  CHECK(man.at("outputs").size() == 5);

  // One row per test sample under the header.
  CHECK(line_count(eta / "per_sample.csv") == 1 + 6);

  SUBCASE("reruns reproduce every non-timing artifact byte for byte") {
    cfg["out_dir"] = (dir / "run2").string();
    std::ofstream(dir / "cfg2.json") << cfg.dump(2) << "\n";
    REQUIRE(run_cli("pipeline --config " + (dir / "cfg2.json").string(), log) == 0);
    const fs::path root2 = dir / "run2";
    for (const char* name :
         {"misclassification.csv", "error_summary.csv", "market_summary.csv"})
      CHECK(slurp(root / name) == slurp(root2 / name));
    for (const char* name :
         {"dataset.json", "model.json", "per_sample.csv", "per_bus.csv", "per_gen.csv"})
      CHECK(slurp(eta / name) == slurp(root2 / "eta_0.05" / name));
  }

  SUBCASE("configs that cannot run are rejected up front") {
    json bad = cfg;
    bad["etas"] = json::array();
    std::ofstream(dir / "bad1.json") << bad.dump() << "\n";
    CHECK(run_cli("pipeline --config " + (dir / "bad1.json").string(), log) == 2);

    bad = cfg;
    bad["n_samples"] = 13;
    std::ofstream(dir / "bad2.json") << bad.dump() << "\n";
    CHECK(run_cli("pipeline --config " + (dir / "bad2.json").string(), log) == 2);

    bad = cfg;
    bad["grid"] = {{"synthetic_buses", 8},
                   {"synthetic_seed", 5},
                   {"file", (dir / "g.json").string()}};
    std::ofstream(dir / "bad3.json") << bad.dump() << "\n";
    CHECK(run_cli("pipeline --config " + (dir / "bad3.json").string(), log) == 2);
  }
}
