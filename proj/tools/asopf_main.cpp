#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "asopf/common.hpp"
#include "asopf/datagen.hpp"
#include "asopf/ese.hpp"
#include "asopf/grid.hpp"
#include "asopf/labels.hpp"
#include "asopf/market.hpp"
#include "asopf/mlp.hpp"
#include "asopf/opf.hpp"
#include "asopf/pipeline.hpp"
#include "asopf/rng.hpp"

namespace {

using namespace asopf;

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::vector<ActiveSetLabels> labels_for_dataset(const Dataset& ds,
                                                const std::string& labels_path) {
  if (labels_path.empty()) {
    std::vector<ActiveSetLabels> out;
    for (const auto& s : ds.samples) out.push_back(s.labels);
    return out;
  }
  auto [manifest, rows] = load_labels(labels_path);
  if (!(manifest == LabelManifest::for_grid(ds.grid)))
    throw ValidationError("label file layout does not match the dataset grid");
  if (rows.size() != ds.samples.size())
    throw ValidationError("label file has " + std::to_string(rows.size()) +
                          " rows for " + std::to_string(ds.samples.size()) + " samples");
  return rows;
}

int cmd_grid_gen(int buses, std::uint64_t seed, const std::string& profile,
                 const std::string& out) {
  WindProfile wp;
  if (profile == "base") wp = WindProfile::base;
  else if (profile == "high") wp = WindProfile::high;
  else throw ValidationError("profile must be 'base' or 'high'");
  Grid g = generate_synthetic_grid(buses, seed, wp);
  save_grid(g, out);
  std::cout << "wrote " << out << ": " << g.bus_count() << " buses, " << g.line_count()
            << " lines, " << g.gen_count() << " generators, " << g.wind_count()
            << " wind farms\n";
  return 0;
}

int cmd_generate(const std::string& grid_path, double eta, int n, std::uint64_t seed,
                 double demand_eta, const std::string& out) {
  Grid g = load_grid(grid_path);
  Vec demand(g.bus_count());
  for (int i = 0; i < g.bus_count(); ++i) demand[i] = g.buses[i].load;
  Vec w0(g.wind_count());
  for (int w = 0; w < g.wind_count(); ++w) w0[w] = g.wind_farms[w].forecast;
  DatagenOptions opts;
  opts.demand_eta = demand_eta;
  Dataset ds = build_dataset(g, demand, w0, eta, n, seed, opts);
  save_dataset(ds, out);
  std::cout << "wrote " << out << ": " << ds.samples.size() << " samples, "
            << ds.train_indices.size() << " train / " << ds.test_indices.size()
            << " test\n";
  return 0;
}

int cmd_solve(const std::string& grid_path, const std::string& out, bool no_polish,
              double tolerance) {
  Grid g = load_grid(grid_path);
  SolveOptions opts;
  opts.polish = !no_polish;
  opts.tolerance = tolerance;
  OpfSolution sol = solve_dcopf(g, g.base_net_load(), opts);
  if (sol.status != SolveStatus::optimal)
    throw NumericalError("solve failed: " + sol.message);
  if (out.empty())
    std::cout << solution_to_string(sol);
  else {
    save_solution(sol, out);
    std::cout << "wrote " << out << " (objective " << num(sol.objective)
              << " $/h, " << sol.iterations << " iterations)\n";
  }
  return 0;
}

int cmd_label(const std::string& dataset_path, const std::string& out) {
  Dataset ds = load_dataset(dataset_path);
  const LabelManifest m = LabelManifest::for_grid(ds.grid);
  std::vector<ActiveSetLabels> rows;
  for (const auto& s : ds.samples) rows.push_back(s.labels);
  save_labels(m, rows, out);
  long active[4] = {0, 0, 0, 0};
  long total[4] = {0, 0, 0, 0};
  for (const auto& l : rows) {
    const auto bits = l.flat(m);
    for (int v = 0; v < m.total(); ++v) {
      const int cat = m.category(v);
      total[cat] += 1;
      active[cat] += bits[static_cast<std::size_t>(v)];
    }
  }
  const char* names[4] = {"generators", "lines", "load", "wind"};
  std::cout << "wrote " << out << ": " << rows.size() << " rows\n";
  for (int c = 0; c < 4; ++c) {
    const double frac = total[c] > 0 ? static_cast<double>(active[c]) / total[c] : 0.0;
    std::cout << "  " << names[c] << ": " << active[c] << " of " << total[c]
              << " bits active (" << num(100.0 * frac) << "%)\n";
  }
  return 0;
}

int cmd_train(const std::string& dataset_path, int epochs, std::uint64_t seed,
              int batch_size, double lr, const std::vector<int>& hidden, int patience,
              const std::string& out) {
  Dataset ds = load_dataset(dataset_path);
  TrainConfig tc;
  tc.epochs = epochs;
  tc.seed = seed;
  tc.batch_size = batch_size;
  tc.learning_rate = lr;
  if (!hidden.empty()) tc.hidden = hidden;
  tc.early_stop_window = patience;
  TrainResult res = train_classifier(ds, tc);
  save_model(res.model, out);
  MisclassificationReport rep =
      misclassification_report(res.model, ds, ds.test_indices);
  std::cout << "wrote " << out << ": " << res.model.epochs_run << " epochs, best loss "
            << num(res.model.final_loss) << "\n";
  std::cout << "test misclassification: generators " << num(100.0 * rep.generators())
            << "%, lines " << num(100.0 * rep.lines()) << "%, load "
            << num(100.0 * rep.load()) << "%, wind " << num(100.0 * rep.wind())
            << "%\n";
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& dataset_path,
                double threshold, const std::string& out) {
  MlpModel model = load_model(model_path);
  Dataset ds = load_dataset(dataset_path);
  if (!(model.manifest == LabelManifest::for_grid(ds.grid)))
    throw ValidationError("model labels do not match the dataset grid");
  std::vector<ActiveSetLabels> rows;
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    rows.push_back(predict_labels(model, ds.features(static_cast<int>(i)), threshold));
  save_labels(model.manifest, rows, out);
  std::cout << "wrote " << out << ": " << rows.size() << " predicted rows\n";
  return 0;
}

int cmd_ese(const std::string& dataset_path, const std::string& labels_path,
            const std::string& out) {
  Dataset ds = load_dataset(dataset_path);
  const auto rows = labels_for_dataset(ds, labels_path);
  std::ofstream csv;
  if (!out.empty()) {
    csv.open(out);
    if (!csv) throw ValidationError("cannot open for writing: " + out);
    csv << "sample,status,trusted,repaired,residual,rcond,dimension\n";
  }
  int trusted = 0, fallbacks = 0, singular = 0, repaired = 0;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    EseSolution es = solve_with_labels(ds.grid, ds.samples[i].net_load, rows[i]);
    trusted += es.trusted ? 1 : 0;
    fallbacks += es.status == EseStatus::least_squares_fallback ? 1 : 0;
    singular += es.status == EseStatus::singular ? 1 : 0;
    repaired += es.repaired ? 1 : 0;
    if (csv.is_open())
      csv << i << "," << to_string(es.status) << "," << (es.trusted ? 1 : 0) << ","
          << (es.repaired ? 1 : 0) << "," << num(es.residual_norm) << ","
          << num(es.rcond) << "," << es.x.size() << "\n";
  }
  std::cout << ds.samples.size() << " samples: " << trusted << " trusted, " << fallbacks
            << " least-squares fallbacks, " << singular << " singular, " << repaired
            << " bound-repaired\n";
  if (!out.empty()) std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_validate(const std::string& dataset_path, const std::string& labels_path,
                 const std::string& out) {
  Dataset ds = load_dataset(dataset_path);
  const auto rows = labels_for_dataset(ds, labels_path);
  std::ofstream csv;
  if (!out.empty()) {
    csv.open(out);
    if (!csv) throw ValidationError("cannot open for writing: " + out);
    csv << "sample,trusted,revenue_holds,cost_recovery_ok,max_marginal_gap_rel,"
           "duality_gap_rel,dual_finite\n";
  }
  int trusted = 0, revenue_ok = 0, recovery_ok = 0;
  double worst_gap = 0.0;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Vec& load = ds.samples[i].net_load;
    EseSolution es = solve_with_labels(ds.grid, load, rows[i]);
    OpfSolution sol = to_opf_solution(ds.grid, load, es);
    const Vec lmps = compute_lmps(ds.grid, sol);
    const RevenueAdequacy ra = check_revenue_adequacy(ds.grid, load, sol, lmps);
    const CostRecoveryReport cr = check_cost_recovery(ds.grid, sol, lmps);
    const DualityGap gap = duality_gap(ds.grid, load, sol);
    trusted += es.trusted ? 1 : 0;
    if (es.trusted) {
      revenue_ok += ra.holds ? 1 : 0;
      recovery_ok += cr.all_hold ? 1 : 0;
      if (gap.dual_finite) worst_gap = std::max(worst_gap, gap.gap_rel);
    }
    if (csv.is_open())
      csv << i << "," << (es.trusted ? 1 : 0) << "," << (ra.holds ? 1 : 0) << ","
          << (cr.all_hold ? 1 : 0) << "," << num(cr.max_marginal_gap_rel) << ","
          << num(gap.gap_rel) << "," << (gap.dual_finite ? 1 : 0) << "\n";
  }
  std::cout << ds.samples.size() << " samples, " << trusted
            << " trusted: revenue adequacy " << revenue_ok << ", cost recovery "
            << recovery_ok << ", worst duality gap " << num(worst_gap) << "\n";
  if (!out.empty()) std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_bench(const std::string& grid_path, double eta, int n, std::uint64_t seed,
              const std::string& out) {
  Grid g = load_grid(grid_path);
  BenchResult b = bench_timing(g, eta, n, seed);
  std::cout << "n " << b.n << "\n"
            << "full solve    median " << num(b.qp_median_us) << " us, p95 "
            << num(b.qp_p95_us) << " us\n"
            << "assembled     median " << num(b.ese_median_us) << " us, p95 "
            << num(b.ese_p95_us) << " us\n"
            << "median speedup " << num(b.speedup_median) << "x\n";
  if (!out.empty()) {
    std::ofstream csv(out);
    if (!csv) throw ValidationError("cannot open for writing: " + out);
    csv << "n,qp_median_us,qp_p95_us,ese_median_us,ese_p95_us,speedup_median\n";
    csv << b.n << "," << num(b.qp_median_us) << "," << num(b.qp_p95_us) << ","
        << num(b.ese_median_us) << "," << num(b.ese_p95_us) << ","
        << num(b.speedup_median) << "\n";
    std::cout << "wrote " << out << "\n";
  }
  return 0;
}

int cmd_pipeline(const std::string& config_path) {
  RunConfig cfg = load_run_config(config_path);
  PipelineResult res = run_pipeline(cfg);
  std::cout << "case " << res.case_name << " -> " << res.out_dir << "\n";
  for (const auto& o : res.outcomes) {
    std::cout << "eta " << num(o.eta) << ": misclass gen "
              << num(100.0 * o.misclass.generators()) << "% line "
              << num(100.0 * o.misclass.lines()) << "% load "
              << num(100.0 * o.misclass.load()) << "% wind "
              << num(100.0 * o.misclass.wind()) << "%; trusted " << o.trusted << "/"
              << o.n_test << "; median speedup " << num(o.speedup_median) << "x\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"active-set learning pipeline for DC optimal power flow"};
  app.require_subcommand(1);

  auto* sc_grid = app.add_subcommand("grid-gen", "generate a synthetic grid file");
  int gg_buses = 0;
  std::uint64_t gg_seed = 1;
  std::string gg_profile = "base", gg_out;
  sc_grid->add_option("--buses", gg_buses, "bus count")->required();
  sc_grid->add_option("--seed", gg_seed, "generation seed");
  sc_grid->add_option("--profile", gg_profile, "wind share profile: base or high");
  sc_grid->add_option("--out", gg_out, "output grid file")->required();

  auto* sc_gen = app.add_subcommand("generate", "sample a labeled dataset");
  std::string ge_grid, ge_out;
  double ge_eta = 0.0, ge_demand_eta = 0.0;
  int ge_n = 0;
  std::uint64_t ge_seed = 1;
  sc_gen->add_option("--grid", ge_grid, "grid file")->required();
  sc_gen->add_option("--eta", ge_eta, "wind perturbation level")->required();
  sc_gen->add_option("--n", ge_n, "number of samples")->required();
  sc_gen->add_option("--seed", ge_seed, "dataset seed")->required();
  sc_gen->add_option("--demand-eta", ge_demand_eta, "optional load perturbation level");
  sc_gen->add_option("--out", ge_out, "output dataset file")->required();

  auto* sc_solve = app.add_subcommand("solve", "solve one case at the base forecast");
  std::string so_grid, so_out;
  bool so_no_polish = false;
  double so_tol = 1e-9;
  sc_solve->add_option("--grid", so_grid, "grid file")->required();
  sc_solve->add_option("--out", so_out, "solution file (stdout when omitted)");
  sc_solve->add_flag("--no-polish", so_no_polish, "keep the raw interior-point answer");
  sc_solve->add_option("--tolerance", so_tol, "solver tolerance");

  auto* sc_label = app.add_subcommand("label", "export the true labels of a dataset");
  std::string la_dataset, la_out;
  sc_label->add_option("--dataset", la_dataset, "dataset file")->required();
  sc_label->add_option("--out", la_out, "output labels file")->required();

  auto* sc_train = app.add_subcommand("train", "train the active-set classifier");
  std::string tr_dataset, tr_out;
  int tr_epochs = 1000, tr_batch = 32, tr_patience = 50;
  double tr_lr = 1e-3;
  std::uint64_t tr_seed = 0;
  std::vector<int> tr_hidden;
  sc_train->add_option("--dataset", tr_dataset, "dataset file")->required();
  sc_train->add_option("--epochs", tr_epochs, "maximum epochs");
  sc_train->add_option("--seed", tr_seed, "training seed")->required();
  sc_train->add_option("--batch-size", tr_batch, "minibatch size");
  sc_train->add_option("--lr", tr_lr, "learning rate");
  sc_train->add_option("--hidden", tr_hidden, "hidden layer sizes");
  sc_train->add_option("--patience", tr_patience, "early stopping window, 0 disables");
  sc_train->add_option("--out", tr_out, "output model file")->required();

  auto* sc_pred = app.add_subcommand("predict", "predict labels for a dataset");
  std::string pr_model, pr_dataset, pr_out;
  double pr_threshold = 0.5;
  sc_pred->add_option("--model", pr_model, "model file")->required();
  sc_pred->add_option("--dataset", pr_dataset, "dataset file")->required();
  sc_pred->add_option("--threshold", pr_threshold, "decision threshold");
  sc_pred->add_option("--out", pr_out, "output labels file")->required();

  auto* sc_ese = app.add_subcommand(
      "ese", "assemble and solve the reduced system per sample");
  std::string es_dataset, es_labels, es_out;
  sc_ese->add_option("--dataset", es_dataset, "dataset file")->required();
  sc_ese->add_option("--labels", es_labels, "labels file (true labels when omitted)");
  sc_ese->add_option("--out", es_out, "per-sample CSV report");

  auto* sc_val = app.add_subcommand("validate", "market property checks per sample");
  std::string va_dataset, va_labels, va_out;
  sc_val->add_option("--dataset", va_dataset, "dataset file")->required();
  sc_val->add_option("--labels", va_labels, "labels file (true labels when omitted)");
  sc_val->add_option("--out", va_out, "per-sample CSV report");

  auto* sc_bench = app.add_subcommand("bench", "time full solves against assembly");
  std::string be_grid, be_out;
  double be_eta = 0.0;
  int be_n = 0;
  std::uint64_t be_seed = 1;
  sc_bench->add_option("--grid", be_grid, "grid file")->required();
  sc_bench->add_option("--eta", be_eta, "wind perturbation level")->required();
  sc_bench->add_option("--n", be_n, "number of draws")->required();
  sc_bench->add_option("--seed", be_seed, "draw seed");
  sc_bench->add_option("--out", be_out, "CSV report");

  auto* sc_pipe = app.add_subcommand("pipeline", "run the full study from a config");
  std::string pi_config;
  sc_pipe->add_option("--config", pi_config, "run config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sc_grid->parsed()) return cmd_grid_gen(gg_buses, gg_seed, gg_profile, gg_out);
    if (sc_gen->parsed())
      return cmd_generate(ge_grid, ge_eta, ge_n, ge_seed, ge_demand_eta, ge_out);
    if (sc_solve->parsed()) return cmd_solve(so_grid, so_out, so_no_polish, so_tol);
    if (sc_label->parsed()) return cmd_label(la_dataset, la_out);
    if (sc_train->parsed())
      return cmd_train(tr_dataset, tr_epochs, tr_seed, tr_batch, tr_lr, tr_hidden,
                       tr_patience, tr_out);
    if (sc_pred->parsed()) return cmd_predict(pr_model, pr_dataset, pr_threshold, pr_out);
    if (sc_ese->parsed()) return cmd_ese(es_dataset, es_labels, es_out);
    if (sc_val->parsed()) return cmd_validate(va_dataset, va_labels, va_out);
    if (sc_bench->parsed()) return cmd_bench(be_grid, be_eta, be_n, be_seed, be_out);
    if (sc_pipe->parsed()) return cmd_pipeline(pi_config);
  } catch (const asopf::StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const asopf::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const asopf::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
