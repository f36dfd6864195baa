#include "asopf/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "asopf/ese.hpp"
#include "asopf/market.hpp"
#include "asopf/rng.hpp"
#include "serial_util.hpp"

namespace asopf {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string eta_dir_name(double eta) { return "eta_" + num(eta); }

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto idx = static_cast<std::size_t>(
      std::min<double>(static_cast<double>(v.size()) - 1.0,
                       std::max(0.0, std::ceil(q * static_cast<double>(v.size())) - 1.0)));
  return v[idx];
}

double median(const std::vector<double>& v) { return percentile(v, 0.5); }

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::string& header) : out_(path) {
    if (!out_) throw ValidationError("cannot open for writing: " + path.string());
    out_ << header << "\n";
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i)
      out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
  }
  ~CsvWriter() = default;

 private:
  std::ofstream out_;
};

Grid resolve_grid(const RunConfig& cfg) {
  if (!cfg.grid_file.empty()) return load_grid(cfg.grid_file);
  return generate_synthetic_grid(cfg.synthetic_buses, cfg.synthetic_seed,
                                 cfg.wind_profile);
}

std::string case_name(const RunConfig& cfg) {
  if (!cfg.grid_file.empty()) {
    auto stem = fs::path(cfg.grid_file).stem().string();
    return stem.empty() ? std::string("grid") : stem;
  }
  std::string name = "S" + std::to_string(cfg.synthetic_buses);
  name += cfg.wind_profile == WindProfile::high ? "H" : "B";
  return name;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  detail::json j = detail::read_json_file(path, "run config");
  RunConfig cfg;
  try {
    const auto& g = j.at("grid");
    if (g.contains("file")) cfg.grid_file = g.at("file").get<std::string>();
    if (g.contains("synthetic_buses"))
      cfg.synthetic_buses = g.at("synthetic_buses").get<int>();
    if (g.contains("synthetic_seed"))
      cfg.synthetic_seed = g.at("synthetic_seed").get<std::uint64_t>();
    if (g.contains("wind_profile")) {
      const std::string p = g.at("wind_profile").get<std::string>();
      if (p == "base") cfg.wind_profile = WindProfile::base;
      else if (p == "high") cfg.wind_profile = WindProfile::high;
      else throw ValidationError("wind_profile must be 'base' or 'high'");
    }
    if (j.contains("etas")) cfg.etas = j.at("etas").get<std::vector<double>>();
    if (j.contains("n_samples")) cfg.n_samples = j.at("n_samples").get<int>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("demand_eta")) cfg.demand_eta = j.at("demand_eta").get<double>();
    if (j.contains("threshold")) cfg.threshold = j.at("threshold").get<double>();
    if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("train")) {
      const auto& t = j.at("train");
      if (t.contains("hidden")) cfg.train.hidden = t.at("hidden").get<std::vector<int>>();
      if (t.contains("epochs")) cfg.train.epochs = t.at("epochs").get<int>();
      if (t.contains("batch_size")) cfg.train.batch_size = t.at("batch_size").get<int>();
      if (t.contains("learning_rate"))
        cfg.train.learning_rate = t.at("learning_rate").get<double>();
      if (t.contains("early_stop_window"))
        cfg.train.early_stop_window = t.at("early_stop_window").get<int>();
      if (t.contains("early_stop_tol"))
        cfg.train.early_stop_tol = t.at("early_stop_tol").get<double>();
    }
    if (j.contains("solve")) {
      const auto& s = j.at("solve");
      if (s.contains("tolerance")) cfg.solve.tolerance = s.at("tolerance").get<double>();
      if (s.contains("max_iterations"))
        cfg.solve.max_iterations = s.at("max_iterations").get<int>();
      if (s.contains("polish")) cfg.solve.polish = s.at("polish").get<bool>();
    }
  } catch (const detail::json::exception& e) {
    throw ValidationError(std::string("malformed run config '") + path + "': " + e.what());
  }
  return cfg;
}

void validate_run_config(const RunConfig& cfg) {
  const bool has_file = !cfg.grid_file.empty();
  const bool has_synth = cfg.synthetic_buses != 0;
  if (has_file == has_synth)
    throw ValidationError("exactly one grid source is required: a file or a "
                          "synthetic bus count");
  if (has_file && !fs::exists(cfg.grid_file))
    throw ValidationError("grid file does not exist: " + cfg.grid_file);
  if (has_synth && cfg.synthetic_buses < 2)
    throw ValidationError("synthetic grids need at least 2 buses");
  if (cfg.etas.empty()) throw ValidationError("at least one eta is required");
  for (double eta : cfg.etas)
    if (eta < 0.0 || eta >= 1.0) throw ValidationError("eta must lie in [0, 1)");
  if (cfg.n_samples < 2 || cfg.n_samples % 2 != 0)
    throw ValidationError("sample count must be even and at least 2");
  if (cfg.demand_eta < 0.0 || cfg.demand_eta >= 1.0)
    throw ValidationError("demand eta must lie in [0, 1)");
  if (cfg.threshold <= 0.0 || cfg.threshold >= 1.0)
    throw ValidationError("decision threshold must lie in (0, 1)");
  if (cfg.out_dir.empty()) throw ValidationError("output directory is required");
  if (cfg.train.epochs < 1) throw ValidationError("epoch count must be positive");
  if (cfg.train.batch_size < 1) throw ValidationError("batch size must be positive");
  if (cfg.train.learning_rate <= 0.0)
    throw ValidationError("learning rate must be positive");
}

PipelineResult run_pipeline(const RunConfig& cfg) {
  validate_run_config(cfg);
  const auto t_start = now_us();

  Grid grid = resolve_grid(cfg);

  PipelineResult result;
  result.case_name = case_name(cfg);
  result.out_dir = cfg.out_dir;

  const fs::path root(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw ValidationError("cannot create output directory: " + root.string());

  Vec demand(grid.bus_count());
  for (int i = 0; i < grid.bus_count(); ++i) demand[i] = grid.buses[i].load;
  Vec w0(grid.wind_count());
  for (int w = 0; w < grid.wind_count(); ++w) w0[w] = grid.wind_farms[w].forecast;

  save_grid(grid, (root / "grid.json").string());

  const int nb = grid.bus_count();
  const auto committed = grid.committed_indices();
  const int ng = static_cast<int>(committed.size());

  for (std::size_t ei = 0; ei < cfg.etas.size(); ++ei) {
    const double eta = cfg.etas[ei];
    EtaOutcome out;
    out.eta = eta;

    const fs::path dir = root / eta_dir_name(eta);
    fs::create_directories(dir, ec);
    if (ec) throw ValidationError("cannot create output directory: " + dir.string());

    DatagenOptions dopts;
    dopts.demand_eta = cfg.demand_eta;
    dopts.solve = cfg.solve;
    Dataset ds;
    try {
      ds = build_dataset(grid, demand, w0, eta, cfg.n_samples,
                         derive_seed(cfg.seed, "dataset", ei), dopts);
    } catch (const NumericalError& e) {
      throw StageError("dataset", e.what());
    }
    save_dataset(ds, (dir / "dataset.json").string());

    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, "train", ei);
    TrainResult trained;
    try {
      trained = train_classifier(ds, tc);
    } catch (const NumericalError& e) {
      throw StageError("train", e.what());
    }
    save_model(trained.model, (dir / "model.json").string());

    out.misclass =
        misclassification_report(trained.model, ds, ds.test_indices, cfg.threshold);
    out.n_test = static_cast<int>(ds.test_indices.size());

    Vec bus_err_sum = Vec::Zero(nb);
    Vec bus_err_max = Vec::Zero(nb);
    Vec gen_err_sum = Vec::Zero(ng);
    Vec gen_err_max = Vec::Zero(ng);
    std::vector<double> qp_us, ese_us;

    CsvWriter per_sample(dir / "per_sample.csv",
                         "sample,status,trusted,repaired,residual,misclassified_bits,"
                         "max_lmp_err,max_p_err,revenue_holds,cost_recovery_ok,"
                         "duality_gap_rel");
    const LabelManifest manifest = LabelManifest::for_grid(grid);

    for (int idx : ds.test_indices) {
      const Sample& s = ds.samples[static_cast<std::size_t>(idx)];
      const ActiveSetLabels pred =
          predict_labels(trained.model, ds.features(idx), cfg.threshold);

      EseSolution es = solve_with_labels(grid, s.net_load, pred);
      OpfSolution assembled = to_opf_solution(grid, s.net_load, es);

      const Vec lmp_true = compute_lmps(grid, s.truth);
      const Vec lmp_pred = compute_lmps(grid, assembled);
      const Vec dlmp = (lmp_pred - lmp_true).cwiseAbs();
      Vec dp(ng);
      for (int ci = 0; ci < ng; ++ci)
        dp[ci] = std::abs(assembled.p[committed[ci]] - s.truth.p[committed[ci]]);

      bus_err_sum += dlmp;
      bus_err_max = bus_err_max.cwiseMax(dlmp);
      gen_err_sum += dp;
      gen_err_max = gen_err_max.cwiseMax(dp);
      const double max_dlmp = nb > 0 ? dlmp.maxCoeff() : 0.0;
      const double max_dp = ng > 0 ? dp.maxCoeff() : 0.0;
      out.max_lmp_err = std::max(out.max_lmp_err, max_dlmp);
      out.max_p_err = std::max(out.max_p_err, max_dp);

      if (es.trusted) out.trusted += 1; else out.untrusted += 1;
      if (es.status == EseStatus::least_squares_fallback) out.fallbacks += 1;
      if (es.status == EseStatus::singular) out.singular += 1;
      if (es.repaired) out.repaired += 1;

      bool revenue_ok = false;
      bool recovery_ok = false;
      double gap_rel = 0.0;
      if (es.status != EseStatus::singular) {
        const RevenueAdequacy ra =
            check_revenue_adequacy(grid, s.net_load, assembled, lmp_pred);
        const CostRecoveryReport cr = check_cost_recovery(grid, assembled, lmp_pred);
        const DualityGap gap = duality_gap(grid, s.net_load, assembled);
        revenue_ok = ra.holds;
        recovery_ok = cr.all_hold;
        gap_rel = gap.dual_finite ? gap.gap_rel : 1.0;
        if (es.trusted) {
          if (ra.holds) out.revenue_holds += 1;
          out.cost_recovery_units += static_cast<long>(cr.gens.size());
          for (const auto& gcr : cr.gens)
            if (!gcr.holds) out.cost_recovery_violations += 1;
          if (cr.max_marginal_gap_rel > 1e-6) out.marginal_equality_breaks += 1;
          out.max_duality_gap_rel = std::max(out.max_duality_gap_rel, gap_rel);
        }
      }

      int wrong_bits = 0;
      {
        const auto tb = s.labels.flat(manifest);
        const auto pb = pred.flat(manifest);
        for (std::size_t v = 0; v < tb.size(); ++v)
          if (tb[v] != pb[v]) ++wrong_bits;
      }

      qp_us.push_back(static_cast<double>(s.truth.wall_time_us));
      ese_us.push_back(static_cast<double>(es.build_us + es.solve_us));

      per_sample.row({std::to_string(idx), to_string(es.status),
                      es.trusted ? "1" : "0", es.repaired ? "1" : "0",
                      num(es.residual_norm), std::to_string(wrong_bits), num(max_dlmp),
                      num(max_dp), revenue_ok ? "1" : "0", recovery_ok ? "1" : "0",
                      num(gap_rel)});
    }

    const double denom = std::max(1, out.n_test);
    int buses_ok = 0;
    {
      CsvWriter per_bus(dir / "per_bus.csv",
                        "bus,mean_abs_lmp_err,max_abs_lmp_err,within_tol");
      for (int i = 0; i < nb; ++i) {
        const double mean_err = bus_err_sum[i] / denom;
        const bool ok = mean_err <= kLmpErrTol;
        buses_ok += ok ? 1 : 0;
        out.max_mean_abs_lmp_err = std::max(out.max_mean_abs_lmp_err, mean_err);
        per_bus.row({std::to_string(i + 1), num(mean_err), num(bus_err_max[i]),
                     ok ? "1" : "0"});
      }
    }
    out.frac_buses_within_lmp = nb > 0 ? static_cast<double>(buses_ok) / nb : 1.0;

    int gens_ok = 0;
    {
      CsvWriter per_gen(dir / "per_gen.csv",
                        "generator,mean_abs_p_err,max_abs_p_err,within_tol");
      for (int ci = 0; ci < ng; ++ci) {
        const double mean_err = gen_err_sum[ci] / denom;
        const bool ok = mean_err <= kDispatchErrTol;
        gens_ok += ok ? 1 : 0;
        out.max_mean_abs_p_err = std::max(out.max_mean_abs_p_err, mean_err);
        per_gen.row({std::to_string(committed[ci] + 1), num(mean_err),
                     num(gen_err_max[ci]), ok ? "1" : "0"});
      }
    }
    out.frac_gens_within_p = ng > 0 ? static_cast<double>(gens_ok) / ng : 1.0;

    out.qp_median_us = median(qp_us);
    out.qp_p95_us = percentile(qp_us, 0.95);
    out.ese_median_us = median(ese_us);
    out.ese_p95_us = percentile(ese_us, 0.95);
    out.speedup_median = out.ese_median_us > 0 ? out.qp_median_us / out.ese_median_us : 0;

    result.outcomes.push_back(out);
  }

  {
    CsvWriter csv(root / "misclassification.csv",
                  "eta,n_test,gen_rate,line_rate,load_rate,wind_rate");
    for (const auto& o : result.outcomes)
      csv.row({num(o.eta), std::to_string(o.n_test), num(o.misclass.generators()),
               num(o.misclass.lines()), num(o.misclass.load()),
               num(o.misclass.wind())});
  }
  {
    CsvWriter csv(root / "error_summary.csv",
                  "eta,n_test,max_mean_abs_lmp_err,frac_buses_within_tol,"
                  "max_mean_abs_p_err,frac_gens_within_tol,max_lmp_err,max_p_err");
    for (const auto& o : result.outcomes)
      csv.row({num(o.eta), std::to_string(o.n_test), num(o.max_mean_abs_lmp_err),
               num(o.frac_buses_within_lmp), num(o.max_mean_abs_p_err),
               num(o.frac_gens_within_p), num(o.max_lmp_err), num(o.max_p_err)});
  }
  {
    CsvWriter csv(root / "market_summary.csv",
                  "eta,n_test,trusted,untrusted,fallbacks,singular,repaired,"
                  "revenue_holds,cost_recovery_units,cost_recovery_violations,"
                  "marginal_equality_breaks,max_duality_gap_rel");
    for (const auto& o : result.outcomes)
      csv.row({num(o.eta), std::to_string(o.n_test), std::to_string(o.trusted),
               std::to_string(o.untrusted), std::to_string(o.fallbacks),
               std::to_string(o.singular), std::to_string(o.repaired),
               std::to_string(o.revenue_holds), std::to_string(o.cost_recovery_units),
               std::to_string(o.cost_recovery_violations),
               std::to_string(o.marginal_equality_breaks),
               num(o.max_duality_gap_rel)});
  }
  {
    CsvWriter csv(root / "timing.csv",
                  "eta,n_test,qp_median_us,qp_p95_us,ese_median_us,ese_p95_us,"
                  "speedup_median");
    for (const auto& o : result.outcomes)
      csv.row({num(o.eta), std::to_string(o.n_test), num(o.qp_median_us),
               num(o.qp_p95_us), num(o.ese_median_us), num(o.ese_p95_us),
               num(o.speedup_median)});
  }

  {
    detail::json man;
    man["schema_version"] = 1;
    man["case"] = result.case_name;
    man["grid"] = {{"buses", grid.bus_count()},
                   {"lines", grid.line_count()},
                   {"generators", grid.gen_count()},
                   {"wind_farms", grid.wind_count()}};
    man["etas"] = cfg.etas;
    man["n_samples"] = cfg.n_samples;
    man["seed"] = cfg.seed;
    man["threshold"] = cfg.threshold;
    man["outputs"] = {"grid.json", "misclassification.csv", "error_summary.csv",
                      "market_summary.csv", "timing.csv"};
    detail::json dirs = detail::json::array();
    for (double eta : cfg.etas) dirs.push_back(eta_dir_name(eta));
    man["eta_dirs"] = std::move(dirs);
    man["wall_time_us"] = elapsed_us(t_start);
    detail::write_json_file(man, (root / "manifest.json").string(), "manifest");
  }

  return result;
}

BenchResult bench_timing(const Grid& grid, double eta, int n, std::uint64_t seed) {
  Vec demand(grid.bus_count());
  for (int i = 0; i < grid.bus_count(); ++i) demand[i] = grid.buses[i].load;
  Vec w0(grid.wind_count());
  for (int w = 0; w < grid.wind_count(); ++w) w0[w] = grid.wind_farms[w].forecast;

  Dataset ds = build_dataset(grid, demand, w0, eta, n, seed);
  BenchResult out;
  out.n = static_cast<int>(ds.samples.size());
  std::vector<double> qp_us, ese_us;
  for (const auto& s : ds.samples) {
    qp_us.push_back(static_cast<double>(s.truth.wall_time_us));
    EseSolution es = solve_with_labels(grid, s.net_load, s.labels);
    ese_us.push_back(static_cast<double>(es.build_us + es.solve_us));
  }
  out.qp_median_us = median(qp_us);
  out.qp_p95_us = percentile(qp_us, 0.95);
  out.ese_median_us = median(ese_us);
  out.ese_p95_us = percentile(ese_us, 0.95);
  out.speedup_median = out.ese_median_us > 0 ? out.qp_median_us / out.ese_median_us : 0;
  return out;
}

}  // namespace asopf
