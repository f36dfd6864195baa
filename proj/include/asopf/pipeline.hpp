#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asopf/common.hpp"
#include "asopf/datagen.hpp"
#include "asopf/grid.hpp"
#include "asopf/mlp.hpp"
#include "asopf/opf.hpp"

namespace asopf {

// Error ceilings used by the reports: a bus counts as accurate when its
// mean absolute price error stays below kLmpErrTol, a unit when its mean
// absolute dispatch error stays below kDispatchErrTol.
constexpr double kLmpErrTol = 0.1;       // $/MWh
constexpr double kDispatchErrTol = 0.01; // p.u.

struct RunConfig {
  // Exactly one of the two grid sources.
  std::string grid_file;
  int synthetic_buses = 0;
  std::uint64_t synthetic_seed = 1;
  WindProfile wind_profile = WindProfile::base;

  std::vector<double> etas = {0.01};
  int n_samples = 1000;
  std::uint64_t seed = 1;
  double demand_eta = 0.0;
  TrainConfig train;
  double threshold = 0.5;
  std::string out_dir = "out";
  SolveOptions solve;
};

RunConfig load_run_config(const std::string& path);
void validate_run_config(const RunConfig& cfg);

struct EtaOutcome {
  double eta = 0;
  int n_test = 0;
  MisclassificationReport misclass;

  // Predicted system against ground truth over the test split.
  double max_mean_abs_lmp_err = 0;  // worst bus, $/MWh
  double frac_buses_within_lmp = 0;
  double max_mean_abs_p_err = 0;  // worst unit, p.u.
  double frac_gens_within_p = 0;
  double max_lmp_err = 0;  // worst single entry
  double max_p_err = 0;

  int trusted = 0, untrusted = 0, fallbacks = 0, singular = 0, repaired = 0;
  int revenue_holds = 0;  // out of the trusted solutions
  long cost_recovery_units = 0;
  long cost_recovery_violations = 0;
  int marginal_equality_breaks = 0;
  double max_duality_gap_rel = 0;

  double qp_median_us = 0, qp_p95_us = 0;
  double ese_median_us = 0, ese_p95_us = 0;
  double speedup_median = 0;  // qp_median / ese_median
};

struct PipelineResult {
  std::string case_name;
  std::string out_dir;
  std::vector<EtaOutcome> outcomes;
};

// End to end: dataset, training, prediction, assembled solutions, market
// checks, report files. One subdirectory per eta under cfg.out_dir plus
// cross-eta summary tables.
PipelineResult run_pipeline(const RunConfig& cfg);

struct BenchResult {
  int n = 0;
  double qp_median_us = 0, qp_p95_us = 0;
  double ese_median_us = 0, ese_p95_us = 0;
  double speedup_median = 0;
};

// Times the full solver against the assembled system under the true active
// set on n fresh draws.
BenchResult bench_timing(const Grid& grid, double eta, int n, std::uint64_t seed);

}  // namespace asopf
