#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asopf/common.hpp"
#include "asopf/grid.hpp"
#include "asopf/labels.hpp"
#include "asopf/opf.hpp"

namespace asopf {

// Multiplicative wind perturbation: w = w0 .* (1 + eta * xi) with xi
// standard normal per farm, clamped at zero.
Vec perturb_wind(const Vec& w0, double eta, const Vec& xi);
Vec perturb_wind(const Vec& w0, double eta, std::uint64_t seed);

Vec compute_load_flows(const Mat& ptdf, const Vec& net_load);

struct Sample {
  std::uint64_t seed = 0;  // seed the accepted draw came from
  Vec wind;                // realized injection per farm, p.u.
  Vec net_load;            // demand minus realized wind, per bus
  Vec load_flows;          // ptdf * net_load
  ActiveSetLabels labels;
  OpfSolution truth;
};

struct Dataset {
  Grid grid;
  double eta = 0;
  double demand_eta = 0;
  std::uint64_t seed = 0;
  std::vector<Sample> samples;
  std::vector<int> train_indices, test_indices;

  int feature_dim() const { return grid.bus_count() + grid.line_count(); }
  Vec features(int idx) const;
};

struct DatagenOptions {
  double demand_eta = 0.0;  // optional load-side perturbation, same form
  double max_failure_fraction = 0.05;
  int max_attempts_per_sample = 10;
  SolveOptions solve;
};

// Draws n_samples wind realizations around w0, solves each to optimality
// and labels the active set. A failed solve is redrawn under a fresh seed;
// too many failures abort the run. Even n_samples is split half train,
// half test by a seeded shuffle.
Dataset build_dataset(const Grid& grid, const Vec& demand, const Vec& w0, double eta,
                      int n_samples, std::uint64_t seed,
                      const DatagenOptions& opts = {});

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace asopf
