#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "asopf/common.hpp"
#include "asopf/grid.hpp"
#include "asopf/opf.hpp"

namespace asopf {

// Flat bit layout: [gen_upper | gen_lower | line_upper | line_lower | shed
// | curtail]. Generator blocks cover committed units only, in the order of
// Grid::committed_indices().
struct LabelManifest {
  int n_gen = 0;
  int n_line = 0;
  int n_bus = 0;
  int n_wind = 0;

  static LabelManifest for_grid(const Grid& g);

  int total() const { return 2 * n_gen + 2 * n_line + n_bus + n_wind; }

  // Category of a flat position: 0 generators, 1 lines, 2 load, 3 wind.
  int category(int flat) const;

  bool operator==(const LabelManifest&) const = default;
};

struct ActiveSetLabels {
  std::vector<std::uint8_t> gen_upper, gen_lower;
  std::vector<std::uint8_t> line_upper, line_lower;
  std::vector<std::uint8_t> shed;
  std::vector<std::uint8_t> curtail;

  // Magnitude behind each bit: the multiplier for constraint bits, the
  // slack value for shed/curtail bits. Filled by extract_labels; empty on
  // predicted label sets.
  Vec gen_upper_val, gen_lower_val;
  Vec line_upper_val, line_lower_val;
  Vec shed_val, curtail_val;

  bool has_values() const { return gen_upper_val.size() == static_cast<Eigen::Index>(gen_upper.size()); }

  std::vector<std::uint8_t> flat(const LabelManifest& m) const;
  Vec values_flat(const LabelManifest& m) const;
  static ActiveSetLabels from_flat(const LabelManifest& m,
                                   const std::vector<std::uint8_t>& bits);
};

// A dual bit requires a multiplier clearly above noise AND the matching
// constraint to actually sit on its bound; tight constraints with vanishing
// multipliers stay inactive.
constexpr double kTolDual = 1e-6;   // $/MWh
constexpr double kTolSlack = 1e-6;  // p.u.

ActiveSetLabels extract_labels(const Grid& grid, const Vec& net_load,
                               const OpfSolution& sol, double tol_dual = kTolDual,
                               double tol_slack = kTolSlack);

struct LabelStatistics {
  Vec frequency;  // per flat bit, fraction of samples active
  Vec max_value;  // per flat bit, max |magnitude| across samples
};

// Requires every label set in the batch to carry magnitudes.
LabelStatistics label_statistics(const LabelManifest& m,
                                 const std::vector<ActiveSetLabels>& batch);

void save_labels(const LabelManifest& m, const std::vector<ActiveSetLabels>& batch,
                 const std::string& path);
std::pair<LabelManifest, std::vector<ActiveSetLabels>> load_labels(const std::string& path);

}  // namespace asopf
