#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asopf/common.hpp"

namespace asopf {

struct Bus {
  double load = 0.0;          // nominal demand, p.u.
  double shed_penalty = 0.0;  // $/MWh charged per unit of load not served
};

struct Line {
  int from = 0;
  int to = 0;
  double susceptance = 0.0;  // p.u., > 0
  double flow_limit = 0.0;   // p.u., thermal limit, applies in both directions
};

struct Generator {
  int bus = 0;
  double p_min = 0.0;
  double p_max = 0.0;
  double cost_quad = 0.0;  // $/MWh per p.u. of dispatch (see common.hpp)
  double cost_lin = 0.0;   // $/MWh
  bool committed = true;
};

struct WindFarm {
  int bus = 0;
  double forecast = 0.0;        // nominal injection, p.u.
  double curtail_penalty = 0.0; // $/MWh per unit curtailed
};

// Buses are indexed 0..B-1 internally; files use 1-based ids.
struct Grid {
  std::vector<Bus> buses;
  std::vector<Line> lines;
  std::vector<Generator> generators;
  std::vector<WindFarm> wind_farms;
  int slack_bus = 0;

  // Injection-to-flow sensitivities, lines x buses. Column slack_bus is
  // identically zero. Built by finalize(); never serialized.
  Mat ptdf;

  int bus_count() const { return static_cast<int>(buses.size()); }
  int line_count() const { return static_cast<int>(lines.size()); }
  int gen_count() const { return static_cast<int>(generators.size()); }
  int wind_count() const { return static_cast<int>(wind_farms.size()); }

  std::vector<int> committed_indices() const;

  // Nominal net load per bus: demand minus forecast wind at that bus.
  Vec base_net_load() const;

  // Throws ValidationError on bad ids/values, NumericalError never.
  void validate() const;

  // validate() + PTDF construction.
  void finalize();

  // Moves the angle reference and rebuilds the PTDF.
  void set_slack(int bus);
};

double effective_quad_cost(const Generator& g);

// Builds the PTDF by factoring the slack-reduced nodal susceptance matrix
// once (partial-pivot LU) and back-solving one right-hand side per line.
// Throws ValidationError for non-positive susceptance, NumericalError if
// the network is disconnected.
Mat compute_ptdf(int n_buses, const std::vector<Line>& lines, int slack_bus);

enum class WindProfile { base, high };

// Deterministic synthetic grid: ~1.2 lines, ~0.2 generators and ~0.018
// wind farms per bus (at least one of each), connected topology, distinct
// shed penalties, and line limits tuned so the nominal case solves with a
// small congested set.
Grid generate_synthetic_grid(int n_buses, std::uint64_t seed,
                             WindProfile profile = WindProfile::base);

Grid load_grid(const std::string& path);
void save_grid(const Grid& grid, const std::string& path);

// Serialized form (same bytes save_grid writes), for reproducibility checks.
std::string grid_to_string(const Grid& grid);

}  // namespace asopf
