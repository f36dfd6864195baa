#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asopf/common.hpp"
#include "asopf/grid.hpp"
#include "asopf/labels.hpp"
#include "asopf/opf.hpp"

namespace asopf {

// Given the active set, the optimality conditions collapse to one square
// linear system in the remaining primal variables and the nonzero
// multipliers. Saturated generators are constants and get folded into the
// load before assembly.

enum class EseStatus { solved, least_squares_fallback, singular };
const char* to_string(EseStatus s);

struct EseRow {
  enum class Kind {
    line_upper,           // flow pinned at +limit
    line_lower,           // flow pinned at -limit
    gen_stationarity,     // free generator gradient
    shed_stationarity,    // active shed price condition
    curtail_stationarity, // active curtailment price condition
    balance,
  };
  Kind kind;
  int entity = -1;  // line / generator / bus / farm index
};

std::string to_string(const EseRow& row);

struct EseSystem {
  Mat a;
  Vec b;
  std::vector<EseRow> rows;

  // Column bookkeeping, in column order after the listed offsets.
  std::vector<int> free_gens;       // generator indices
  std::vector<int> shed_buses;      // bus indices
  std::vector<int> curtail_farms;   // wind farm indices
  std::vector<int> up_lines;        // line indices with active upper limit
  std::vector<int> dn_lines;        // line indices with active lower limit

  std::vector<int> saturated_gens;  // folded out, full generator indices
  Vec fixed_p;                      // full-size dispatch of folded units
  Vec folded_load;                  // net load minus saturated output

  int dimension() const { return static_cast<int>(a.rows()); }
  // Size under the convention that keeps every committed generator as an
  // unknown instead of folding the saturated ones out.
  int nominal_dimension() const {
    return dimension() + static_cast<int>(saturated_gens.size());
  }

  int col_p(int j) const { return j; }
  int col_s(int j) const { return static_cast<int>(free_gens.size()) + j; }
  int col_c(int j) const { return col_s(static_cast<int>(shed_buses.size())) + j; }
  int col_lambda() const { return col_c(static_cast<int>(curtail_farms.size())); }
  int col_mu_up(int j) const { return col_lambda() + 1 + j; }
  int col_mu_dn(int j) const { return col_mu_up(static_cast<int>(up_lines.size())) + j; }
};

EseSystem build_ese(const Grid& grid, const Vec& net_load, const ActiveSetLabels& labels);

struct EseAudit {
  double max_flow_violation = 0;
  double max_bound_violation = 0;
  double worst_negative_multiplier = 0;
  double worst_negative_slack = 0;
  double max_stationarity = 0;
  double max_complementarity = 0;
  double balance_residual = 0;
  double worst() const;
};

struct EseSolution {
  Vec x;                   // stacked unknowns in system column order
  Vec p, shed, curtail;    // full grid sizes
  double lambda = 0;
  Vec mu_upper, mu_lower;  // full line sizes
  EseStatus status = EseStatus::singular;
  double residual_norm = 0;  // inf-norm of A x - b
  double rcond = 0;
  std::int64_t build_us = 0;
  std::int64_t solve_us = 0;
  bool trusted = false;
  bool repaired = false;
  EseAudit audit;
  std::string message;
};

// Residual ceiling past which a solution is reported but never trusted.
constexpr double kEseResidualTrust = 1e-4;
// Optimality-condition ceiling for the trusted flag.
constexpr double kEseAuditTrust = 1e-5;

EseSolution solve_ese(const EseSystem& sys);

struct EseOptions {
  bool repair_bounds = true;  // clamp out-of-range free units once and re-solve
  bool audit = true;
};

EseSolution solve_with_labels(const Grid& grid, const Vec& net_load,
                              const ActiveSetLabels& labels,
                              const EseOptions& opts = {});

// Expands an assembled system solution back to the full multiplier set;
// saturated units recover their bound prices from the gradient condition.
OpfSolution to_opf_solution(const Grid& grid, const Vec& net_load,
                            const EseSolution& es);

// Snaps a converged interior-point iterate onto its active set. Returns
// false (leaving sol untouched) when the reduced system cannot certify it.
bool try_polish(const Grid& grid, const Vec& net_load, OpfSolution& sol);

}  // namespace asopf
