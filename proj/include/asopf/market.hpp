#pragma once

#include <string>
#include <vector>

#include "asopf/common.hpp"
#include "asopf/grid.hpp"
#include "asopf/opf.hpp"

namespace asopf {

// Nodal price: the balance price plus each binding line's shadow price
// spread through the sensitivity of that line to the bus. $/MWh.
Vec compute_lmps(const Grid& grid, const OpfSolution& sol);

// Settlement sums in $ per hour. Payments to generators plus the penalty
// bill must not exceed what the served load pays.
struct RevenueAdequacy {
  double generator_payment = 0;
  double shed_cost = 0;
  double curtail_cost = 0;
  double load_payment = 0;
  double margin = 0;  // load_payment - (generator_payment + penalties)
  bool holds = false;
};

RevenueAdequacy check_revenue_adequacy(const Grid& grid, const Vec& net_load,
                                       const OpfSolution& sol, const Vec& lmps);

// Per-unit settlement against the gradient of the dispatch cost. The bound
// uses the gradient form 2*c2*p^2 + c1*p; the plain cost c2*p^2 + c1*p is
// reported alongside since it is never larger.
struct GenCostRecovery {
  int gen = -1;
  double revenue = 0;        // $ per hour
  double gradient_cost = 0;  // 2*c2*p^2 + c1*p
  double plain_cost = 0;     // c2*p^2 + c1*p
  bool holds = false;
  bool marginal = false;  // strictly between its limits
  double marginal_gap_rel = 0;  // |revenue - gradient_cost| / max(1, |revenue|)
};

struct CostRecoveryReport {
  std::vector<GenCostRecovery> gens;
  bool all_hold = true;
  int n_marginal = 0;
  double max_marginal_gap_rel = 0;
};

CostRecoveryReport check_cost_recovery(const Grid& grid, const OpfSolution& sol,
                                       const Vec& lmps);

// Objective of the dual problem at the candidate multipliers, minimized
// exactly over the boxed primal variables. For a feasible multiplier set
// the gap to the primal objective is zero at an optimum.
struct DualityGap {
  double primal = 0;  // $ per hour
  double dual = 0;
  double gap_abs = 0;
  double gap_rel = 0;      // against max(1, |primal|)
  bool dual_finite = true;  // false when a slack price condition is violated
};

DualityGap duality_gap(const Grid& grid, const Vec& net_load, const OpfSolution& sol);

}  // namespace asopf
