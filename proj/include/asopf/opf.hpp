#pragma once

#include <cstdint>
#include <string>

#include "asopf/common.hpp"
#include "asopf/grid.hpp"

namespace asopf {

enum class SolveStatus { optimal, infeasible, numerical_failure };

const char* to_string(SolveStatus s);

struct OpfSolution {
  // Primal block. p covers every generator (uncommitted entries stay 0),
  // shed is per bus, curtail per wind farm; all p.u.
  Vec p;
  Vec shed;
  Vec curtail;

  // Dual block, $/MWh. lambda prices the system balance; mu_* price the
  // directed line limits; alpha_* price the generator limits.
  double lambda = 0.0;
  Vec mu_upper, mu_lower;
  Vec alpha_upper, alpha_lower;

  double objective = 0.0;  // $ per hour
  SolveStatus status = SolveStatus::numerical_failure;
  int iterations = 0;
  std::int64_t wall_time_us = 0;
  bool polished = false;
  std::string message;
};

struct SolveOptions {
  double tolerance = 1e-9;  // relative gap and scaled infeasibility target
  int max_iterations = 100;
  // Snap the converged iterate onto its active set by re-solving the
  // reduced equality system; keeps complementarity products exactly zero.
  bool polish = true;
};

// DC optimal power flow with load-shed and wind-curtailment slacks.
// net_load is demand minus forecast wind per bus (p.u.); slacks are
// deliberately uncapped so the problem is always feasible.
OpfSolution solve_dcopf(const Grid& grid, const Vec& net_load,
                        const SolveOptions& options = {});

// First-order optimality report for a candidate solution.
struct KktReport {
  // Complementarity |multiplier * constraint residual|.
  Vec comp_line_upper, comp_line_lower;
  Vec comp_gen_upper, comp_gen_lower;

  // Gradient conditions. For buses without shedding and farms without
  // curtailment the entry is the negative part of the reduced cost, which
  // must be nonnegative at an optimum.
  Vec stat_gen;      // committed generators, 0 elsewhere
  Vec stat_shed;     // per bus
  Vec stat_curtail;  // per farm

  double balance_residual = 0.0;
  Vec flow_violation;       // per line, amount above the limit
  Vec gen_bound_violation;  // per generator
  double slack_negativity = 0.0;  // worst negative shed/curtail value
  double dual_negativity = 0.0;   // worst negative multiplier

  Vec flows;  // line flows at the candidate point

  double max_complementarity() const;
  double max_stationarity() const;
  double primal_infeasibility() const;
  double max_residual() const;
};

KktReport kkt_residuals(const Grid& grid, const Vec& net_load,
                        const OpfSolution& sol);

// Total generation, shedding and curtailment cost in $ per hour.
double dispatch_cost(const Grid& grid, const OpfSolution& sol);

// Line flows implied by a dispatch, p.u.
Vec compute_flows(const Grid& grid, const Vec& net_load, const OpfSolution& sol);

std::string solution_to_string(const OpfSolution& sol, bool include_timing = true);
void save_solution(const OpfSolution& sol, const std::string& path);

}  // namespace asopf
