#include "asopf/market.hpp"

#include <algorithm>
#include <cmath>

namespace asopf {

Vec compute_lmps(const Grid& grid, const OpfSolution& sol) {
  const int nb = grid.bus_count();
  if (sol.mu_upper.size() != grid.line_count() || sol.mu_lower.size() != grid.line_count())
    throw ValidationError("solution line multipliers do not match the grid");
  Vec lmps = Vec::Constant(nb, sol.lambda);
  if (grid.line_count() > 0)
    lmps += grid.ptdf.transpose() * Vec(sol.mu_lower - sol.mu_upper);
  return lmps;
}

RevenueAdequacy check_revenue_adequacy(const Grid& grid, const Vec& net_load,
                                       const OpfSolution& sol, const Vec& lmps) {
  if (net_load.size() != grid.bus_count() || lmps.size() != grid.bus_count())
    throw ValidationError("net load or price vector does not match the grid");
  RevenueAdequacy out;
  for (int g = 0; g < grid.gen_count(); ++g)
    out.generator_payment += lmps[grid.generators[g].bus] * sol.p[g];
  for (int i = 0; i < grid.bus_count(); ++i) {
    out.shed_cost += grid.buses[i].shed_penalty * sol.shed[i];
    out.load_payment += lmps[i] * (net_load[i] - sol.shed[i]);
  }
  for (int w = 0; w < grid.wind_count(); ++w)
    out.curtail_cost += grid.wind_farms[w].curtail_penalty * sol.curtail[w];
  out.generator_payment *= kBaseMva;
  out.shed_cost *= kBaseMva;
  out.curtail_cost *= kBaseMva;
  out.load_payment *= kBaseMva;
  out.margin =
      out.load_payment - out.generator_payment - out.shed_cost - out.curtail_cost;
  out.holds = out.margin >= -1e-6 * std::max(1.0, std::abs(out.load_payment));
  return out;
}

CostRecoveryReport check_cost_recovery(const Grid& grid, const OpfSolution& sol,
                                       const Vec& lmps) {
  CostRecoveryReport rep;
  for (int g = 0; g < grid.gen_count(); ++g) {
    const auto& gen = grid.generators[g];
    if (!gen.committed) continue;
    GenCostRecovery r;
    r.gen = g;
    const double p = sol.p[g];
    r.revenue = lmps[gen.bus] * p * kBaseMva;
    r.gradient_cost = (2.0 * gen.cost_quad * p * p + gen.cost_lin * p) * kBaseMva;
    r.plain_cost = (gen.cost_quad * p * p + gen.cost_lin * p) * kBaseMva;
    const double tol = 1e-6 * std::max(1.0, std::abs(r.revenue));
    r.holds = r.gradient_cost <= r.revenue + tol;
    r.marginal = p > gen.p_min + 1e-7 && p < gen.p_max - 1e-7;
    if (r.marginal) {
      r.marginal_gap_rel =
          std::abs(r.revenue - r.gradient_cost) / std::max(1.0, std::abs(r.revenue));
      rep.n_marginal += 1;
      rep.max_marginal_gap_rel = std::max(rep.max_marginal_gap_rel, r.marginal_gap_rel);
    }
    rep.all_hold = rep.all_hold && r.holds;
    rep.gens.push_back(r);
  }
  return rep;
}

DualityGap duality_gap(const Grid& grid, const Vec& net_load, const OpfSolution& sol) {
  const int nb = grid.bus_count();
  const int nl = grid.line_count();
  if (net_load.size() != nb) throw ValidationError("net load has wrong length");

  DualityGap out;
  out.primal = dispatch_cost(grid, sol);

  Vec ybus = nl > 0 ? Vec(grid.ptdf.transpose() * Vec(sol.mu_upper - sol.mu_lower))
                    : Vec::Zero(nb);
  double g = sol.lambda * net_load.sum();
  if (nl > 0) {
    const Vec base_flow = grid.ptdf * net_load;
    for (int k = 0; k < nl; ++k) {
      const double fm = grid.lines[k].flow_limit;
      g += sol.mu_upper[k] * (-base_flow[k] - fm);
      g += sol.mu_lower[k] * (base_flow[k] - fm);
    }
  }
  for (int gi = 0; gi < grid.gen_count(); ++gi) {
    const auto& gen = grid.generators[gi];
    if (!gen.committed) continue;
    g += sol.alpha_lower[gi] * gen.p_min - sol.alpha_upper[gi] * gen.p_max;
    const double b = gen.cost_lin - sol.lambda + ybus[gen.bus] + sol.alpha_upper[gi] -
                     sol.alpha_lower[gi];
    double p;
    if (gen.cost_quad > 0.0)
      p = std::clamp(-b / (2.0 * gen.cost_quad), gen.p_min, gen.p_max);
    else
      p = b >= 0.0 ? gen.p_min : gen.p_max;
    g += gen.cost_quad * p * p + b * p;
  }
  for (int i = 0; i < nb; ++i) {
    const double b = grid.buses[i].shed_penalty - sol.lambda + ybus[i];
    if (b < -1e-7) out.dual_finite = false;  // unbounded direction, drops to -inf
  }
  for (int w = 0; w < grid.wind_count(); ++w) {
    const double b = grid.wind_farms[w].curtail_penalty + sol.lambda -
                     ybus[grid.wind_farms[w].bus];
    if (b < -1e-7) out.dual_finite = false;
  }

  out.dual = g * kBaseMva;
  out.gap_abs = std::abs(out.primal - out.dual);
  out.gap_rel = out.gap_abs / std::max(1.0, std::abs(out.primal));
  return out;
}

}  // namespace asopf
