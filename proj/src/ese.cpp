#include "asopf/ese.hpp"

#include <Eigen/Dense>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace asopf {

const char* to_string(EseStatus s) {
  switch (s) {
    case EseStatus::solved: return "solved";
    case EseStatus::least_squares_fallback: return "least_squares_fallback";
    case EseStatus::singular: return "singular";
  }
  return "unknown";
}

std::string to_string(const EseRow& row) {
  std::ostringstream os;
  switch (row.kind) {
    case EseRow::Kind::line_upper: os << "line " << row.entity + 1 << " at +limit"; break;
    case EseRow::Kind::line_lower: os << "line " << row.entity + 1 << " at -limit"; break;
    case EseRow::Kind::gen_stationarity: os << "generator " << row.entity + 1 << " gradient"; break;
    case EseRow::Kind::shed_stationarity: os << "shed price at bus " << row.entity + 1; break;
    case EseRow::Kind::curtail_stationarity: os << "curtailment price at farm " << row.entity + 1; break;
    case EseRow::Kind::balance: os << "power balance"; break;
  }
  return os.str();
}

double EseAudit::worst() const {
  return std::max({max_flow_violation, max_bound_violation, worst_negative_multiplier,
                   worst_negative_slack, max_stationarity, max_complementarity,
                   balance_residual});
}

EseSystem build_ese(const Grid& grid, const Vec& net_load, const ActiveSetLabels& labels) {
  const int nb = grid.bus_count();
  const int nl = grid.line_count();
  if (net_load.size() != nb) throw ValidationError("net load has wrong length");
  const LabelManifest m = LabelManifest::for_grid(grid);
  labels.flat(m);  // shape check

  const auto committed = grid.committed_indices();
  EseSystem sys;
  sys.fixed_p = Vec::Zero(grid.gen_count());
  sys.folded_load = net_load;

  for (int ci = 0; ci < m.n_gen; ++ci) {
    const int g = committed[ci];
    const auto& gen = grid.generators[g];
    const bool up = labels.gen_upper[ci] != 0;
    const bool dn = labels.gen_lower[ci] != 0;
    if (up && dn)
      throw ValidationError("generator " + std::to_string(g + 1) +
                            " is labeled at both of its limits");
    if (up || dn) {
      sys.saturated_gens.push_back(g);
      const double pf = up ? gen.p_max : gen.p_min;
      sys.fixed_p[g] = pf;
      sys.folded_load[gen.bus] -= pf;
    } else {
      sys.free_gens.push_back(g);
    }
  }
  for (int k = 0; k < nl; ++k) {
    const bool up = labels.line_upper[k] != 0;
    const bool dn = labels.line_lower[k] != 0;
    if (up && dn)
      throw ValidationError("line " + std::to_string(k + 1) +
                            " is labeled congested in both directions");
    if (up) sys.up_lines.push_back(k);
    if (dn) sys.dn_lines.push_back(k);
  }
  for (int i = 0; i < nb; ++i)
    if (labels.shed[i] != 0) sys.shed_buses.push_back(i);
  for (int w = 0; w < m.n_wind; ++w)
    if (labels.curtail[w] != 0) sys.curtail_farms.push_back(w);

  const int nf = static_cast<int>(sys.free_gens.size());
  const int ns = static_cast<int>(sys.shed_buses.size());
  const int nc = static_cast<int>(sys.curtail_farms.size());
  const int nup = static_cast<int>(sys.up_lines.size());
  const int ndn = static_cast<int>(sys.dn_lines.size());
  if (nf + ns + nc == 0)
    throw ValidationError(
        "every generator is labeled saturated and no slack is active; the "
        "balance row has no unknown left");

  const int dim = nf + ns + nc + 1 + nup + ndn;
  sys.a = Mat::Zero(dim, dim);
  sys.b = Vec::Zero(dim);
  sys.rows.reserve(dim);

  const Vec fold_flow = nl > 0 ? Vec(grid.ptdf * sys.folded_load) : Vec();

  int r = 0;
  auto flow_row = [&](int k, double rhs_sign) {
    for (int j = 0; j < nf; ++j)
      sys.a(r, sys.col_p(j)) = grid.ptdf(k, grid.generators[sys.free_gens[j]].bus);
    for (int j = 0; j < ns; ++j)
      sys.a(r, sys.col_s(j)) = grid.ptdf(k, sys.shed_buses[j]);
    for (int j = 0; j < nc; ++j)
      sys.a(r, sys.col_c(j)) = -grid.ptdf(k, grid.wind_farms[sys.curtail_farms[j]].bus);
    sys.b[r] = rhs_sign * grid.lines[k].flow_limit + fold_flow[k];
  };
  for (int k : sys.up_lines) {
    flow_row(k, 1.0);
    sys.rows.push_back({EseRow::Kind::line_upper, k});
    ++r;
  }
  for (int k : sys.dn_lines) {
    flow_row(k, -1.0);
    sys.rows.push_back({EseRow::Kind::line_lower, k});
    ++r;
  }

  auto dual_cols = [&](int bus, double sign) {
    // contributes sign * sum_k ptdf(k,bus) * (mu_up_k - mu_dn_k)
    for (int j = 0; j < nup; ++j)
      sys.a(r, sys.col_mu_up(j)) = sign * grid.ptdf(sys.up_lines[j], bus);
    for (int j = 0; j < ndn; ++j)
      sys.a(r, sys.col_mu_dn(j)) = -sign * grid.ptdf(sys.dn_lines[j], bus);
  };

  for (int j = 0; j < nf; ++j) {
    const int g = sys.free_gens[j];
    const auto& gen = grid.generators[g];
    sys.a(r, sys.col_p(j)) = 2.0 * effective_quad_cost(gen);
    sys.a(r, sys.col_lambda()) = -1.0;
    dual_cols(gen.bus, 1.0);
    sys.b[r] = -gen.cost_lin;
    sys.rows.push_back({EseRow::Kind::gen_stationarity, g});
    ++r;
  }
  for (int j = 0; j < ns; ++j) {
    const int i = sys.shed_buses[j];
    sys.a(r, sys.col_lambda()) = -1.0;
    dual_cols(i, 1.0);
    sys.b[r] = -grid.buses[i].shed_penalty;
    sys.rows.push_back({EseRow::Kind::shed_stationarity, i});
    ++r;
  }
  for (int j = 0; j < nc; ++j) {
    const int w = sys.curtail_farms[j];
    sys.a(r, sys.col_lambda()) = 1.0;
    dual_cols(grid.wind_farms[w].bus, -1.0);
    sys.b[r] = -grid.wind_farms[w].curtail_penalty;
    sys.rows.push_back({EseRow::Kind::curtail_stationarity, w});
    ++r;
  }

  for (int j = 0; j < nf; ++j) sys.a(r, sys.col_p(j)) = 1.0;
  for (int j = 0; j < ns; ++j) sys.a(r, sys.col_s(j)) = 1.0;
  for (int j = 0; j < nc; ++j) sys.a(r, sys.col_c(j)) = -1.0;
  sys.b[r] = sys.folded_load.sum();
  sys.rows.push_back({EseRow::Kind::balance, -1});
  ++r;

  if (r != dim)
    throw NumericalError("assembled system is not square: " + std::to_string(r) +
                         " rows for " + std::to_string(dim) + " unknowns");
  return sys;
}

namespace {

void scatter(const EseSystem& sys, const Grid& grid, EseSolution& out) {
  const Vec& x = out.x;
  out.p = sys.fixed_p;
  out.shed = Vec::Zero(grid.bus_count());
  out.curtail = Vec::Zero(grid.wind_count());
  out.mu_upper = Vec::Zero(grid.line_count());
  out.mu_lower = Vec::Zero(grid.line_count());
  for (std::size_t j = 0; j < sys.free_gens.size(); ++j)
    out.p[sys.free_gens[j]] = x[sys.col_p(static_cast<int>(j))];
  for (std::size_t j = 0; j < sys.shed_buses.size(); ++j)
    out.shed[sys.shed_buses[j]] = x[sys.col_s(static_cast<int>(j))];
  for (std::size_t j = 0; j < sys.curtail_farms.size(); ++j)
    out.curtail[sys.curtail_farms[j]] = x[sys.col_c(static_cast<int>(j))];
  out.lambda = x[sys.col_lambda()];
  for (std::size_t j = 0; j < sys.up_lines.size(); ++j)
    out.mu_upper[sys.up_lines[j]] = x[sys.col_mu_up(static_cast<int>(j))];
  for (std::size_t j = 0; j < sys.dn_lines.size(); ++j)
    out.mu_lower[sys.dn_lines[j]] = x[sys.col_mu_dn(static_cast<int>(j))];
}

std::string residual_digest(const EseSystem& sys, const Vec& resid) {
  const double worst = resid.cwiseAbs().maxCoeff();
  std::ostringstream os;
  os << "worst residual " << worst << " on:";
  int shown = 0;
  for (int i = 0; i < resid.size() && shown < 3; ++i) {
    if (std::abs(resid[i]) >= 0.5 * worst) {
      os << " [" << to_string(sys.rows[static_cast<std::size_t>(i)]) << "]";
      ++shown;
    }
  }
  return os.str();
}

}  // namespace

EseSolution solve_ese(const EseSystem& sys) {
  const auto t0 = now_us();
  const int dim = sys.dimension();
  EseSolution out;

  Eigen::PartialPivLU<Mat> lu(sys.a);
  out.rcond = lu.rcond();
  out.x = lu.solve(sys.b);
  Vec resid = sys.a * out.x - sys.b;
  out.residual_norm = resid.cwiseAbs().maxCoeff();
  const double bscale = std::max(1.0, sys.b.cwiseAbs().maxCoeff());

  if (out.x.allFinite() && out.rcond > 1e-12 && out.residual_norm <= 1e-6 * bscale) {
    out.status = EseStatus::solved;
  } else {
    // Rank-deficient or inconsistent: fall back to the minimum-norm
    // least-squares answer and report the residual honestly.
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(sys.a);
    Vec x2 = cod.solve(sys.b);
    if (x2.allFinite()) {
      out.x = x2;
      resid = sys.a * out.x - sys.b;
      out.residual_norm = resid.cwiseAbs().maxCoeff();
      out.status = EseStatus::least_squares_fallback;
      out.message = "rank " + std::to_string(cod.rank()) + " of " + std::to_string(dim) +
                    "; " + residual_digest(sys, resid);
    } else {
      out.x = Vec::Zero(dim);
      out.status = EseStatus::singular;
      out.message = "factorization produced non-finite values";
      out.residual_norm = bscale;
    }
  }
  out.solve_us = elapsed_us(t0);
  return out;
}

EseSolution solve_with_labels(const Grid& grid, const Vec& net_load,
                              const ActiveSetLabels& labels, const EseOptions& opts) {
  auto t0 = now_us();
  EseSystem sys = build_ese(grid, net_load, labels);
  EseSolution out = solve_ese(sys);
  out.build_us = std::max<std::int64_t>(1, elapsed_us(t0) - out.solve_us);
  scatter(sys, grid, out);

  // Bound repair: a free unit recovered outside its limits is clamped to the
  // violated bound and folded out, then the smaller system is re-solved. One
  // wrong bit routinely drags other units out of range with it, so only the
  // worst violator is folded per pass and the rest get a chance to recover.
  if (opts.repair_bounds && out.status != EseStatus::singular) {
    ActiveSetLabels fixed = labels;
    const auto committed = grid.committed_indices();
    std::vector<int> pos_of_gen(grid.gen_count(), -1);
    for (std::size_t ci = 0; ci < committed.size(); ++ci)
      pos_of_gen[committed[ci]] = static_cast<int>(ci);
    std::vector<int> free_gens = sys.free_gens;
    for (int pass = 0; pass < 4; ++pass) {
      int worst = -1;
      double gap = 1e-6;
      bool at_upper = false;
      for (int g : free_gens) {
        const auto& gen = grid.generators[g];
        if (out.p[g] - gen.p_max > gap) {
          gap = out.p[g] - gen.p_max;
          worst = g;
          at_upper = true;
        }
        if (gen.p_min - out.p[g] > gap) {
          gap = gen.p_min - out.p[g];
          worst = g;
          at_upper = false;
        }
      }
      if (worst < 0) break;
      if (at_upper)
        fixed.gen_upper[pos_of_gen[worst]] = 1;
      else
        fixed.gen_lower[pos_of_gen[worst]] = 1;
      try {
        t0 = now_us();
        EseSystem sys2 = build_ese(grid, net_load, fixed);
        EseSolution second = solve_ese(sys2);
        second.build_us =
            out.build_us + std::max<std::int64_t>(1, elapsed_us(t0) - second.solve_us);
        second.solve_us += out.solve_us;
        scatter(sys2, grid, second);
        second.repaired = true;
        if (!out.message.empty() && second.message.empty()) second.message = out.message;
        out = second;
        free_gens = sys2.free_gens;
        if (out.status == EseStatus::singular) break;
      } catch (const ValidationError& e) {
        out.message += std::string(out.message.empty() ? "" : "; ") +
                       "bound repair failed: " + e.what();
        break;
      }
    }
  }

  if (opts.audit && out.status != EseStatus::singular) {
    OpfSolution cand = to_opf_solution(grid, net_load, out);
    KktReport rep = kkt_residuals(grid, net_load, cand);
    out.audit.max_flow_violation =
        rep.flow_violation.size() > 0 ? rep.flow_violation.maxCoeff() : 0.0;
    out.audit.max_bound_violation =
        rep.gen_bound_violation.size() > 0 ? rep.gen_bound_violation.maxCoeff() : 0.0;
    out.audit.worst_negative_multiplier = rep.dual_negativity;
    out.audit.worst_negative_slack = rep.slack_negativity;
    out.audit.max_stationarity = rep.max_stationarity();
    out.audit.max_complementarity = rep.max_complementarity();
    out.audit.balance_residual = rep.balance_residual;
  }

  out.trusted = out.status == EseStatus::solved &&
                out.residual_norm <= kEseResidualTrust &&
                (!opts.audit || out.audit.worst() <= kEseAuditTrust);
  if (!out.trusted && out.message.empty()) {
    std::ostringstream os;
    os << "untrusted: status " << to_string(out.status) << ", residual "
       << out.residual_norm << ", optimality gap " << out.audit.worst();
    out.message = os.str();
  }
  return out;
}

OpfSolution to_opf_solution(const Grid& grid, const Vec& net_load, const EseSolution& es) {
  OpfSolution sol;
  sol.p = es.p;
  sol.shed = es.shed;
  sol.curtail = es.curtail;
  sol.lambda = es.lambda;
  sol.mu_upper = es.mu_upper;
  sol.mu_lower = es.mu_lower;
  sol.alpha_upper = Vec::Zero(grid.gen_count());
  sol.alpha_lower = Vec::Zero(grid.gen_count());

  Vec ybus = grid.line_count() > 0
                 ? Vec(grid.ptdf.transpose() * Vec(es.mu_upper - es.mu_lower))
                 : Vec::Zero(grid.bus_count());
  (void)net_load;
  // A unit sitting on a limit recovers that limit's price from its gradient
  // condition; the sign is kept so a mislabeled unit shows up as a negative
  // multiplier instead of being smoothed away.
  for (int g = 0; g < grid.gen_count(); ++g) {
    const auto& gen = grid.generators[g];
    if (!gen.committed) continue;
    const double r = sol.lambda - ybus[gen.bus] -
                     (2.0 * gen.cost_quad * sol.p[g] + gen.cost_lin);
    const bool at_up = std::abs(sol.p[g] - gen.p_max) <= 1e-9;
    const bool at_dn = std::abs(sol.p[g] - gen.p_min) <= 1e-9;
    if (at_up && at_dn) {
      if (r >= 0.0)
        sol.alpha_upper[g] = r;
      else
        sol.alpha_lower[g] = -r;
    } else if (at_up) {
      sol.alpha_upper[g] = r;
    } else if (at_dn) {
      sol.alpha_lower[g] = -r;
    }
  }
  sol.status = es.status == EseStatus::solved ? SolveStatus::optimal
                                              : SolveStatus::numerical_failure;
  sol.message = es.message;
  sol.wall_time_us = es.build_us + es.solve_us;
  sol.objective = dispatch_cost(grid, sol);
  return sol;
}

bool try_polish(const Grid& grid, const Vec& net_load, OpfSolution& sol) {
  // The labels read off a raw interior-point iterate can miss a weakly
  // converged bind (dual well away from zero, slack not quite there yet).
  // Solving with bound repair folds such a generator back onto its limit, so
  // polish survives the ambiguity instead of bailing out.
  EseSolution es;
  try {
    ActiveSetLabels labels = extract_labels(grid, net_load, sol);
    es = solve_with_labels(grid, net_load, labels);
  } catch (const ValidationError&) {
    return false;
  }
  if (!es.trusted) return false;
  OpfSolution cand = to_opf_solution(grid, net_load, es);
  KktReport rep = kkt_residuals(grid, net_load, cand);
  if (rep.max_residual() > 1e-7) return false;

  sol.p = cand.p;
  sol.shed = cand.shed;
  sol.curtail = cand.curtail;
  sol.lambda = cand.lambda;
  sol.mu_upper = cand.mu_upper;
  sol.mu_lower = cand.mu_lower;
  sol.alpha_upper = cand.alpha_upper;
  sol.alpha_lower = cand.alpha_lower;
  sol.objective = cand.objective;
  return true;
}

}  // namespace asopf
