#include "asopf/opf.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "asopf/ese.hpp"
#include "asopf/labels.hpp"
#include "serial_util.hpp"

namespace asopf {

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::numerical_failure: return "numerical_failure";
  }
  return "unknown";
}

Vec compute_flows(const Grid& grid, const Vec& net_load, const OpfSolution& sol) {
  Vec inj = -net_load;
  for (int g = 0; g < grid.gen_count(); ++g) inj[grid.generators[g].bus] += sol.p[g];
  for (int w = 0; w < grid.wind_count(); ++w)
    inj[grid.wind_farms[w].bus] -= sol.curtail[w];
  inj += sol.shed;
  return grid.ptdf * inj;
}

double dispatch_cost(const Grid& grid, const OpfSolution& sol) {
  double j = 0.0;
  for (int g = 0; g < grid.gen_count(); ++g) {
    const auto& gen = grid.generators[g];
    if (!gen.committed) continue;
    j += gen.cost_quad * sol.p[g] * sol.p[g] + gen.cost_lin * sol.p[g];
  }
  for (int i = 0; i < grid.bus_count(); ++i) j += grid.buses[i].shed_penalty * sol.shed[i];
  for (int w = 0; w < grid.wind_count(); ++w)
    j += grid.wind_farms[w].curtail_penalty * sol.curtail[w];
  return j * kBaseMva;
}

namespace {

// Fraction-to-boundary step for a positive vector.
double max_step(const Vec& v, const Vec& dv) {
  double a = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
  return a;
}

}  // namespace

OpfSolution solve_dcopf(const Grid& grid, const Vec& net_load, const SolveOptions& opt) {
  const std::int64_t t0 = now_us();
  const int nb = grid.bus_count();
  const int nl = grid.line_count();
  const int ngen = grid.gen_count();
  const int nwind = grid.wind_count();

  if (net_load.size() != nb) throw ValidationError("net load has wrong length");
  if (!net_load.allFinite()) throw ValidationError("net load has non-finite entries");
  if (grid.ptdf.rows() != nl || grid.ptdf.cols() != nb)
    throw ValidationError("grid not finalized (missing PTDF)");

  // Committed generators with a degenerate range act as constants and are
  // folded into the nodal load.
  std::vector<int> pvars;
  std::vector<int> fixed;
  for (int g = 0; g < ngen; ++g) {
    const auto& gen = grid.generators[g];
    if (!gen.committed) continue;
    if (gen.p_max - gen.p_min > 0.0)
      pvars.push_back(g);
    else
      fixed.push_back(g);
  }
  Vec eff = net_load;
  for (int g : fixed) eff[grid.generators[g].bus] -= grid.generators[g].p_min;

  const int npv = static_cast<int>(pvars.size());
  const int n = npv + nb + nwind;
  const double bal = eff.sum();

  std::vector<int> vbus(n);
  Vec vsign(n), qd(n), ql(n), lb(n);
  for (int i = 0; i < npv; ++i) {
    const auto& gen = grid.generators[pvars[i]];
    vbus[i] = gen.bus;
    vsign[i] = 1.0;
    qd[i] = 2.0 * effective_quad_cost(gen);
    ql[i] = gen.cost_lin;
    lb[i] = gen.p_min;
  }
  for (int i = 0; i < nb; ++i) {
    vbus[npv + i] = i;
    vsign[npv + i] = 1.0;
    qd[npv + i] = 0.0;
    ql[npv + i] = grid.buses[i].shed_penalty;
    lb[npv + i] = 0.0;
  }
  for (int w = 0; w < nwind; ++w) {
    vbus[npv + nb + w] = grid.wind_farms[w].bus;
    vsign[npv + nb + w] = -1.0;
    qd[npv + nb + w] = 0.0;
    ql[npv + nb + w] = grid.wind_farms[w].curtail_penalty;
    lb[npv + nb + w] = 0.0;
  }

  // Inequality rows: [lower bounds on all vars][upper bounds on p][line
  // upper][line lower].
  const int m = n + npv + 2 * nl;
  const int row_ub = n;
  const int row_up = n + npv;
  const int row_dn = n + npv + nl;

  Vec fl0 = nl > 0 ? Vec(grid.ptdf * eff) : Vec::Zero(0);
  Vec h(m);
  h.segment(0, n) = -lb;
  for (int i = 0; i < npv; ++i) h[row_ub + i] = grid.generators[pvars[i]].p_max;
  for (int k = 0; k < nl; ++k) {
    h[row_up + k] = grid.lines[k].flow_limit + fl0[k];
    h[row_dn + k] = grid.lines[k].flow_limit - fl0[k];
  }

  auto eval_gx = [&](const Vec& x, Vec& gx, Vec& busv) {
    busv.setZero();
    for (int v = 0; v < n; ++v) busv[vbus[v]] += vsign[v] * x[v];
    gx.segment(0, n) = -x;
    for (int i = 0; i < npv; ++i) gx[row_ub + i] = x[i];
    if (nl > 0) {
      Vec t = grid.ptdf * busv;
      gx.segment(row_up, nl) = t;
      gx.segment(row_dn, nl) = -t;
    }
  };

  auto add_gt = [&](const Vec& u, Vec& out) {
    out -= u.segment(0, n);
    for (int i = 0; i < npv; ++i) out[i] += u[row_ub + i];
    if (nl > 0) {
      Vec du = u.segment(row_up, nl) - u.segment(row_dn, nl);
      Vec ybus = grid.ptdf.transpose() * du;
      for (int v = 0; v < n; ++v) out[v] += vsign[v] * ybus[vbus[v]];
    }
  };

  // Strictly interior start.
  Vec x(n);
  for (int i = 0; i < npv; ++i) {
    const auto& gen = grid.generators[pvars[i]];
    x[i] = 0.5 * (gen.p_min + gen.p_max);
  }
  x.segment(npv, nb).setConstant(0.01);
  x.segment(npv + nb, nwind).setConstant(0.01);
  double y = 0.0;
  Vec gx(m), busv(nb);
  eval_gx(x, gx, busv);
  Vec z = (h - gx).cwiseMax(0.1);
  // Starting each lower-bound dual at the variable's marginal cost keeps the
  // initial dual residual near zero; a cold all-ones start stalls badly when
  // penalty prices dwarf the generation costs.
  Vec u = Vec::Ones(m);
  for (int v = 0; v < n; ++v) u[v] = std::max(1.0, qd[v] * x[v] + ql[v]);

  const double dscale = std::max(1.0, ql.cwiseAbs().maxCoeff());
  const double pscale = std::max({1.0, std::abs(bal), h.cwiseAbs().maxCoeff()});
  const double tol = opt.tolerance;

  OpfSolution sol;
  sol.p = Vec::Zero(ngen);
  sol.shed = Vec::Zero(nb);
  sol.curtail = Vec::Zero(nwind);
  sol.mu_upper = Vec::Zero(nl);
  sol.mu_lower = Vec::Zero(nl);
  sol.alpha_upper = Vec::Zero(ngen);
  sol.alpha_lower = Vec::Zero(ngen);

  Mat kkt(n + 1, n + 1);
  Vec rd(n), rg(m), rhs(n + 1), dxy(n + 1), dz(m), du(m), dz_aff(m), du_aff(m);
  bool converged = false;
  double rd_norm = 0, rp_abs = 0, rg_norm = 0, comp = 0;
  int iter = 0;
  double prev_mu = std::numeric_limits<double>::max();
  int stall = 0;

  for (iter = 0; iter < opt.max_iterations; ++iter) {
    eval_gx(x, gx, busv);
    rd = qd.cwiseProduct(x) + ql + vsign * y;
    add_gt(u, rd);
    const double rp = vsign.dot(x) - bal;
    rg = gx + z - h;
    const double mu = z.dot(u) / m;
    const double pobj = 0.5 * x.dot(qd.cwiseProduct(x)) + ql.dot(x);

    rd_norm = rd.cwiseAbs().maxCoeff();
    rp_abs = std::abs(rp);
    rg_norm = rg.cwiseAbs().maxCoeff();
    comp = z.dot(u);
    if (rd_norm <= tol * dscale && rp_abs <= tol * pscale && rg_norm <= tol * pscale &&
        comp <= tol * (1.0 + std::abs(pobj))) {
      converged = true;
      break;
    }
    // Numerical floor: complementarity refuses to shrink further.
    if (mu >= prev_mu * 0.95) {
      if (++stall >= 8) break;
    } else {
      stall = 0;
    }
    prev_mu = mu;

    Vec w = u.cwiseQuotient(z);
    kkt.setZero();
    if (nl > 0) {
      Vec dline = w.segment(row_up, nl) + w.segment(row_dn, nl);
      Mat scaled = dline.asDiagonal() * grid.ptdf;
      Mat kbus(nb, nb);
      kbus.noalias() = grid.ptdf.transpose() * scaled;
      for (int v1 = 0; v1 < n; ++v1)
        for (int v2 = 0; v2 < n; ++v2)
          kkt(v1, v2) = vsign[v1] * vsign[v2] * kbus(vbus[v1], vbus[v2]);
    }
    for (int v = 0; v < n; ++v) kkt(v, v) += qd[v] + w[v];
    for (int i = 0; i < npv; ++i) kkt(i, i) += w[row_ub + i];
    for (int v = 0; v < n; ++v) {
      kkt(v, n) = vsign[v];
      kkt(n, v) = vsign[v];
    }

    Eigen::PartialPivLU<Mat> lu(kkt);

    auto solve_dir = [&](const Vec& rc_target, Vec& odz, Vec& odu) {
      Vec tmp = (u.cwiseProduct(rg) - rc_target).cwiseQuotient(z);
      Vec rx = Vec::Zero(n);
      add_gt(tmp, rx);  // rx = G^T tmp
      rhs.segment(0, n) = -rd - rx;
      rhs[n] = -rp;
      dxy = lu.solve(rhs);
      Vec gdx(m), busdx(nb);
      eval_gx(dxy.segment(0, n), gdx, busdx);
      odz = -rg - gdx;
      odu = (-rc_target - u.cwiseProduct(odz)).cwiseQuotient(z);
    };

    // Predictor.
    Vec rc = z.cwiseProduct(u);
    solve_dir(rc, dz_aff, du_aff);
    const double ap_aff = max_step(z, dz_aff);
    const double ad_aff = max_step(u, du_aff);
    const double mu_aff =
        (z + ap_aff * dz_aff).dot(u + ad_aff * du_aff) / m;
    double sigma = std::pow(mu_aff / std::max(mu, 1e-300), 3.0);
    sigma = std::clamp(sigma, 0.0, 1.0);

    // Corrector.
    Vec rc2 = rc + dz_aff.cwiseProduct(du_aff) - Vec::Constant(m, sigma * mu);
    solve_dir(rc2, dz, du);

    const double tau = mu < 1e-5 ? 0.9995 : 0.995;
    const double ap = std::min(1.0, tau * max_step(z, dz));
    const double ad = std::min(1.0, tau * max_step(u, du));

    x += ap * dxy.segment(0, n);
    z += ap * dz;
    y += ad * dxy[n];
    u += ad * du;

    if (!x.allFinite() || !z.allFinite() || !u.allFinite() || !std::isfinite(y)) {
      sol.status = SolveStatus::numerical_failure;
      sol.message = "interior-point iterate became non-finite";
      sol.iterations = iter + 1;
      sol.wall_time_us = elapsed_us(t0);
      return sol;
    }
  }

  // Map the iterate back to named quantities.
  for (int i = 0; i < npv; ++i) sol.p[pvars[i]] = x[i];
  for (int g : fixed) sol.p[g] = grid.generators[g].p_min;
  sol.shed = x.segment(npv, nb);
  sol.curtail = x.segment(npv + nb, nwind);
  sol.lambda = -y;
  for (int k = 0; k < nl; ++k) {
    sol.mu_upper[k] = u[row_up + k];
    sol.mu_lower[k] = u[row_dn + k];
  }
  for (int i = 0; i < npv; ++i) {
    sol.alpha_upper[pvars[i]] = u[row_ub + i];
    sol.alpha_lower[pvars[i]] = u[i];
  }
  if (!fixed.empty()) {
    Vec ybus = nl > 0 ? Vec(grid.ptdf.transpose() * Vec(sol.mu_upper - sol.mu_lower))
                      : Vec::Zero(nb);
    for (int g : fixed) {
      const auto& gen = grid.generators[g];
      const double mc = 2.0 * effective_quad_cost(gen) * sol.p[g] + gen.cost_lin;
      const double r = sol.lambda - ybus[gen.bus] - mc;
      if (r >= 0.0)
        sol.alpha_upper[g] = r;
      else
        sol.alpha_lower[g] = -r;
    }
  }
  sol.objective = dispatch_cost(grid, sol);
  sol.iterations = iter;

  if (converged) {
    sol.status = SolveStatus::optimal;
  } else if (rd_norm <= 1e-7 * dscale && rp_abs <= 1e-7 * pscale &&
             rg_norm <= 1e-7 * pscale) {
    sol.status = SolveStatus::optimal;
    std::ostringstream os;
    os << "loose convergence after " << iter << " iterations (comp " << comp << ")";
    sol.message = os.str();
  } else {
    sol.status = SolveStatus::numerical_failure;
    std::ostringstream os;
    os << "no convergence in " << iter << " iterations: dual " << rd_norm
       << " primal " << std::max(rp_abs, rg_norm) << " comp " << comp;
    sol.message = os.str();
    sol.wall_time_us = elapsed_us(t0);
    return sol;
  }

  if (opt.polish && sol.status == SolveStatus::optimal) {
    try {
      if (try_polish(grid, net_load, sol)) sol.polished = true;
    } catch (const std::exception&) {
      // Keep the raw interior-point answer.
    }
  }

  for (int i = 0; i < nb; ++i) {
    if (sol.shed[i] > 1e-6 && sol.shed[i] > net_load[i] + 1e-6) {
      std::cerr << "warning: shed at bus " << i + 1
                << " exceeds nodal demand (slack caps are not modeled)\n";
      break;
    }
  }

  sol.wall_time_us = elapsed_us(t0);
  return sol;
}

KktReport kkt_residuals(const Grid& grid, const Vec& net_load, const OpfSolution& sol) {
  const int nb = grid.bus_count();
  const int nl = grid.line_count();
  const int ngen = grid.gen_count();
  const int nwind = grid.wind_count();
  if (net_load.size() != nb) throw ValidationError("net load has wrong length");
  if (sol.p.size() != ngen || sol.shed.size() != nb || sol.curtail.size() != nwind ||
      sol.mu_upper.size() != nl || sol.mu_lower.size() != nl ||
      sol.alpha_upper.size() != ngen || sol.alpha_lower.size() != ngen)
    throw ValidationError("solution shapes do not match grid");

  KktReport r;
  r.flows = compute_flows(grid, net_load, sol);
  r.comp_line_upper = Vec::Zero(nl);
  r.comp_line_lower = Vec::Zero(nl);
  r.comp_gen_upper = Vec::Zero(ngen);
  r.comp_gen_lower = Vec::Zero(ngen);
  r.stat_gen = Vec::Zero(ngen);
  r.stat_shed = Vec::Zero(nb);
  r.stat_curtail = Vec::Zero(nwind);
  r.flow_violation = Vec::Zero(nl);
  r.gen_bound_violation = Vec::Zero(ngen);

  Vec ybus = nl > 0 ? Vec(grid.ptdf.transpose() * Vec(sol.mu_upper - sol.mu_lower))
                    : Vec::Zero(nb);

  for (int k = 0; k < nl; ++k) {
    const double fm = grid.lines[k].flow_limit;
    r.comp_line_upper[k] = std::abs(sol.mu_upper[k] * (r.flows[k] - fm));
    r.comp_line_lower[k] = std::abs(sol.mu_lower[k] * (r.flows[k] + fm));
    r.flow_violation[k] = std::max(0.0, std::abs(r.flows[k]) - fm);
  }

  for (int g = 0; g < ngen; ++g) {
    const auto& gen = grid.generators[g];
    if (!gen.committed) continue;
    r.comp_gen_upper[g] = std::abs(sol.alpha_upper[g] * (sol.p[g] - gen.p_max));
    r.comp_gen_lower[g] = std::abs(sol.alpha_lower[g] * (sol.p[g] - gen.p_min));
    const double mc = 2.0 * gen.cost_quad * sol.p[g] + gen.cost_lin;
    r.stat_gen[g] = std::abs(mc - sol.lambda + ybus[gen.bus] + sol.alpha_upper[g] -
                             sol.alpha_lower[g]);
    r.gen_bound_violation[g] =
        std::max({0.0, sol.p[g] - gen.p_max, gen.p_min - sol.p[g]});
  }

  for (int i = 0; i < nb; ++i) {
    const double e = grid.buses[i].shed_penalty - sol.lambda + ybus[i];
    r.stat_shed[i] = sol.shed[i] > 1e-8 ? std::abs(e) : std::max(0.0, -e);
  }
  for (int w = 0; w < nwind; ++w) {
    const double e =
        grid.wind_farms[w].curtail_penalty + sol.lambda - ybus[grid.wind_farms[w].bus];
    r.stat_curtail[w] = sol.curtail[w] > 1e-8 ? std::abs(e) : std::max(0.0, -e);
  }

  r.balance_residual =
      std::abs((net_load - sol.shed).sum() - sol.p.sum() + sol.curtail.sum());

  double sneg = 0.0;
  if (nb > 0) sneg = std::max(sneg, -sol.shed.minCoeff());
  if (nwind > 0) sneg = std::max(sneg, -sol.curtail.minCoeff());
  r.slack_negativity = std::max(0.0, sneg);

  double dneg = 0.0;
  if (nl > 0) dneg = std::max({dneg, -sol.mu_upper.minCoeff(), -sol.mu_lower.minCoeff()});
  if (ngen > 0)
    dneg = std::max({dneg, -sol.alpha_upper.minCoeff(), -sol.alpha_lower.minCoeff()});
  r.dual_negativity = std::max(0.0, dneg);

  return r;
}

double KktReport::max_complementarity() const {
  double v = 0.0;
  auto acc = [&v](const Vec& a) {
    if (a.size() > 0) v = std::max(v, a.maxCoeff());
  };
  acc(comp_line_upper);
  acc(comp_line_lower);
  acc(comp_gen_upper);
  acc(comp_gen_lower);
  return v;
}

double KktReport::max_stationarity() const {
  double v = 0.0;
  auto acc = [&v](const Vec& a) {
    if (a.size() > 0) v = std::max(v, a.maxCoeff());
  };
  acc(stat_gen);
  acc(stat_shed);
  acc(stat_curtail);
  return v;
}

double KktReport::primal_infeasibility() const {
  double v = balance_residual;
  if (flow_violation.size() > 0) v = std::max(v, flow_violation.maxCoeff());
  if (gen_bound_violation.size() > 0) v = std::max(v, gen_bound_violation.maxCoeff());
  return std::max(v, slack_negativity);
}

double KktReport::max_residual() const {
  return std::max({max_complementarity(), max_stationarity(), primal_infeasibility(),
                   dual_negativity});
}

std::string solution_to_string(const OpfSolution& sol, bool include_timing) {
  return detail::sol_to_json(sol, include_timing).dump(2) + "\n";
}

void save_solution(const OpfSolution& sol, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open for writing: " + path);
  out << solution_to_string(sol, true);
  if (!out) throw ValidationError("write failed: " + path);
}

}  // namespace asopf
