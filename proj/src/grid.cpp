#include "asopf/grid.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "asopf/rng.hpp"

namespace asopf {

using json = nlohmann::ordered_json;

double effective_quad_cost(const Generator& g) {
  return g.cost_quad > 0.0 ? g.cost_quad : kTieBreakEps;
}

std::vector<int> Grid::committed_indices() const {
  std::vector<int> out;
  for (int g = 0; g < gen_count(); ++g)
    if (generators[g].committed) out.push_back(g);
  return out;
}

Vec Grid::base_net_load() const {
  Vec net = Vec::Zero(bus_count());
  for (int i = 0; i < bus_count(); ++i) net[i] = buses[i].load;
  for (const auto& w : wind_farms) net[w.bus] -= w.forecast;
  return net;
}

void Grid::validate() const {
  const int nb = bus_count();
  if (nb < 1) throw ValidationError("grid has no buses");
  if (slack_bus < 0 || slack_bus >= nb)
    throw ValidationError("slack bus out of range");

  for (int i = 0; i < nb; ++i) {
    const Bus& b = buses[i];
    if (!std::isfinite(b.load) || b.load < 0.0)
      throw ValidationError("bus " + std::to_string(i + 1) + ": bad load");
    if (!std::isfinite(b.shed_penalty) || b.shed_penalty <= 0.0)
      throw ValidationError("bus " + std::to_string(i + 1) + ": shed penalty must be positive");
  }
  {
    std::vector<double> pens;
    pens.reserve(nb);
    for (const auto& b : buses) pens.push_back(b.shed_penalty);
    std::sort(pens.begin(), pens.end());
    if (std::adjacent_find(pens.begin(), pens.end()) != pens.end())
      throw ValidationError("shed penalties must be pairwise distinct");
  }

  for (std::size_t k = 0; k < lines.size(); ++k) {
    const Line& l = lines[k];
    if (l.from < 0 || l.from >= nb || l.to < 0 || l.to >= nb)
      throw ValidationError("line " + std::to_string(k + 1) + ": endpoint out of range");
    if (l.from == l.to)
      throw ValidationError("line " + std::to_string(k + 1) + ": self-loop");
    if (!std::isfinite(l.susceptance) || l.susceptance <= 0.0)
      throw ValidationError("line " + std::to_string(k + 1) + ": susceptance must be positive");
    if (!std::isfinite(l.flow_limit) || l.flow_limit <= 0.0)
      throw ValidationError("line " + std::to_string(k + 1) + ": flow limit must be positive");
  }

  for (std::size_t g = 0; g < generators.size(); ++g) {
    const Generator& gen = generators[g];
    if (gen.bus < 0 || gen.bus >= nb)
      throw ValidationError("generator " + std::to_string(g + 1) + ": bus out of range");
    if (!std::isfinite(gen.p_min) || !std::isfinite(gen.p_max) || gen.p_min > gen.p_max)
      throw ValidationError("generator " + std::to_string(g + 1) + ": bad limits");
    if (gen.p_min < 0.0)
      throw ValidationError("generator " + std::to_string(g + 1) + ": negative p_min");
    if (!std::isfinite(gen.cost_quad) || gen.cost_quad < 0.0)
      throw ValidationError("generator " + std::to_string(g + 1) + ": quadratic cost must be >= 0");
    if (!std::isfinite(gen.cost_lin))
      throw ValidationError("generator " + std::to_string(g + 1) + ": bad linear cost");
  }

  for (std::size_t w = 0; w < wind_farms.size(); ++w) {
    const WindFarm& f = wind_farms[w];
    if (f.bus < 0 || f.bus >= nb)
      throw ValidationError("wind farm " + std::to_string(w + 1) + ": bus out of range");
    if (!std::isfinite(f.forecast) || f.forecast < 0.0)
      throw ValidationError("wind farm " + std::to_string(w + 1) + ": negative forecast");
    if (!std::isfinite(f.curtail_penalty) || f.curtail_penalty <= 0.0)
      throw ValidationError("wind farm " + std::to_string(w + 1) + ": curtail penalty must be positive");
  }
}

void Grid::finalize() {
  validate();
  ptdf = compute_ptdf(bus_count(), lines, slack_bus);
}

void Grid::set_slack(int bus) {
  if (bus < 0 || bus >= bus_count()) throw ValidationError("slack bus out of range");
  slack_bus = bus;
  ptdf = compute_ptdf(bus_count(), lines, slack_bus);
}

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

Mat compute_ptdf(int n_buses, const std::vector<Line>& lines, int slack_bus) {
  const int nl = static_cast<int>(lines.size());
  if (n_buses < 1) throw ValidationError("ptdf: no buses");
  if (slack_bus < 0 || slack_bus >= n_buses) throw ValidationError("ptdf: slack out of range");

  for (int k = 0; k < nl; ++k) {
    if (!(lines[k].susceptance > 0.0))
      throw ValidationError("ptdf: line " + std::to_string(k + 1) + " has non-positive susceptance");
    if (lines[k].from == lines[k].to || lines[k].from < 0 || lines[k].to < 0 ||
        lines[k].from >= n_buses || lines[k].to >= n_buses)
      throw ValidationError("ptdf: line " + std::to_string(k + 1) + " has bad endpoints");
  }

  UnionFind uf(n_buses);
  for (const auto& l : lines) uf.unite(l.from, l.to);
  for (int i = 0; i < n_buses; ++i)
    if (uf.find(i) != uf.find(slack_bus))
      throw NumericalError("ptdf: network is disconnected");

  Mat phi = Mat::Zero(nl, n_buses);
  if (n_buses == 1 || nl == 0) return phi;

  const int nr = n_buses - 1;
  auto red = [slack_bus](int i) { return i < slack_bus ? i : i - 1; };

  Mat bred = Mat::Zero(nr, nr);
  for (const auto& l : lines) {
    const double b = l.susceptance;
    if (l.from != slack_bus) bred(red(l.from), red(l.from)) += b;
    if (l.to != slack_bus) bred(red(l.to), red(l.to)) += b;
    if (l.from != slack_bus && l.to != slack_bus) {
      bred(red(l.from), red(l.to)) -= b;
      bred(red(l.to), red(l.from)) -= b;
    }
  }

  Eigen::PartialPivLU<Mat> lu(bred);

  // One right-hand side per line; the reduced matrix is symmetric so a
  // single factorization serves them all.
  Mat rhs = Mat::Zero(nr, nl);
  for (int k = 0; k < nl; ++k) {
    const Line& l = lines[k];
    if (l.from != slack_bus) rhs(red(l.from), k) += l.susceptance;
    if (l.to != slack_bus) rhs(red(l.to), k) -= l.susceptance;
  }
  Mat sol = lu.solve(rhs);  // nr x nl

  for (int k = 0; k < nl; ++k)
    for (int i = 0; i < n_buses; ++i)
      if (i != slack_bus) phi(k, i) = sol(red(i), k);

  return phi;
}

namespace {

// Merit-order dispatch ignoring the network, used only to scale line limits
// while generating synthetic grids.
Vec unconstrained_dispatch(const std::vector<Generator>& gens, double demand) {
  double lo = 1e18, hi = -1e18;
  for (const auto& g : gens) {
    lo = std::min(lo, g.cost_lin);
    hi = std::max(hi, g.cost_lin + 2.0 * effective_quad_cost(g) * g.p_max);
  }
  lo -= 1.0;
  hi += 1.0;
  auto total_at = [&](double lam, Vec* out) {
    double tot = 0.0;
    for (std::size_t i = 0; i < gens.size(); ++i) {
      const auto& g = gens[i];
      double p = (lam - g.cost_lin) / (2.0 * effective_quad_cost(g));
      p = std::clamp(p, g.p_min, g.p_max);
      if (out) (*out)[static_cast<int>(i)] = p;
      tot += p;
    }
    return tot;
  };
  for (int it = 0; it < 100; ++it) {
    double mid = 0.5 * (lo + hi);
    if (total_at(mid, nullptr) < demand)
      lo = mid;
    else
      hi = mid;
  }
  Vec p = Vec::Zero(static_cast<int>(gens.size()));
  total_at(hi, &p);
  return p;
}

}  // namespace

Grid generate_synthetic_grid(int n_buses, std::uint64_t seed, WindProfile profile) {
  if (n_buses < 2) throw ValidationError("synthetic grid needs at least 2 buses");

  Rng rng(derive_seed(seed, "grid"));
  Grid g;
  g.buses.resize(n_buses);

  double total_load = 0.0;
  for (int i = 0; i < n_buses; ++i) {
    g.buses[i].load = rng.uniform(0.05, 0.25);
    g.buses[i].shed_penalty = 1000.0 + 0.137 * i;
    total_load += g.buses[i].load;
  }

  // Random recursive tree keeps the graph connected; extra edges take the
  // line/bus ratio to ~1.2.
  std::set<std::pair<int, int>> seen;
  auto add_line = [&](int a, int b) {
    Line l;
    l.from = std::min(a, b);
    l.to = std::max(a, b);
    l.susceptance = rng.uniform(5.0, 25.0);
    l.flow_limit = 1.0;  // placeholder, tuned below
    seen.insert({l.from, l.to});
    g.lines.push_back(l);
  };
  for (int i = 1; i < n_buses; ++i)
    add_line(i, static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i))));

  const long max_lines =
      static_cast<long>(n_buses) * (n_buses - 1) / 2;
  long target_lines = std::max<long>(n_buses - 1, std::lround(1.2 * n_buses));
  target_lines = std::min(target_lines, max_lines);
  while (static_cast<long>(g.lines.size()) < target_lines) {
    int a = static_cast<int>(rng.uniform_int(n_buses));
    int b = static_cast<int>(rng.uniform_int(n_buses));
    if (a == b) continue;
    if (seen.count({std::min(a, b), std::max(a, b)})) continue;
    add_line(a, b);
  }

  const int n_gen = std::max<int>(1, static_cast<int>(std::lround(0.2 * n_buses)));
  {
    std::vector<double> weights(n_gen);
    double wsum = 0.0;
    for (auto& w : weights) {
      w = rng.uniform(0.5, 2.0);
      wsum += w;
    }
    const double capacity = 1.45 * total_load;
    for (int i = 0; i < n_gen; ++i) {
      Generator gen;
      gen.bus = static_cast<int>(rng.uniform_int(n_buses));
      gen.p_min = 0.0;
      gen.p_max = capacity * weights[i] / wsum;
      gen.cost_quad = rng.uniform(0.5, 3.0);
      gen.cost_lin = rng.uniform(15.0, 45.0);
      gen.committed = true;
      g.generators.push_back(gen);
    }
  }

  const int n_wind = std::max<int>(1, static_cast<int>(std::lround(0.018 * n_buses)));
  {
    std::vector<int> order(n_buses);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const double share = profile == WindProfile::base ? 0.10 : 0.30;
    std::vector<double> weights(n_wind);
    double wsum = 0.0;
    for (auto& w : weights) {
      w = rng.uniform(0.7, 1.3);
      wsum += w;
    }
    for (int i = 0; i < n_wind; ++i) {
      WindFarm f;
      f.bus = order[i % n_buses];
      f.forecast = share * total_load * weights[i] / wsum;
      f.curtail_penalty = rng.uniform(40.0, 60.0) + 0.011 * i;
      g.wind_farms.push_back(f);
    }
  }

  g.slack_bus = 0;

  // Scale thermal limits off the flows of a network-blind dispatch: one
  // line is squeezed below its nominal flow so the solved case has a small
  // congested set, everything else gets generous headroom.
  Mat phi = compute_ptdf(n_buses, g.lines, g.slack_bus);
  Vec inj = -g.base_net_load();
  Vec dispatch = unconstrained_dispatch(g.generators, inj.sum() * -1.0);
  for (int i = 0; i < n_gen; ++i) inj[g.generators[i].bus] += dispatch[i];
  Vec f0 = phi * inj;

  const int nl = g.line_count();
  double fmax_abs = f0.cwiseAbs().maxCoeff();
  std::vector<int> by_flow(nl);
  std::iota(by_flow.begin(), by_flow.end(), 0);
  std::sort(by_flow.begin(), by_flow.end(),
            [&](int a, int b) { return std::abs(f0[a]) > std::abs(f0[b]); });

  int n_congest = std::max<int>(1, static_cast<int>(std::lround(0.005 * nl)));
  std::set<int> squeezed;
  if (fmax_abs > 0.02) {
    for (int r = 0; r < n_congest && r < nl; ++r) {
      int k = by_flow[r];
      if (std::abs(f0[k]) < 0.25 * fmax_abs) break;
      g.lines[k].flow_limit = 0.90 * std::abs(f0[k]);
      squeezed.insert(k);
    }
  }
  for (int k = 0; k < nl; ++k) {
    if (squeezed.count(k)) continue;
    g.lines[k].flow_limit =
        std::max({1.6 * std::abs(f0[k]), 0.25 * fmax_abs, 0.05});
  }

  g.finalize();
  return g;
}

namespace detail {

json grid_to_json(const Grid& g) {
  json j;
  j["schema_version"] = 1;
  j["base_mva"] = kBaseMva;
  j["slack_bus"] = g.slack_bus + 1;
  json buses = json::array();
  for (int i = 0; i < g.bus_count(); ++i) {
    buses.push_back({{"id", i + 1},
                     {"load_mw", g.buses[i].load * kBaseMva},
                     {"shed_penalty_usd_mwh", g.buses[i].shed_penalty}});
  }
  j["buses"] = std::move(buses);
  json lines = json::array();
  for (const auto& l : g.lines) {
    lines.push_back({{"from", l.from + 1},
                     {"to", l.to + 1},
                     {"susceptance_pu", l.susceptance},
                     {"flow_limit_mw", l.flow_limit * kBaseMva}});
  }
  j["lines"] = std::move(lines);
  json gens = json::array();
  for (const auto& gen : g.generators) {
    gens.push_back({{"bus", gen.bus + 1},
                    {"p_min_mw", gen.p_min * kBaseMva},
                    {"p_max_mw", gen.p_max * kBaseMva},
                    {"cost_quad_usd_mw2h", gen.cost_quad / kBaseMva},
                    {"cost_lin_usd_mwh", gen.cost_lin},
                    {"committed", gen.committed}});
  }
  j["generators"] = std::move(gens);
  json wf = json::array();
  for (const auto& w : g.wind_farms) {
    wf.push_back({{"bus", w.bus + 1},
                  {"forecast_mw", w.forecast * kBaseMva},
                  {"curtail_penalty_usd_mwh", w.curtail_penalty}});
  }
  j["wind_farms"] = std::move(wf);
  return j;
}

Grid grid_from_json(const json& j) {
  Grid g;
  try {
    if (j.at("schema_version").get<int>() != 1)
      throw ValidationError("grid file: unsupported schema version");
    const double base = j.value("base_mva", kBaseMva);
    if (base != kBaseMva)
      throw ValidationError("grid file: unsupported base power");

    const auto& buses = j.at("buses");
    int idx = 0;
    for (const auto& jb : buses) {
      if (jb.at("id").get<int>() != idx + 1)
        throw ValidationError("grid file: bus ids must be 1..B in order");
      Bus b;
      b.load = jb.at("load_mw").get<double>() / kBaseMva;
      b.shed_penalty = jb.at("shed_penalty_usd_mwh").get<double>();
      g.buses.push_back(b);
      ++idx;
    }
    const int nb = g.bus_count();
    auto bus_index = [nb](int id, const char* what) {
      if (id < 1 || id > nb)
        throw ValidationError(std::string("grid file: unknown bus id in ") + what);
      return id - 1;
    };

    for (const auto& jl : j.at("lines")) {
      Line l;
      l.from = bus_index(jl.at("from").get<int>(), "line");
      l.to = bus_index(jl.at("to").get<int>(), "line");
      l.susceptance = jl.at("susceptance_pu").get<double>();
      l.flow_limit = jl.at("flow_limit_mw").get<double>() / kBaseMva;
      g.lines.push_back(l);
    }
    for (const auto& jg : j.at("generators")) {
      Generator gen;
      gen.bus = bus_index(jg.at("bus").get<int>(), "generator");
      gen.p_min = jg.at("p_min_mw").get<double>() / kBaseMva;
      gen.p_max = jg.at("p_max_mw").get<double>() / kBaseMva;
      gen.cost_quad = jg.at("cost_quad_usd_mw2h").get<double>() * kBaseMva;
      gen.cost_lin = jg.at("cost_lin_usd_mwh").get<double>();
      gen.committed = jg.value("committed", true);
      g.generators.push_back(gen);
    }
    for (const auto& jw : j.at("wind_farms")) {
      WindFarm w;
      w.bus = bus_index(jw.at("bus").get<int>(), "wind farm");
      w.forecast = jw.at("forecast_mw").get<double>() / kBaseMva;
      w.curtail_penalty = jw.at("curtail_penalty_usd_mwh").get<double>();
      g.wind_farms.push_back(w);
    }
    g.slack_bus = bus_index(j.value("slack_bus", 1), "slack");
  } catch (const json::exception& e) {
    throw ValidationError(std::string("grid file: ") + e.what());
  }
  g.finalize();
  return g;
}

}  // namespace detail

std::string grid_to_string(const Grid& grid) {
  return detail::grid_to_json(grid).dump(2) + "\n";
}

void save_grid(const Grid& grid, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open for writing: " + path);
  out << grid_to_string(grid);
  if (!out) throw ValidationError("write failed: " + path);
}

Grid load_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open grid file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("grid file parse error: ") + e.what());
  }
  return detail::grid_from_json(j);
}

}  // namespace asopf
