#include "asopf/labels.hpp"

#include <algorithm>
#include <cmath>

#include "serial_util.hpp"

namespace asopf {

LabelManifest LabelManifest::for_grid(const Grid& g) {
  LabelManifest m;
  m.n_gen = static_cast<int>(g.committed_indices().size());
  m.n_line = g.line_count();
  m.n_bus = g.bus_count();
  m.n_wind = g.wind_count();
  return m;
}

int LabelManifest::category(int flat) const {
  if (flat < 0 || flat >= total()) throw ValidationError("label position out of range");
  if (flat < 2 * n_gen) return 0;
  flat -= 2 * n_gen;
  if (flat < 2 * n_line) return 1;
  flat -= 2 * n_line;
  if (flat < n_bus) return 2;
  return 3;
}

namespace {

void check_block(const char* name, std::size_t got, int want) {
  if (got != static_cast<std::size_t>(want))
    throw ValidationError(std::string("label block '") + name + "' has size " +
                          std::to_string(got) + ", expected " + std::to_string(want));
}

void append_bits(std::vector<std::uint8_t>& out, const std::vector<std::uint8_t>& block) {
  out.insert(out.end(), block.begin(), block.end());
}

}  // namespace

std::vector<std::uint8_t> ActiveSetLabels::flat(const LabelManifest& m) const {
  check_block("gen_upper", gen_upper.size(), m.n_gen);
  check_block("gen_lower", gen_lower.size(), m.n_gen);
  check_block("line_upper", line_upper.size(), m.n_line);
  check_block("line_lower", line_lower.size(), m.n_line);
  check_block("shed", shed.size(), m.n_bus);
  check_block("curtail", curtail.size(), m.n_wind);
  std::vector<std::uint8_t> out;
  out.reserve(m.total());
  append_bits(out, gen_upper);
  append_bits(out, gen_lower);
  append_bits(out, line_upper);
  append_bits(out, line_lower);
  append_bits(out, shed);
  append_bits(out, curtail);
  return out;
}

Vec ActiveSetLabels::values_flat(const LabelManifest& m) const {
  if (!has_values()) throw ValidationError("label set carries no magnitudes");
  Vec out(m.total());
  int at = 0;
  auto put = [&](const Vec& v, int want, const char* name) {
    check_block(name, static_cast<std::size_t>(v.size()), want);
    out.segment(at, want) = v;
    at += want;
  };
  put(gen_upper_val, m.n_gen, "gen_upper");
  put(gen_lower_val, m.n_gen, "gen_lower");
  put(line_upper_val, m.n_line, "line_upper");
  put(line_lower_val, m.n_line, "line_lower");
  put(shed_val, m.n_bus, "shed");
  put(curtail_val, m.n_wind, "curtail");
  return out;
}

ActiveSetLabels ActiveSetLabels::from_flat(const LabelManifest& m,
                                           const std::vector<std::uint8_t>& bits) {
  if (bits.size() != static_cast<std::size_t>(m.total()))
    throw ValidationError("flat label vector has size " + std::to_string(bits.size()) +
                          ", expected " + std::to_string(m.total()));
  ActiveSetLabels l;
  auto it = bits.begin();
  auto take = [&](int n) {
    std::vector<std::uint8_t> block(it, it + n);
    it += n;
    return block;
  };
  l.gen_upper = take(m.n_gen);
  l.gen_lower = take(m.n_gen);
  l.line_upper = take(m.n_line);
  l.line_lower = take(m.n_line);
  l.shed = take(m.n_bus);
  l.curtail = take(m.n_wind);
  return l;
}

ActiveSetLabels extract_labels(const Grid& grid, const Vec& net_load,
                               const OpfSolution& sol, double tol_dual,
                               double tol_slack) {
  const auto committed = grid.committed_indices();
  const int ng = static_cast<int>(committed.size());
  const int nl = grid.line_count();
  const int nb = grid.bus_count();
  const int nw = grid.wind_count();
  if (sol.p.size() != grid.gen_count() || sol.shed.size() != nb ||
      sol.curtail.size() != nw || sol.mu_upper.size() != nl ||
      sol.alpha_upper.size() != grid.gen_count())
    throw ValidationError("solution shape does not match the grid");

  ActiveSetLabels l;
  l.gen_upper.assign(ng, 0);
  l.gen_lower.assign(ng, 0);
  l.line_upper.assign(nl, 0);
  l.line_lower.assign(nl, 0);
  l.shed.assign(nb, 0);
  l.curtail.assign(nw, 0);
  l.gen_upper_val = Vec::Zero(ng);
  l.gen_lower_val = Vec::Zero(ng);
  l.line_upper_val = Vec::Zero(nl);
  l.line_lower_val = Vec::Zero(nl);
  l.shed_val = Vec::Zero(nb);
  l.curtail_val = Vec::Zero(nw);

  Vec flows = compute_flows(grid, net_load, sol);

  for (int ci = 0; ci < ng; ++ci) {
    int g = committed[ci];
    const auto& gen = grid.generators[g];
    double au = sol.alpha_upper[g];
    double al = sol.alpha_lower[g];
    l.gen_upper_val[ci] = au;
    l.gen_lower_val[ci] = al;
    bool up = au > tol_dual && std::abs(sol.p[g] - gen.p_max) < tol_slack;
    bool dn = al > tol_dual && std::abs(sol.p[g] - gen.p_min) < tol_slack;
    if (up && dn) {
      // A generator pinned from both sides (p_min == p_max) keeps the side
      // with the larger price.
      if (au >= al) dn = false; else up = false;
    }
    l.gen_upper[ci] = up ? 1 : 0;
    l.gen_lower[ci] = dn ? 1 : 0;
  }

  for (int k = 0; k < nl; ++k) {
    double fmax = grid.lines[k].flow_limit;
    double mu = sol.mu_upper[k], ml = sol.mu_lower[k];
    l.line_upper_val[k] = mu;
    l.line_lower_val[k] = ml;
    bool up = mu > tol_dual && std::abs(flows[k] - fmax) < tol_slack;
    bool dn = ml > tol_dual && std::abs(flows[k] + fmax) < tol_slack;
    if (up && dn) {
      if (mu >= ml) dn = false; else up = false;
    }
    l.line_upper[k] = up ? 1 : 0;
    l.line_lower[k] = dn ? 1 : 0;
  }

  for (int i = 0; i < nb; ++i) {
    l.shed_val[i] = sol.shed[i];
    l.shed[i] = sol.shed[i] > tol_slack ? 1 : 0;
  }
  for (int w = 0; w < nw; ++w) {
    l.curtail_val[w] = sol.curtail[w];
    l.curtail[w] = sol.curtail[w] > tol_slack ? 1 : 0;
  }
  return l;
}

LabelStatistics label_statistics(const LabelManifest& m,
                                 const std::vector<ActiveSetLabels>& batch) {
  if (batch.empty()) throw ValidationError("label statistics need at least one sample");
  LabelStatistics st;
  st.frequency = Vec::Zero(m.total());
  st.max_value = Vec::Zero(m.total());
  for (const auto& l : batch) {
    auto bits = l.flat(m);
    Vec vals = l.values_flat(m);
    for (int j = 0; j < m.total(); ++j) {
      st.frequency[j] += bits[static_cast<std::size_t>(j)];
      st.max_value[j] = std::max(st.max_value[j], std::abs(vals[j]));
    }
  }
  st.frequency /= static_cast<double>(batch.size());
  return st;
}

void save_labels(const LabelManifest& m, const std::vector<ActiveSetLabels>& batch,
                 const std::string& path) {
  detail::json j;
  j["schema_version"] = 1;
  j["blocks"] = detail::json::array({
      detail::json{{"name", "gen_upper"}, {"size", m.n_gen}},
      detail::json{{"name", "gen_lower"}, {"size", m.n_gen}},
      detail::json{{"name", "line_upper"}, {"size", m.n_line}},
      detail::json{{"name", "line_lower"}, {"size", m.n_line}},
      detail::json{{"name", "shed"}, {"size", m.n_bus}},
      detail::json{{"name", "curtail"}, {"size", m.n_wind}},
  });
  detail::json rows = detail::json::array();
  for (const auto& l : batch) rows.push_back(detail::bits_to_json(l.flat(m)));
  j["rows"] = std::move(rows);
  detail::write_json_file(j, path, "labels");
}

std::pair<LabelManifest, std::vector<ActiveSetLabels>> load_labels(const std::string& path) {
  detail::json j = detail::read_json_file(path, "labels");
  try {
    if (j.at("schema_version").get<int>() != 1)
      throw ValidationError("unsupported labels schema version");
    LabelManifest m;
    for (const auto& b : j.at("blocks")) {
      std::string name = b.at("name").get<std::string>();
      int size = b.at("size").get<int>();
      if (size < 0) throw ValidationError("negative label block size");
      if (name == "gen_upper" || name == "gen_lower") m.n_gen = size;
      else if (name == "line_upper" || name == "line_lower") m.n_line = size;
      else if (name == "shed") m.n_bus = size;
      else if (name == "curtail") m.n_wind = size;
      else throw ValidationError("unknown label block '" + name + "'");
    }
    std::vector<ActiveSetLabels> batch;
    for (const auto& row : j.at("rows"))
      batch.push_back(ActiveSetLabels::from_flat(m, detail::bits_from_json(row)));
    return {m, std::move(batch)};
  } catch (const detail::json::exception& e) {
    throw ValidationError(std::string("malformed labels file '") + path + "': " + e.what());
  }
}

}  // namespace asopf
