#include "asopf/datagen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

#include "asopf/parallel.hpp"
#include "asopf/rng.hpp"
#include "grid_json.hpp"
#include "serial_util.hpp"

namespace asopf {

Vec perturb_wind(const Vec& w0, double eta, const Vec& xi) {
  if (xi.size() != w0.size()) throw ValidationError("perturbation has wrong length");
  if (eta < 0.0 || eta >= 1.0) throw ValidationError("eta must lie in [0, 1)");
  Vec w = w0.array() * (1.0 + eta * xi.array());
  return w.cwiseMax(0.0);
}

Vec perturb_wind(const Vec& w0, double eta, std::uint64_t seed) {
  Rng rng(seed);
  Vec xi(w0.size());
  for (Eigen::Index i = 0; i < xi.size(); ++i) xi[i] = rng.normal();
  return perturb_wind(w0, eta, xi);
}

Vec compute_load_flows(const Mat& ptdf, const Vec& net_load) {
  if (ptdf.cols() != net_load.size())
    throw ValidationError("net load does not match the sensitivity matrix");
  if (ptdf.rows() == 0) return Vec();
  return ptdf * net_load;
}

Vec Dataset::features(int idx) const {
  const auto& s = samples.at(static_cast<std::size_t>(idx));
  Vec f(feature_dim());
  f.head(grid.bus_count()) = s.net_load;
  if (grid.line_count() > 0) f.tail(grid.line_count()) = s.load_flows;
  return f;
}

Dataset build_dataset(const Grid& grid, const Vec& demand, const Vec& w0, double eta,
                      int n_samples, std::uint64_t seed, const DatagenOptions& opts) {
  if (demand.size() != grid.bus_count())
    throw ValidationError("demand vector does not match the grid");
  if (w0.size() != grid.wind_count())
    throw ValidationError("wind forecast does not match the grid");
  if (eta < 0.0 || eta >= 1.0) throw ValidationError("eta must lie in [0, 1)");
  if (opts.demand_eta < 0.0 || opts.demand_eta >= 1.0)
    throw ValidationError("demand eta must lie in [0, 1)");
  if (n_samples < 2 || n_samples % 2 != 0)
    throw ValidationError("sample count must be even and at least 2");

  Dataset ds;
  ds.grid = grid;
  ds.eta = eta;
  ds.demand_eta = opts.demand_eta;
  ds.seed = seed;
  ds.samples.resize(static_cast<std::size_t>(n_samples));

  std::atomic<int> failures{0};
  std::atomic<bool> curtail_flagged{false};

  parallel_for(static_cast<std::size_t>(n_samples), [&](std::size_t i) {
    const std::uint64_t sample_seed = derive_seed(seed, "sample", i);
    Sample s;
    bool done = false;
    for (int attempt = 0; attempt < opts.max_attempts_per_sample && !done; ++attempt) {
      const std::uint64_t draw_seed =
          attempt == 0 ? sample_seed : derive_seed(sample_seed, "retry", attempt);
      Rng rng(draw_seed);
      Vec xi(w0.size());
      for (Eigen::Index f = 0; f < xi.size(); ++f) xi[f] = rng.normal();
      s.wind = perturb_wind(w0, eta, xi);
      Vec load = demand;
      if (opts.demand_eta > 0.0) {
        for (Eigen::Index b = 0; b < load.size(); ++b)
          load[b] = std::max(0.0, load[b] * (1.0 + opts.demand_eta * rng.normal()));
      }
      s.net_load = load;
      for (int w = 0; w < grid.wind_count(); ++w)
        s.net_load[grid.wind_farms[w].bus] -= s.wind[w];
      s.truth = solve_dcopf(grid, s.net_load, opts.solve);
      if (s.truth.status == SolveStatus::optimal) {
        s.seed = draw_seed;
        done = true;
      } else {
        failures.fetch_add(1, std::memory_order_relaxed);
      }
    }
    if (!done)
      throw NumericalError("sample " + std::to_string(i) + " failed to solve after " +
                           std::to_string(opts.max_attempts_per_sample) + " draws");
    s.load_flows = compute_load_flows(grid.ptdf, s.net_load);
    s.labels = extract_labels(grid, s.net_load, s.truth);
    for (int w = 0; w < grid.wind_count(); ++w) {
      if (s.truth.curtail[w] > s.wind[w] + 1e-6 &&
          !curtail_flagged.exchange(true)) {
        std::cerr << "warning: curtailment at farm " << w + 1
                  << " exceeds the realized wind (slack caps are not modeled)\n";
      }
    }
    ds.samples[i] = std::move(s);
  });

  const int failed = failures.load();
  if (failed > opts.max_failure_fraction * n_samples) {
    std::ostringstream os;
    os << failed << " of " << n_samples << " draws failed to solve, above the "
       << opts.max_failure_fraction * 100.0 << "% budget";
    throw NumericalError(os.str());
  }
  if (failed > 0)
    std::cerr << "note: " << failed << " draws were redrawn after solver failures\n";

  std::vector<int> order(static_cast<std::size_t>(n_samples));
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(seed, "split"));
  split_rng.shuffle(order);
  const int half = n_samples / 2;
  ds.train_indices.assign(order.begin(), order.begin() + half);
  ds.test_indices.assign(order.begin() + half, order.end());
  std::sort(ds.train_indices.begin(), ds.train_indices.end());
  std::sort(ds.test_indices.begin(), ds.test_indices.end());
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  const LabelManifest m = LabelManifest::for_grid(ds.grid);
  detail::json j;
  j["schema_version"] = 1;
  j["eta"] = ds.eta;
  j["demand_eta"] = ds.demand_eta;
  j["seed"] = ds.seed;
  j["grid"] = detail::grid_to_json(ds.grid);
  j["train_indices"] = ds.train_indices;
  j["test_indices"] = ds.test_indices;
  detail::json samples = detail::json::array();
  for (const auto& s : ds.samples) {
    detail::json js;
    js["seed"] = s.seed;
    js["wind_pu"] = detail::vec_to_json(s.wind);
    js["net_load_pu"] = detail::vec_to_json(s.net_load);
    js["load_flows_pu"] = detail::vec_to_json(s.load_flows);
    js["labels"] = detail::bits_to_json(s.labels.flat(m));
    js["label_values"] = detail::vec_to_json(s.labels.values_flat(m));
    js["truth"] = detail::sol_to_json(s.truth, /*include_timing=*/false);
    samples.push_back(std::move(js));
  }
  j["samples"] = std::move(samples);
  detail::write_json_file(j, path, "dataset");
}

namespace {

ActiveSetLabels labels_from_row(const LabelManifest& m, const detail::json& bits,
                                const detail::json& values) {
  ActiveSetLabels l = ActiveSetLabels::from_flat(m, detail::bits_from_json(bits));
  Vec v = detail::vec_from_json(values);
  if (v.size() != m.total()) throw ValidationError("label values have wrong length");
  int at = 0;
  auto take = [&](int n) {
    Vec seg = v.segment(at, n);
    at += n;
    return seg;
  };
  l.gen_upper_val = take(m.n_gen);
  l.gen_lower_val = take(m.n_gen);
  l.line_upper_val = take(m.n_line);
  l.line_lower_val = take(m.n_line);
  l.shed_val = take(m.n_bus);
  l.curtail_val = take(m.n_wind);
  return l;
}

}  // namespace

Dataset load_dataset(const std::string& path) {
  detail::json j = detail::read_json_file(path, "dataset");
  try {
    if (j.at("schema_version").get<int>() != 1)
      throw ValidationError("unsupported dataset schema version");
    Dataset ds;
    ds.eta = j.at("eta").get<double>();
    ds.demand_eta = j.value("demand_eta", 0.0);
    ds.seed = j.at("seed").get<std::uint64_t>();
    ds.grid = detail::grid_from_json(j.at("grid"));
    const LabelManifest m = LabelManifest::for_grid(ds.grid);
    ds.train_indices = j.at("train_indices").get<std::vector<int>>();
    ds.test_indices = j.at("test_indices").get<std::vector<int>>();
    for (const auto& js : j.at("samples")) {
      Sample s;
      s.seed = js.at("seed").get<std::uint64_t>();
      s.wind = detail::vec_from_json(js.at("wind_pu"));
      s.net_load = detail::vec_from_json(js.at("net_load_pu"));
      s.load_flows = detail::vec_from_json(js.at("load_flows_pu"));
      s.labels = labels_from_row(m, js.at("labels"), js.at("label_values"));
      s.truth = detail::sol_from_json(js.at("truth"));
      if (s.net_load.size() != ds.grid.bus_count() ||
          s.wind.size() != ds.grid.wind_count())
        throw ValidationError("sample shapes do not match the grid");
      const Vec expect = compute_load_flows(ds.grid.ptdf, s.net_load);
      if (s.load_flows.size() != expect.size())
        throw ValidationError("sample flow features have wrong length");
      if (expect.size() > 0 &&
          (s.load_flows - expect).cwiseAbs().maxCoeff() > 1e-9)
        throw ValidationError("sample flow features disagree with the stored grid");
      ds.samples.push_back(std::move(s));
    }
    const int n = static_cast<int>(ds.samples.size());
    for (int idx : ds.train_indices)
      if (idx < 0 || idx >= n) throw ValidationError("train index out of range");
    for (int idx : ds.test_indices)
      if (idx < 0 || idx >= n) throw ValidationError("test index out of range");
    return ds;
  } catch (const detail::json::exception& e) {
    throw ValidationError(std::string("malformed dataset file '") + path + "': " + e.what());
  }
}

}  // namespace asopf
