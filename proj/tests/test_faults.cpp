#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "asopf/datagen.hpp"
#include "asopf/ese.hpp"
#include "asopf/labels.hpp"
#include "asopf/opf.hpp"

using namespace asopf;

namespace {

struct FlipTally {
  int flips = 0;     // label vectors tried
  int rejected = 0;  // assembly refused the labels outright
  int drifted = 0;   // dispatch moved materially off the optimum
  int silent = 0;    // moved materially yet still reported trusted
};

// Flips every bit of every label vector, one at a time, and records whether a
// materially wrong dispatch ever slips through with the trusted flag set.
FlipTally sweep(const Grid& grid, const Sample& s, double dev_tol) {
  const LabelManifest m = LabelManifest::for_grid(grid);
  const std::vector<std::uint8_t> base = s.labels.flat(m);
  FlipTally tally;
  for (int v = 0; v < m.total(); ++v) {
    std::vector<std::uint8_t> bits = base;
    bits[static_cast<std::size_t>(v)] ^= 1;
    ActiveSetLabels lab = ActiveSetLabels::from_flat(m, bits);
    tally.flips += 1;
    try {
      EseSolution es = solve_with_labels(grid, s.net_load, lab);
      OpfSolution sol = to_opf_solution(grid, s.net_load, es);
      const double dev = (sol.p - s.truth.p).cwiseAbs().maxCoeff();
      if (dev > dev_tol) {
        tally.drifted += 1;
        if (es.trusted) tally.silent += 1;
      }
    } catch (const ValidationError&) {
      tally.rejected += 1;  // loud by construction
    }
  }
  return tally;
}

}  // namespace

TEST_CASE("no single label flip changes the dispatch silently") {
  Grid g = generate_synthetic_grid(30, 13);
  Vec d(g.bus_count());
  for (int i = 0; i < g.bus_count(); ++i) d[i] = g.buses[i].load;
  Vec w0(g.wind_count());
  for (int i = 0; i < g.wind_count(); ++i) w0[i] = g.wind_farms[i].forecast;
  Dataset ds = build_dataset(g, d, w0, 0.08, 6, 17);

  int flips = 0, drifted = 0;
  for (int si = 0; si < 3; ++si) {
    const Sample& s = ds.samples[static_cast<std::size_t>(si)];
    FlipTally t = sweep(g, s, 0.05);
    CHECK(t.silent == 0);
    flips += t.flips;
    drifted += t.drifted;
  }
  // The sweep has to cover the whole label vector and actually provoke some
  // materially wrong dispatches, otherwise the zero-silent claim is hollow.
  CHECK(flips >= 3 * LabelManifest::for_grid(g).total());
  CHECK(drifted >= 1);
}

TEST_CASE("deactivating a truly binding constraint is caught") {
  // A congested case where the binding line and the shed bus are known: turn
  // each of those hot bits off individually and demand a loud outcome.
  Grid g;
  Bus b0;
  b0.load = 0.0;
  b0.shed_penalty = 1000.0;
  Bus b1;
  b1.load = 1.0;
  b1.shed_penalty = 1001.0;
  g.buses = {b0, b1};
  Line l;
  l.from = 0;
  l.to = 1;
  l.susceptance = 10.0;
  l.flow_limit = 0.5;
  g.lines.push_back(l);
  Generator gen;
  gen.bus = 0;
  gen.p_min = 0.0;
  gen.p_max = 5.0;
  gen.cost_quad = 0.02;
  gen.cost_lin = 20.0;
  g.generators.push_back(gen);
  g.finalize();

  Vec nl = g.base_net_load();
  OpfSolution truth = solve_dcopf(g, nl);
  REQUIRE(truth.status == SolveStatus::optimal);

  ActiveSetLabels labels = extract_labels(g, nl, truth);
  REQUIRE(labels.line_upper[0] == 1);
  REQUIRE(labels.shed[1] == 1);

  SUBCASE("dropping the line bit") {
    ActiveSetLabels lab = labels;
    lab.line_upper[0] = 0;
    EseSolution es = solve_with_labels(g, nl, lab);
    OpfSolution sol = to_opf_solution(g, nl, es);
    const double dev = (sol.p - truth.p).cwiseAbs().maxCoeff();
    if (dev > 0.05) CHECK_FALSE(es.trusted);
    // Without the congestion the assembled flow must overload the line, so
    // either the dispatch moved or the audit tripped on feasibility.
    CHECK((dev > 0.05 || !es.trusted));
  }

  SUBCASE("dropping the shed bit") {
    ActiveSetLabels lab = labels;
    lab.shed[1] = 0;
    EseSolution es = solve_with_labels(g, nl, lab);
    CHECK_FALSE(es.trusted);
  }
}

TEST_CASE("label noise degrades gracefully across a batch") {
  // Predicted labels in the wild arrive with several wrong bits at once.
  // Corrupt two bits per sample and require the pipeline contract: every
  // answer is either trusted-and-accurate or flagged, never both wrong.
  Grid g = generate_synthetic_grid(16, 21);
  Vec d(g.bus_count());
  for (int i = 0; i < g.bus_count(); ++i) d[i] = g.buses[i].load;
  Vec w0(g.wind_count());
  for (int i = 0; i < g.wind_count(); ++i) w0[i] = g.wind_farms[i].forecast;
  Dataset ds = build_dataset(g, d, w0, 0.05, 10, 29);
  const LabelManifest m = LabelManifest::for_grid(g);

  int loud = 0;
  for (std::size_t si = 0; si < ds.samples.size(); ++si) {
    const Sample& s = ds.samples[si];
    std::vector<std::uint8_t> bits = s.labels.flat(m);
    const int a = static_cast<int>(si * 7 + 1) % m.total();
    const int b = static_cast<int>(si * 13 + 5) % m.total();
    bits[static_cast<std::size_t>(a)] ^= 1;
    bits[static_cast<std::size_t>(b)] ^= 1;
    try {
      EseSolution es = solve_with_labels(g, s.net_load, ActiveSetLabels::from_flat(m, bits));
      OpfSolution sol = to_opf_solution(g, s.net_load, es);
      const double dev = (sol.p - s.truth.p).cwiseAbs().maxCoeff();
      if (es.trusted) {
        CHECK(dev <= 0.05);
      } else {
        loud += 1;
      }
    } catch (const ValidationError&) {
      loud += 1;
    }
  }
  // Some corruptions must have been flagged, or the batch was toothless.
  CHECK(loud >= 1);
}
