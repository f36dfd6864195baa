#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <limits>

#include "asopf/datagen.hpp"
#include "asopf/mlp.hpp"
#include "asopf/rng.hpp"
#include "test_util.hpp"

using namespace asopf;
using namespace asopf::testutil;

namespace {

// Hand-built micro model; manifest comes from the one-bus grid so the
// output width (2 gen bits + 1 shed bit) is meaningful to predict_labels.
MlpModel micro_model(std::uint64_t seed, int d = 3, const std::vector<int>& hidden = {4}) {
  MlpModel m;
  m.manifest = LabelManifest::for_grid(one_bus());
  const int out = m.manifest.total();
  std::vector<int> dims;
  dims.push_back(d);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Mat w(dims[l + 1], dims[l]);
    for (int r = 0; r < w.rows(); ++r)
      for (int c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-0.8, 0.8);
    Vec b(dims[l + 1]);
    for (int r = 0; r < b.size(); ++r) b[r] = rng.uniform(-0.3, 0.3);
    m.w.push_back(std::move(w));
    m.b.push_back(std::move(b));
  }
  m.feature_mean = Vec::Zero(d);
  m.feature_std = Vec::Ones(d);
  m.loss_weights = Vec::Ones(out);
  for (int v = 0; v < out; ++v) m.loss_weights[v] = 0.5 + 0.7 * v;
  return m;
}

Grid small_case() { return generate_synthetic_grid(8, 5); }

Dataset small_dataset(double eta = 0.08, int n = 12) {
  Grid g = small_case();
  Vec d(g.bus_count());
  for (int i = 0; i < g.bus_count(); ++i) d[i] = g.buses[i].load;
  Vec w(g.wind_count());
  for (int i = 0; i < g.wind_count(); ++i) w[i] = g.wind_farms[i].forecast;
  return build_dataset(g, d, w, eta, n, 21);
}

}  // namespace

TEST_CASE("weighted cross entropy handles the pinned examples") {
  Vec probs(3);
  probs << 0.5, 1.0 - 1e-12, 0.9;
  std::vector<std::uint8_t> targets = {1, 1, 0};
  Vec w(3);
  w << 2.0, 5.0, 0.0;
  // 2 * (-log 0.5) + ~0 + 0 * anything
  CHECK(weighted_bce_loss(probs, targets, w) == doctest::Approx(1.3862943611).epsilon(1e-8));

  Vec w2 = w;
  w2[2] = 10.0;  // now the miss on output 2 costs something
  CHECK(weighted_bce_loss(probs, targets, w2) >
        weighted_bce_loss(probs, targets, w) + 0.5);

  Vec bad(2);
  bad << 0.5, 0.5;
  CHECK_THROWS_AS(weighted_bce_loss(bad, targets, w), ValidationError);
}

TEST_CASE("backprop matches central finite differences") {
  for (std::uint64_t seed : {11ULL, 12ULL, 13ULL, 14ULL, 15ULL}) {
    CAPTURE(seed);
    MlpModel m = micro_model(seed, 3, {4, 3});
    Rng rng(seed + 1000);
    const int n = 5;
    Mat x(3, n);
    Mat t(m.output_dim(), n);
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < 3; ++i) x(i, j) = rng.normal();
      for (int v = 0; v < m.output_dim(); ++v)
        t(v, j) = rng.uniform(0.0, 1.0) < 0.5 ? 0.0 : 1.0;
    }

    MlpGradients grads;
    mlp_loss_and_gradients(m, x, t, &grads);

    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t l = 0; l < m.w.size(); ++l) {
      for (int r = 0; r < m.w[l].rows(); ++r)
        for (int c = 0; c < m.w[l].cols(); ++c) {
          MlpModel up = m, dn = m;
          up.w[l](r, c) += h;
          dn.w[l](r, c) -= h;
          const double fd = (mlp_loss_and_gradients(up, x, t, nullptr) -
                             mlp_loss_and_gradients(dn, x, t, nullptr)) /
                            (2.0 * h);
          const double an = grads.dw[l](r, c);
          worst = std::max(worst, std::abs(fd - an) / std::max(1e-8, std::abs(fd)));
        }
      for (int r = 0; r < m.b[l].size(); ++r) {
        MlpModel up = m, dn = m;
        up.b[l][r] += h;
        dn.b[l][r] -= h;
        const double fd = (mlp_loss_and_gradients(up, x, t, nullptr) -
                           mlp_loss_and_gradients(dn, x, t, nullptr)) /
                          (2.0 * h);
        worst = std::max(worst, std::abs(fd - grads.db[l][r]) / std::max(1e-8, std::abs(fd)));
      }
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("doubling the loss weights doubles the loss, direction intact") {
  MlpModel m = micro_model(31);
  Rng rng(99);
  Mat x(3, 4);
  Mat t(m.output_dim(), 4);
  for (int j = 0; j < 4; ++j) {
    for (int i = 0; i < 3; ++i) x(i, j) = rng.normal();
    for (int v = 0; v < m.output_dim(); ++v) t(v, j) = (v + j) % 2;
  }
  MlpGradients g1, g2;
  const double l1 = mlp_loss_and_gradients(m, x, t, &g1);
  MlpModel m2 = m;
  m2.loss_weights *= 2.0;
  const double l2 = mlp_loss_and_gradients(m2, x, t, &g2);
  CHECK(l2 == doctest::Approx(2.0 * l1).epsilon(1e-12));
  for (std::size_t l = 0; l < g1.dw.size(); ++l)
    CHECK((g2.dw[l] - 2.0 * g1.dw[l]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("a zero-weight output contributes nothing to loss or gradient") {
  MlpModel m = micro_model(41);
  m.loss_weights[1] = 0.0;
  Rng rng(5);
  Mat x(3, 3);
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) x(i, j) = rng.normal();
  Mat t0 = Mat::Zero(m.output_dim(), 3);
  Mat t1 = t0;
  t1.row(1).setOnes();  // flip only the dead output's targets
  CHECK(mlp_loss_and_gradients(m, x, t0, nullptr) ==
        doctest::Approx(mlp_loss_and_gradients(m, x, t1, nullptr)).epsilon(1e-15));
}

TEST_CASE("all-zero parameters predict one half everywhere") {
  MlpModel m = micro_model(51);
  for (auto& w : m.w) w.setZero();
  for (auto& b : m.b) b.setZero();
  Vec x(3);
  x << 0.4, -1.0, 2.2;
  Vec y = mlp_forward(m, x);
  for (int v = 0; v < y.size(); ++v) CHECK(y[v] == doctest::Approx(0.5));
  // Boundary convention: 0.5 >= 0.5, every bit comes back set.
  ActiveSetLabels lab = predict_labels(m, x, 0.5);
  LabelManifest mf = m.manifest;
  for (auto bit : lab.flat(mf)) CHECK(bit == 1);
}

TEST_CASE("raising the threshold never turns a bit on") {
  MlpModel m = micro_model(61);
  Rng rng(7);
  Vec x(3);
  for (int i = 0; i < 3; ++i) x[i] = rng.normal();
  LabelManifest mf = m.manifest;
  auto lo = predict_labels(m, x, 0.3).flat(mf);
  auto hi = predict_labels(m, x, 0.7).flat(mf);
  for (std::size_t v = 0; v < lo.size(); ++v) CHECK(hi[v] <= lo[v]);
}

TEST_CASE("training overfits a small split to perfect accuracy") {
  Dataset ds = small_dataset();
  TrainConfig cfg;
  cfg.hidden = {24, 24};
  cfg.epochs = 1500;
  cfg.seed = 3;
  cfg.early_stop_window = 0;  // run to the cap
  TrainResult tr = train_classifier(ds, cfg);

  MisclassificationReport rep =
      misclassification_report(tr.model, ds, ds.train_indices);
  CHECK(rep.generators() == 0.0);
  CHECK(rep.lines() == 0.0);
  CHECK(rep.load() == 0.0);
  CHECK(rep.wind() == 0.0);
  CHECK(rep.n_samples == static_cast<int>(ds.train_indices.size()));

  // Memorized samples reproduce their stored labels exactly.
  const LabelManifest m = LabelManifest::for_grid(ds.grid);
  const int idx = ds.train_indices[0];
  auto pred = predict_labels(tr.model, ds.features(idx)).flat(m);
  CHECK(pred == ds.samples[static_cast<std::size_t>(idx)].labels.flat(m));
}

TEST_CASE("training loss history is usable and the best epoch is kept") {
  Dataset ds = small_dataset();
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.seed = 9;
  TrainResult tr = train_classifier(ds, cfg);
  REQUIRE(!tr.epoch_loss.empty());
  CHECK(static_cast<int>(tr.epoch_loss.size()) == tr.model.epochs_run);
  double best = std::numeric_limits<double>::infinity();
  for (double l : tr.epoch_loss) best = std::min(best, l);
  CHECK(tr.model.final_loss == doctest::Approx(best));
  CHECK(std::isfinite(tr.model.final_loss));
}

TEST_CASE("training is deterministic in its seed") {
  Dataset ds = small_dataset(0.05, 8);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.seed = 17;
  TrainResult a = train_classifier(ds, cfg);
  TrainResult b = train_classifier(ds, cfg);
  CHECK(a.model.final_loss == b.model.final_loss);
  for (std::size_t l = 0; l < a.model.w.size(); ++l)
    CHECK((a.model.w[l] - b.model.w[l]).cwiseAbs().maxCoeff() == 0.0);

  cfg.seed = 18;
  TrainResult c = train_classifier(ds, cfg);
  bool any_diff = false;
  for (std::size_t l = 0; l < a.model.w.size(); ++l)
    any_diff = any_diff || (a.model.w[l] - c.model.w[l]).cwiseAbs().maxCoeff() > 0.0;
  CHECK(any_diff);
}

TEST_CASE("non-finite features abort training with a numerical error") {
  Dataset ds = small_dataset(0.05, 8);
  ds.samples[static_cast<std::size_t>(ds.train_indices[0])].net_load[0] =
      std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 1;
  CHECK_THROWS_AS(train_classifier(ds, cfg), NumericalError);
}

TEST_CASE("model files round trip and are validated on load") {
  Dataset ds = small_dataset(0.05, 8);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 4;
  TrainResult tr = train_classifier(ds, cfg);
  const std::string path = "test_model_rt.json";
  save_model(tr.model, path);
  MlpModel back = load_model(path);

  Vec x = ds.features(ds.test_indices[0]);
  CHECK((mlp_forward(back, x) - mlp_forward(tr.model, x)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.manifest == tr.model.manifest);
  CHECK(back.final_loss == tr.model.final_loss);
  std::remove(path.c_str());

  CHECK_THROWS_AS(load_model("missing_model.json"), ValidationError);
}

TEST_CASE("invalid training configurations are rejected") {
  Dataset ds = small_dataset(0.05, 8);
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(train_classifier(ds, cfg), ValidationError);
  cfg.epochs = 10;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train_classifier(ds, cfg), ValidationError);
  cfg.batch_size = 32;
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(train_classifier(ds, cfg), ValidationError);
  cfg.learning_rate = 1e-3;
  cfg.hidden = {};
  CHECK_THROWS_AS(train_classifier(ds, cfg), ValidationError);
}

TEST_CASE("misclassification report counts per category against stored labels") {
  Dataset ds = small_dataset(0.05, 8);
  // Zero parameters at threshold 0.6 predict all bits off, so the wrong
  // count per category is exactly the number of set bits in the split.
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.seed = 2;
  MlpModel m = train_classifier(ds, cfg).model;
  for (auto& w : m.w) w.setZero();
  for (auto& b : m.b) b.setZero();

  const LabelManifest mf = LabelManifest::for_grid(ds.grid);
  long expect[4] = {0, 0, 0, 0};
  for (int idx : ds.test_indices) {
    auto bits = ds.samples[static_cast<std::size_t>(idx)].labels.flat(mf);
    for (int v = 0; v < mf.total(); ++v)
      if (bits[static_cast<std::size_t>(v)]) ++expect[mf.category(v)];
  }
  MisclassificationReport rep = misclassification_report(m, ds, ds.test_indices, 0.6);
  for (int c = 0; c < 4; ++c) CHECK(rep.wrong[c] == expect[c]);
}
