#include "asopf/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "asopf/rng.hpp"
#include "serial_util.hpp"

namespace asopf {

namespace {

constexpr double kProbClip = 1e-12;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

Mat standardize(const MlpModel& model, const Mat& x) {
  Mat xs = x.colwise() - model.feature_mean;
  xs.array().colwise() /= model.feature_std.array();
  return xs;
}

Mat sigmoid_clipped(const Mat& z) {
  Mat y = (1.0 / (1.0 + (-z.array()).exp())).matrix();
  return y.array().min(1.0 - kProbClip).max(kProbClip).matrix();
}

// Forward pass keeping pre-activations for backprop. acts[0] is the
// standardized input; acts[l] the output of layer l.
Mat forward_cached(const MlpModel& model, const Mat& x, std::vector<Mat>* zs,
                   std::vector<Mat>* acts) {
  const std::size_t nlayers = model.w.size();
  Mat a = standardize(model, x);
  if (acts) acts->push_back(a);
  for (std::size_t l = 0; l < nlayers; ++l) {
    Mat z = (model.w[l] * a).colwise() + model.b[l];
    if (l + 1 < nlayers)
      a = z.cwiseMax(0.0);
    else
      a = sigmoid_clipped(z);
    if (zs) zs->push_back(std::move(z));
    if (acts) acts->push_back(a);
  }
  return a;
}

}  // namespace

Mat mlp_forward_batch(const MlpModel& model, const Mat& features) {
  if (features.rows() != model.input_dim())
    throw ValidationError("feature dimension does not match the model");
  return forward_cached(model, features, nullptr, nullptr);
}

Vec mlp_forward(const MlpModel& model, const Vec& features) {
  return mlp_forward_batch(model, features);
}

double weighted_bce_loss(const Vec& probs, const std::vector<std::uint8_t>& targets,
                         const Vec& weights) {
  if (probs.size() != weights.size() ||
      targets.size() != static_cast<std::size_t>(probs.size()))
    throw ValidationError("loss inputs have mismatched lengths");
  double loss = 0.0;
  for (Eigen::Index v = 0; v < probs.size(); ++v) {
    const double y = std::clamp(probs[v], kProbClip, 1.0 - kProbClip);
    loss += weights[v] * (targets[static_cast<std::size_t>(v)] ? -std::log(y)
                                                               : -std::log(1.0 - y));
  }
  return loss;
}

double mlp_loss_and_gradients(const MlpModel& model, const Mat& features,
                              const Mat& targets, MlpGradients* grads) {
  const Eigen::Index n = features.cols();
  if (n == 0) throw ValidationError("empty batch");
  if (targets.cols() != n || targets.rows() != model.output_dim())
    throw ValidationError("target shape does not match the model");

  std::vector<Mat> zs, acts;
  Mat y = forward_cached(model, features, &zs, &acts);

  const auto& w = model.loss_weights;
  double loss = 0.0;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index v = 0; v < y.rows(); ++v)
      loss += w[v] * (targets(v, j) > 0.5 ? -std::log(y(v, j)) : -std::log(1.0 - y(v, j)));
  loss /= static_cast<double>(n);

  if (grads) {
    const std::size_t nlayers = model.w.size();
    grads->dw.assign(nlayers, Mat());
    grads->db.assign(nlayers, Vec());
    // Clipping makes the sigmoid-cross-entropy shortcut inexact only in the
    // last few ulps, which is irrelevant for training.
    Mat dz = ((y - targets).array().colwise() * w.array()).matrix() /
             static_cast<double>(n);
    for (std::size_t l = nlayers; l-- > 0;) {
      grads->dw[l] = dz * acts[l].transpose();
      grads->db[l] = dz.rowwise().sum();
      if (l > 0) {
        Mat da = model.w[l].transpose() * dz;
        dz = (da.array() * (zs[l - 1].array() > 0.0).cast<double>()).matrix();
      }
    }
  }
  return loss;
}

TrainResult train_classifier(const Dataset& ds, const TrainConfig& config) {
  if (config.epochs < 1) throw ValidationError("epoch count must be positive");
  if (config.batch_size < 1) throw ValidationError("batch size must be positive");
  if (config.learning_rate <= 0.0) throw ValidationError("learning rate must be positive");
  if (config.hidden.empty()) throw ValidationError("at least one hidden layer is required");
  for (int h : config.hidden)
    if (h < 1) throw ValidationError("hidden layer sizes must be positive");
  if (ds.train_indices.empty()) throw ValidationError("dataset has no train split");

  const LabelManifest manifest = LabelManifest::for_grid(ds.grid);
  const int d = ds.feature_dim();
  const int out = manifest.total();
  const int nt = static_cast<int>(ds.train_indices.size());

  Mat x(d, nt);
  Mat t = Mat::Zero(out, nt);
  std::vector<ActiveSetLabels> train_labels;
  train_labels.reserve(static_cast<std::size_t>(nt));
  for (int j = 0; j < nt; ++j) {
    const int idx = ds.train_indices[static_cast<std::size_t>(j)];
    x.col(j) = ds.features(idx);
    const auto& l = ds.samples[static_cast<std::size_t>(idx)].labels;
    train_labels.push_back(l);
    const auto bits = l.flat(manifest);
    for (int v = 0; v < out; ++v) t(v, j) = bits[static_cast<std::size_t>(v)];
  }

  MlpModel model;
  model.manifest = manifest;
  model.config = config;
  model.feature_mean = x.rowwise().mean();
  Mat centered = x.colwise() - model.feature_mean;
  model.feature_std =
      (centered.array().square().rowwise().mean()).sqrt().matrix().cwiseMax(1e-8);
  model.loss_weights = label_statistics(manifest, train_labels).max_value;

  std::vector<int> dims;
  dims.push_back(d);
  dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
  dims.push_back(out);
  Rng init_rng(derive_seed(config.seed, "init"));
  const std::size_t nlayers = dims.size() - 1;
  for (std::size_t l = 0; l < nlayers; ++l) {
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    // He-uniform for the hidden stack. The head starts at exactly zero with a
    // negative bias: outputs whose loss weight is zero get no gradient, so
    // their row never moves and they keep predicting "off" no matter how the
    // shared trunk evolves.
    const bool head = l + 1 == nlayers;
    Mat wl = Mat::Zero(fan_out, fan_in);
    if (!head) {
      const double limit = std::sqrt(6.0 / fan_in);
      for (int r = 0; r < fan_out; ++r)
        for (int c = 0; c < fan_in; ++c) wl(r, c) = init_rng.uniform(-limit, limit);
    }
    model.w.push_back(std::move(wl));
    model.b.push_back(head ? Vec::Constant(fan_out, -4.0) : Vec::Zero(fan_out));
  }

  std::vector<Mat> adam_mw(nlayers), adam_vw(nlayers);
  std::vector<Vec> adam_mb(nlayers), adam_vb(nlayers);
  for (std::size_t l = 0; l < nlayers; ++l) {
    adam_mw[l] = Mat::Zero(model.w[l].rows(), model.w[l].cols());
    adam_vw[l] = adam_mw[l];
    adam_mb[l] = Vec::Zero(model.b[l].size());
    adam_vb[l] = adam_mb[l];
  }

  TrainResult result;
  long step = 0;
  double best = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  std::vector<Mat> best_w = model.w;
  std::vector<Vec> best_b = model.b;

  std::vector<int> order(static_cast<std::size_t>(nt));
  for (int j = 0; j < nt; ++j) order[static_cast<std::size_t>(j)] = j;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng epoch_rng(derive_seed(config.seed, "epoch", static_cast<std::uint64_t>(epoch)));
    epoch_rng.shuffle(order);
    for (int start = 0; start < nt; start += config.batch_size) {
      const int bs = std::min(config.batch_size, nt - start);
      Mat xb(d, bs);
      Mat tb(out, bs);
      for (int j = 0; j < bs; ++j) {
        xb.col(j) = x.col(order[static_cast<std::size_t>(start + j)]);
        tb.col(j) = t.col(order[static_cast<std::size_t>(start + j)]);
      }
      MlpGradients grads;
      mlp_loss_and_gradients(model, xb, tb, &grads);
      ++step;
      const double corr = config.learning_rate *
                          std::sqrt(1.0 - std::pow(kAdamBeta2, step)) /
                          (1.0 - std::pow(kAdamBeta1, step));
      for (std::size_t l = 0; l < nlayers; ++l) {
        adam_mw[l] = kAdamBeta1 * adam_mw[l] + (1.0 - kAdamBeta1) * grads.dw[l];
        adam_vw[l] = kAdamBeta2 * adam_vw[l] +
                     (1.0 - kAdamBeta2) * grads.dw[l].array().square().matrix();
        model.w[l].array() -=
            corr * adam_mw[l].array() / (adam_vw[l].array().sqrt() + kAdamEps);
        adam_mb[l] = kAdamBeta1 * adam_mb[l] + (1.0 - kAdamBeta1) * grads.db[l];
        adam_vb[l] = kAdamBeta2 * adam_vb[l] +
                     (1.0 - kAdamBeta2) * grads.db[l].array().square().matrix();
        model.b[l].array() -=
            corr * adam_mb[l].array() / (adam_vb[l].array().sqrt() + kAdamEps);
      }
    }

    const double loss = mlp_loss_and_gradients(model, x, t, nullptr);
    if (!std::isfinite(loss)) {
      std::ostringstream os;
      os << "training diverged at epoch " << epoch + 1;
      throw NumericalError(os.str());
    }
    result.epoch_loss.push_back(loss);
    model.epochs_run = epoch + 1;
    if (best_epoch < 0 ||
        loss < best - config.early_stop_tol * std::max(1.0, std::abs(best))) {
      best = loss;
      best_epoch = epoch;
      best_w = model.w;
      best_b = model.b;
    }
    if (config.early_stop_window > 0 && epoch - best_epoch >= config.early_stop_window)
      break;
  }

  model.w = std::move(best_w);
  model.b = std::move(best_b);
  model.final_loss = best;
  result.model = std::move(model);
  return result;
}

ActiveSetLabels predict_labels(const MlpModel& model, const Vec& features,
                               double threshold) {
  const Vec probs = mlp_forward(model, features);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(probs.size()));
  for (Eigen::Index v = 0; v < probs.size(); ++v)
    bits[static_cast<std::size_t>(v)] = probs[v] >= threshold ? 1 : 0;
  return ActiveSetLabels::from_flat(model.manifest, bits);
}

MisclassificationReport misclassification_report(const MlpModel& model, const Dataset& ds,
                                                 const std::vector<int>& indices,
                                                 double threshold) {
  const LabelManifest m = LabelManifest::for_grid(ds.grid);
  if (!(m == model.manifest))
    throw ValidationError("model labels do not match the dataset grid");
  MisclassificationReport rep;
  for (int idx : indices) {
    const auto truth = ds.samples.at(static_cast<std::size_t>(idx)).labels.flat(m);
    const auto pred = predict_labels(model, ds.features(idx), threshold).flat(m);
    for (int v = 0; v < m.total(); ++v) {
      const int cat = m.category(v);
      rep.total[cat] += 1;
      if (truth[static_cast<std::size_t>(v)] != pred[static_cast<std::size_t>(v)])
        rep.wrong[cat] += 1;
    }
    rep.n_samples += 1;
  }
  return rep;
}

void save_model(const MlpModel& model, const std::string& path) {
  detail::json j;
  j["schema_version"] = 1;
  j["input_dim"] = model.input_dim();
  j["output_dim"] = model.output_dim();
  j["manifest"] = {{"n_gen", model.manifest.n_gen},
                   {"n_line", model.manifest.n_line},
                   {"n_bus", model.manifest.n_bus},
                   {"n_wind", model.manifest.n_wind}};
  j["feature_mean"] = detail::vec_to_json(model.feature_mean);
  j["feature_std"] = detail::vec_to_json(model.feature_std);
  j["loss_weights"] = detail::vec_to_json(model.loss_weights);
  detail::json layers = detail::json::array();
  for (std::size_t l = 0; l < model.w.size(); ++l) {
    detail::json rows = detail::json::array();
    for (Eigen::Index r = 0; r < model.w[l].rows(); ++r)
      rows.push_back(detail::vec_to_json(model.w[l].row(r).transpose()));
    layers.push_back({{"w", std::move(rows)}, {"b", detail::vec_to_json(model.b[l])}});
  }
  j["layers"] = std::move(layers);
  j["config"] = {{"hidden", model.config.hidden},
                 {"epochs", model.config.epochs},
                 {"batch_size", model.config.batch_size},
                 {"learning_rate", model.config.learning_rate},
                 {"seed", model.config.seed},
                 {"early_stop_window", model.config.early_stop_window},
                 {"early_stop_tol", model.config.early_stop_tol}};
  j["epochs_run"] = model.epochs_run;
  j["final_loss"] = model.final_loss;
  detail::write_json_file(j, path, "model");
}

MlpModel load_model(const std::string& path) {
  detail::json j = detail::read_json_file(path, "model");
  try {
    if (j.at("schema_version").get<int>() != 1)
      throw ValidationError("unsupported model schema version");
    MlpModel model;
    const auto& m = j.at("manifest");
    model.manifest.n_gen = m.at("n_gen").get<int>();
    model.manifest.n_line = m.at("n_line").get<int>();
    model.manifest.n_bus = m.at("n_bus").get<int>();
    model.manifest.n_wind = m.at("n_wind").get<int>();
    model.feature_mean = detail::vec_from_json(j.at("feature_mean"));
    model.feature_std = detail::vec_from_json(j.at("feature_std"));
    model.loss_weights = detail::vec_from_json(j.at("loss_weights"));
    for (const auto& layer : j.at("layers")) {
      const auto& rows = layer.at("w");
      if (rows.empty()) throw ValidationError("model layer has no rows");
      Mat w(rows.size(), rows[0].size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        Vec row = detail::vec_from_json(rows[r]);
        if (row.size() != w.cols()) throw ValidationError("ragged model layer");
        w.row(static_cast<Eigen::Index>(r)) = row.transpose();
      }
      model.w.push_back(std::move(w));
      model.b.push_back(detail::vec_from_json(layer.at("b")));
      if (model.b.back().size() != model.w.back().rows())
        throw ValidationError("model bias does not match its layer");
    }
    if (model.w.empty()) throw ValidationError("model has no layers");
    for (std::size_t l = 0; l + 1 < model.w.size(); ++l)
      if (model.w[l + 1].cols() != model.w[l].rows())
        throw ValidationError("model layer shapes do not chain");
    if (model.output_dim() != model.manifest.total())
      throw ValidationError("model output does not match its label layout");
    if (model.feature_mean.size() != model.input_dim() ||
        model.feature_std.size() != model.input_dim() ||
        model.loss_weights.size() != model.output_dim())
      throw ValidationError("model normalization shapes are inconsistent");
    const auto& c = j.at("config");
    model.config.hidden = c.at("hidden").get<std::vector<int>>();
    model.config.epochs = c.at("epochs").get<int>();
    model.config.batch_size = c.at("batch_size").get<int>();
    model.config.learning_rate = c.at("learning_rate").get<double>();
    model.config.seed = c.at("seed").get<std::uint64_t>();
    model.config.early_stop_window = c.at("early_stop_window").get<int>();
    model.config.early_stop_tol = c.at("early_stop_tol").get<double>();
    model.epochs_run = j.at("epochs_run").get<int>();
    model.final_loss = j.at("final_loss").get<double>();
    return model;
  } catch (const detail::json::exception& e) {
    throw ValidationError(std::string("malformed model file '") + path + "': " + e.what());
  }
}

}  // namespace asopf
