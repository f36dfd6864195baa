#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asopf/common.hpp"
#include "asopf/datagen.hpp"
#include "asopf/labels.hpp"

namespace asopf {

struct TrainConfig {
  std::vector<int> hidden = {30, 30, 30};
  int epochs = 1000;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  // Stop when the best full-split loss has not improved by more than
  // early_stop_tol * max(1, |best|) for early_stop_window epochs; 0 disables.
  int early_stop_window = 50;
  double early_stop_tol = 1e-6;
};

struct MlpModel {
  std::vector<Mat> w;  // per layer, rows = outputs
  std::vector<Vec> b;
  Vec feature_mean, feature_std;
  Vec loss_weights;  // per output bit
  LabelManifest manifest;
  TrainConfig config;
  int epochs_run = 0;
  double final_loss = 0;

  int input_dim() const { return w.empty() ? 0 : static_cast<int>(w.front().cols()); }
  int output_dim() const { return w.empty() ? 0 : static_cast<int>(w.back().rows()); }
};

// Sigmoid head probabilities, clipped away from {0,1} so the loss stays
// finite. One column per sample for the batch form.
Vec mlp_forward(const MlpModel& model, const Vec& features);
Mat mlp_forward_batch(const MlpModel& model, const Mat& features);

// Sum over outputs of w_v * cross-entropy for one sample.
double weighted_bce_loss(const Vec& probs, const std::vector<std::uint8_t>& targets,
                         const Vec& weights);

struct MlpGradients {
  std::vector<Mat> dw;
  std::vector<Vec> db;
};

// Mean weighted cross-entropy over the batch; fills gradients when asked.
// features is input_dim x n, targets output_dim x n with 0/1 entries.
double mlp_loss_and_gradients(const MlpModel& model, const Mat& features,
                              const Mat& targets, MlpGradients* grads);

struct TrainResult {
  MlpModel model;
  std::vector<double> epoch_loss;  // full train-split loss after each epoch
};

// Trains on the dataset's train split. Per-output loss weights are the
// largest magnitude each label's quantity reaches across the train split,
// so costly constraints dominate the objective.
TrainResult train_classifier(const Dataset& ds, const TrainConfig& config);

ActiveSetLabels predict_labels(const MlpModel& model, const Vec& features,
                               double threshold = 0.5);

struct MisclassificationReport {
  // Wrong bits over total bits across the evaluated split, grouped the way
  // the label layout groups: generators, lines, load shedding, wind.
  long wrong[4] = {0, 0, 0, 0};
  long total[4] = {0, 0, 0, 0};
  int n_samples = 0;
  double rate(int category) const {
    return total[category] > 0 ? static_cast<double>(wrong[category]) / total[category] : 0.0;
  }
  double generators() const { return rate(0); }
  double lines() const { return rate(1); }
  double load() const { return rate(2); }
  double wind() const { return rate(3); }
};

MisclassificationReport misclassification_report(const MlpModel& model, const Dataset& ds,
                                                 const std::vector<int>& indices,
                                                 double threshold = 0.5);

void save_model(const MlpModel& model, const std::string& path);
MlpModel load_model(const std::string& path);

}  // namespace asopf
