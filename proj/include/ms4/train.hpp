#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "ms4/data.hpp"
#include "ms4/errors.hpp"
#include "ms4/grad/tape.hpp"
#include "ms4/model.hpp"

namespace ms4 {

/// -log softmax(logits)[label], with max subtraction.
template <typename Scalar>
Scalar cross_entropy(const RowVector<Scalar>& logits, int label) {
  if (label < 0 || label >= logits.size()) {
    throw ParameterError("cross_entropy: label " + std::to_string(label) +
                         " outside [0, " + std::to_string(logits.size()) + ")");
  }
  const Scalar top = logits.maxCoeff();
  const Scalar lse = top + std::log((logits.array() - top).exp().sum());
  return lse - logits(label);
}

/// softmax(logits) - one_hot(label).
template <typename Scalar>
RowVector<Scalar> cross_entropy_grad(const RowVector<Scalar>& logits,
                                     int label) {
  if (label < 0 || label >= logits.size()) {
    throw ParameterError("cross_entropy: label out of range");
  }
  RowVector<Scalar> p = (logits.array() - logits.maxCoeff()).exp();
  p /= p.sum();
  p(label) -= Scalar(1);
  return p;
}

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  int batch_size = 256;
  int max_epochs = 200;
  int patience = 20;
  double val_fraction = 0.10;
  std::uint64_t seed = 0;
  int threads = 1;
  /// z-normalize inputs with statistics from the training portion.
  bool normalize_inputs = true;
  /// Thresholds whose first crossing epoch is recorded in the history.
  std::optional<double> reference_accuracy;
  std::optional<double> reference_loss;

  void check() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double max_transition = 0.0;  // largest |A_bar| after the epoch's updates
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 1-based; earliest epoch with minimum val_loss
  /// First epoch with val_acc >= reference_accuracy, if any.
  std::optional<int> accuracy_crossing;
  /// First epoch with val_loss <= reference_loss, if any.
  std::optional<int> loss_crossing;

  /// Columns: epoch,train_loss,train_acc,val_loss,val_acc.
  void write_csv(std::ostream& out) const;
};

struct AdamState {
  grad::ParamMap m;
  grad::ParamMap v;
  int step = 0;
};

/// One bias-corrected Adam update. Increments state.step first, so the
/// first call uses t = 1.
void adam_step(grad::ParamMap& params, const grad::ParamMap& grads,
               AdamState& state, const TrainConfig& config);
void adam_step(ModelParams<double>& model, const grad::ParamMap& grads,
               AdamState& state, const TrainConfig& config);

struct Metrics {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean cross-entropy and accuracy in evaluation mode.
Metrics evaluate(const ModelParams<double>& model, const Dataset& data,
                 int threads = 1);

/// Mean loss and summed gradient of one mini-batch (training mode).
struct BatchResult {
  double loss = 0.0;
  int correct = 0;
  grad::ParamMap grads;
};
BatchResult batch_gradient(const ModelParams<double>& model, const Dataset& data,
                           const std::vector<std::size_t>& batch,
                           std::uint64_t seed, int threads);

struct TrainResult {
  ModelParams<double> model;  // checkpoint with minimum validation loss
  TrainHistory history;
  std::optional<FeatureStats> input_stats;
};

/// Adam on shuffled mini-batches with a seeded validation split and early
/// stopping on validation loss. `on_epoch`, when set, is called after every
/// epoch.
TrainResult train(const ModelParams<double>& initial, const Dataset& data,
                  const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

struct ConvergenceRow {
  std::uint64_t seed = 0;
  bool normalized = false;
  std::optional<int> accuracy_crossing;
  std::optional<int> loss_crossing;
  int best_epoch = 0;
  int epochs_run = 0;
  double best_val_loss = 0.0;
  double final_val_acc = 0.0;
};

/// Trains the unnormalized and normalized variants of `base` for every seed
/// and reports the epochs at which each crosses the reference thresholds.
std::vector<ConvergenceRow> compare_convergence(
    const Dataset& data, const ModelConfig& base, const TrainConfig& config,
    const std::vector<std::uint64_t>& seeds);

/// Header: seed,variant,acc_cross_epoch,loss_cross_epoch,best_epoch,
/// epochs_run,best_val_loss,final_val_acc. Missing crossings are written as
/// -1.
void write_convergence_csv(std::ostream& out,
                           const std::vector<ConvergenceRow>& rows);

}  // namespace ms4
