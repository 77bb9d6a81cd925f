#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "neuse/common.hpp"
#include "neuse/metrics.hpp"
#include "neuse/neuse_net.hpp"
#include "neuse/snapshot_store.hpp"

namespace neuse {

// Index of the snapshot with the best recorded validation metric: smallest
// RMSE, or largest HR when the set's metric is "hr@N". Ties go to the
// smaller tag.
std::size_t single_select(const SnapshotSet& set);

double average_combine(std::span<const double> preds);

// Mean over cycle-end snapshots of a cyclic-learning-rate run.
double se_combine(std::span<const double> cycle_end_preds);

struct HSEConfig {
  std::size_t hidden = 32;
  double alpha = 1.0;
  double lr = 0.01;
  std::size_t batch_size = 128;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double init_std = 0.01;
  std::size_t max_epochs = 20;
  std::uint64_t seed = 0;

  void validate() const;
  AdamConfig adam() const { return {lr, beta1, beta2, eps}; }
};

// One-hidden-layer relu MLP from snapshot predictions to softmax ensemble
// weights.
struct HSEModel {
  Matrix hidden_weight;  // N_m x hidden
  Matrix hidden_bias;    // 1 x hidden
  Matrix out_weight;     // hidden x N_m
  Matrix out_bias;       // 1 x N_m

  static HSEModel zeros(std::size_t num_snapshots, std::size_t hidden);
  std::size_t num_snapshots() const { return hidden_weight.rows(); }
  std::vector<NamedTensor> tensors();
  std::vector<NamedConstTensor> tensors() const;
  bool operator==(const HSEModel&) const = default;
};

HSEModel hse_init(std::size_t num_snapshots, const HSEConfig& config);

struct HSETrace {
  std::vector<double> input;
  std::vector<double> pre_hidden;
  std::vector<double> hidden;
  std::vector<double> output;  // ensemble weights
};

HSETrace hse_forward(const HSEModel& model, std::span<const double> preds);
// Accumulates scale * d(kl_loss(y, output))/d(params) into `grads`.
void hse_backward(const HSETrace& trace, std::span<const double> y, const HSEModel& model,
                  HSEModel& grads, double scale = 1.0);

double hse_predict(const HSEModel& model, std::span<const double> preds);

struct HSETrainResult {
  HSEModel model;
  std::size_t best_epoch = 0;
  std::vector<EpochStats> history;
};

// Same soft-label KL objective, optimizer and selection rule as train_neuse.
HSETrainResult hse_train(const SnapshotSet& train, std::span<const double> train_targets,
                         const SnapshotSet& validation_set, const EvalTarget& validation,
                         const HSEConfig& config);

}  // namespace neuse
