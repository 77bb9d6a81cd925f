#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "neuse/common.hpp"
#include "neuse/dataset.hpp"
#include "neuse/metrics.hpp"
#include "neuse/snapshot_store.hpp"

namespace neuse {

enum class Activation { Relu, Sigmoid, Tanh };

Activation parse_activation(std::string_view text);
std::string_view to_string(Activation a);

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct NeuSEConfig {
  std::size_t embed_dim = 16;  // d; memory cells have D = 2d
  std::size_t hops = 2;
  Activation activation = Activation::Relu;
  double dropout = 0.5;
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

struct NetworkDims {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t num_snapshots = 0;
  std::size_t embed_dim = 0;
  std::size_t hops = 1;

  std::size_t memory_dim() const { return 2 * embed_dim; }
  // [q_p, q_m, q_u, q_i, b_m, b_u, b_i]
  std::size_t feature_dim() const { return num_snapshots + 3 * memory_dim() + 3; }
  bool operator==(const NetworkDims&) const = default;
};

// All learnable tensors. Vectors are stored as 1 x n matrices and scalars as
// 1 x 1 so that every tensor can be visited uniformly.
struct NeuSEParams {
  NetworkDims dims;
  Matrix user_embed;       // num_users x d
  Matrix item_embed;       // num_items x d
  Matrix model_internal;   // N_m x D
  Matrix model_external;   // N_m x D
  Matrix user_internal;    // num_users x D
  Matrix user_external;    // num_users x D
  Matrix item_internal;    // num_items x D
  Matrix item_external;    // num_items x D
  Matrix model_proj;       // 1 x D
  Matrix user_proj;        // 1 x D
  Matrix item_proj;        // 1 x D
  Matrix model_proj_bias;  // 1 x 1
  Matrix user_proj_bias;   // 1 x 1
  Matrix item_proj_bias;   // 1 x 1
  Matrix out_weight;       // F x N_m
  Matrix out_bias;         // 1 x N_m
  // One entry per intermediate hop (H - 1 of them).
  std::vector<Matrix> hop_attn_weight;      // F x N_m
  std::vector<Matrix> hop_attn_bias;        // 1 x N_m
  std::vector<Matrix> hop_transfer_weight;  // D x D
  std::vector<Matrix> hop_transfer_bias;    // 1 x D

  static NeuSEParams zeros(const NetworkDims& dims);
  std::vector<NamedTensor> tensors();
  std::vector<NamedConstTensor> tensors() const;
  bool operator==(const NeuSEParams&) const = default;
};

// Every tensor i.i.d. Gaussian(0, init_std), deterministic under config.seed.
NeuSEParams init_params(const NetworkDims& dims, const NeuSEConfig& config);

// e_ui = [e_u ; e_i]
std::vector<double> embed_pair(std::size_t user, std::size_t item, const NeuSEParams& params);

struct Attention {
  std::vector<std::size_t> slots;  // rows of the internal/external tables
  std::vector<double> weights;     // softmax of the slot scores
  std::vector<double> read;        // weighted sum of external rows

  bool empty() const { return slots.empty(); }
};

// Scores each slot by internal_row . query, softmaxes the scores and reads
// the matching external rows. An empty slot set yields an empty Attention
// with a zero read vector.
Attention memory_attend(std::span<const double> query, const Matrix& internal,
                        const Matrix& external, std::span<const std::size_t> slots);

double bias_project(std::span<const double> q, std::span<const double> weight, double bias);

enum class Mode { Train, Infer };

struct MemoryRead {
  Attention attention;
  double bias = 0.0;  // 0 for an empty neighborhood
};

struct HopTrace {
  std::vector<double> query;  // z^{h-1} as consumed (after dropout)
  MemoryRead model, user, item;
  std::vector<double> features;
  // Intermediate hops only.
  std::vector<double> hop_attention;
  std::vector<double> hop_output;
  std::vector<double> pre_activation;
  std::vector<double> state;  // z^h before dropout
  std::vector<double> mask;   // inverted-dropout multipliers, empty when off
};

struct ForwardTrace {
  std::size_t user = 0;
  std::size_t item = 0;
  std::vector<double> snapshot_preds;
  std::vector<double> pair_embedding;
  std::vector<double> embed_mask;
  std::vector<HopTrace> hops;
  std::vector<double> logits;
  std::vector<double> output;  // ensemble weights
};

// The target item is excluded from N(u) and the target user from N(i).
// Train mode needs `rng` for dropout masks when dropout > 0.
ForwardTrace forward(std::size_t user, std::size_t item, std::span<const double> snapshot_preds,
                     const NeuSEParams& params, const NeighborIndex& neighbors,
                     const NeuSEConfig& config, Mode mode, std::mt19937_64* rng = nullptr);

struct SoftLabel {
  std::vector<double> y;
  std::int64_t optimal_tag = 0;
  std::vector<double> x;  // transformed tag distances
};

// x_s = (|e_s - e_o| + 1)^(-alpha), y = softmax(x).
SoftLabel soft_labels(std::span<const std::int64_t> tags, std::int64_t optimal_tag, double alpha);

// Index of the snapshot whose prediction is closest to `target`; ties go to
// the smaller tag.
std::size_t optimal_snapshot(std::span<const double> preds, double target);

// sum_s y_s (ln y_s - ln yhat_s), with 0 ln 0 = 0.
double kl_loss(std::span<const double> y, std::span<const double> y_hat);

// Accumulates scale * d(kl_loss)/d(params) into `grads`.
void backward(const ForwardTrace& trace, const SoftLabel& label, const NeuSEParams& params,
              const NeuSEConfig& config, NeuSEParams& grads, double scale = 1.0);

struct AdamState {
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  std::size_t step = 0;
};

AdamState adam_init(const std::vector<NamedConstTensor>& params);
void adam_step(const std::vector<NamedTensor>& params, const std::vector<NamedConstTensor>& grads,
               AdamState& state, const AdamConfig& config);

// yhat . r_hat
double ensemble_predict(std::span<const double> weights, std::span<const double> snapshot_preds);

struct EpochStats {
  std::size_t epoch = 0;
  double train_kl = 0.0;  // mean over train pairs, dropout off
  double validation_metric = 0.0;
};

struct NeuSETrainResult {
  NeuSEParams params;  // the epoch with the best validation metric
  std::size_t best_epoch = 0;
  std::vector<EpochStats> history;  // history[0] is before any update
};

// Ensemble score of one snapshot-set row, dropout off.
double neuse_score(const NeuSEParams& params, const NeuSEConfig& config, const NeighborIndex& neighbors,
                   const SnapshotSet& set, std::size_t row);

// Trains on the rows of `train` (targets aligned with its rows) and keeps the
// parameters of the epoch that scores best on `validation`.
NeuSETrainResult train_neuse(const SnapshotSet& train, std::span<const double> train_targets,
                             const SnapshotSet& validation_set, const EvalTarget& validation,
                             const NeighborIndex& neighbors, const NeuSEConfig& config);

void save_params(const NeuSEParams& params, const std::filesystem::path& path);
NeuSEParams load_params(const std::filesystem::path& path);

}  // namespace neuse
