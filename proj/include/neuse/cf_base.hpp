#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "neuse/common.hpp"
#include "neuse/dataset.hpp"

namespace neuse {

// A family of snapshot models that can score (user, item) pairs. The ensemble
// side only ever sees snapshots through this interface, so KNN families can
// share neighbor search across their k values.
class SnapshotSource {
 public:
  virtual ~SnapshotSource() = default;
  virtual std::string algorithm() const = 0;
  // Epoch numbers for learned models, neighbor counts for KNN.
  virtual std::vector<std::int64_t> tags() const = 0;
  virtual std::size_t num_users() const = 0;
  virtual std::size_t num_items() const = 0;
  // out.size() == tags().size()
  virtual void predict_all(std::size_t user, std::size_t item, std::span<double> out) const = 0;
};

struct SnapshotSchedule {
  enum class Mode { EveryDeltaT, KnnKList, CyclicLr };

  Mode mode = Mode::EveryDeltaT;
  std::size_t delta_t = 10;
  std::size_t max_epoch = 90;
  std::vector<std::size_t> k_list;
  std::size_t cycle_len = 10;
  std::size_t cycles = 9;

  static SnapshotSchedule every(std::size_t delta_t, std::size_t max_epoch);
  static SnapshotSchedule knn(std::vector<std::size_t> k_list);
  static SnapshotSchedule cyclic(std::size_t cycle_len, std::size_t cycles);

  void validate() const;
  // Total epochs for the learned-model modes.
  std::size_t total_epochs() const;
  // 1-based epoch counts after which a snapshot is captured.
  std::vector<std::size_t> capture_epochs() const;
};

// Cosine-annealed learning rate, restarting every cycle_len epochs.
double cyclic_lr(std::size_t epoch, double base_lr, std::size_t cycle_len);

struct SgdConfig {
  std::size_t factors = 8;
  double lr = 0.005;
  double reg = 0.02;
  double init_std = 0.01;
  std::uint64_t seed = 0;
  // When set, train on implicit feedback: observed pairs have target 1 and
  // this many unobserved items per positive (resampled each epoch) target 0.
  std::optional<std::size_t> implicit_negatives;
};

struct MFModel {
  Matrix user_factors;  // num_users x f
  Matrix item_factors;  // num_items x f
  std::vector<double> user_bias;
  std::vector<double> item_bias;
  double global_mean = 0.0;

  std::size_t factors() const { return user_factors.cols(); }
  double predict(std::size_t user, std::size_t item) const;
};

struct FMModel {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  double w0 = 0.0;
  std::vector<double> w;  // num_users + num_items linear weights
  Matrix factors;         // (num_users + num_items) x f

  std::size_t factor_count() const { return factors.cols(); }
  double predict(std::size_t user, std::size_t item) const;
};

template <typename Model>
struct TaggedModel {
  std::size_t epoch = 0;
  Model model;
};

template <typename Model>
struct SgdResult {
  std::vector<TaggedModel<Model>> snapshots;
  // Training-set RMSE after each epoch (on the SGD targets).
  std::vector<double> epoch_rmse;
};

SgdResult<MFModel> train_rsvd(const RatingDataset& train, const SgdConfig& config,
                              const SnapshotSchedule& schedule);
SgdResult<FMModel> train_fm_sgd(const RatingDataset& train, const SgdConfig& config,
                                const SnapshotSchedule& schedule);

// Cosine between two sparse vectors given as (index, value) lists sorted by
// index: the dot product over co-rated coordinates divided by the product of
// the full-vector norms; 0 when either norm is 0.
struct SparseEntry {
  std::size_t index;
  double value;
};
double cosine_similarity(std::span<const SparseEntry> a, std::span<const SparseEntry> b);

enum class KnnKind { User, Item };

// WeightedMean: similarity-weighted mean of the neighbors' ratings.
// MeanCentered: the target's mean plus the similarity-weighted mean of the
// neighbors' deviations from their own means.
enum class KnnPrediction { WeightedMean, MeanCentered };

KnnPrediction parse_knn_prediction(std::string_view text);
std::string_view to_string(KnnPrediction rule);

// Similarity table and rating lists shared by all k values of one KNN family.
class KnnTable {
 public:
  KnnTable(const RatingDataset& train, KnnKind kind, bool implicit,
           KnnPrediction rule = KnnPrediction::MeanCentered);

  KnnKind kind() const { return kind_; }
  bool implicit() const { return implicit_; }
  double similarity(std::size_t a, std::size_t b) const { return sim_(a, b); }
  std::size_t num_users() const { return num_users_; }
  std::size_t num_items() const { return num_items_; }

  // Predictions for each k in k_list (ascending) for one pair.
  void predict(std::size_t user, std::size_t item, std::span<const std::size_t> k_list,
               std::span<double> out) const;

 private:
  KnnKind kind_;
  bool implicit_;
  KnnPrediction rule_;
  std::size_t num_users_;
  std::size_t num_items_;
  Matrix sim_;
  // For user-kind: raters of each item; for item-kind: items of each user.
  std::vector<std::vector<SparseEntry>> candidates_;
  std::vector<double> user_mean_;
  std::vector<double> item_mean_;
  std::vector<char> user_seen_;
  std::vector<char> item_seen_;
  double global_mean_ = 0.0;
};

struct KNNModel {
  std::shared_ptr<const KnnTable> table;
  std::size_t k = 0;

  double predict(std::size_t user, std::size_t item) const;
};

// One KNN model per k, all sharing one similarity table.
std::vector<KNNModel> knn_snapshots(const RatingDataset& train, KnnKind kind,
                                    std::vector<std::size_t> k_list, bool implicit = false,
                                    KnnPrediction rule = KnnPrediction::MeanCentered);

std::unique_ptr<SnapshotSource> make_source(std::vector<TaggedModel<MFModel>> snapshots);
std::unique_ptr<SnapshotSource> make_source(std::vector<TaggedModel<FMModel>> snapshots);
std::unique_ptr<SnapshotSource> make_source(std::vector<KNNModel> models);

}  // namespace neuse
