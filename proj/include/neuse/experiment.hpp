#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "neuse/cf_base.hpp"
#include "neuse/common.hpp"
#include "neuse/dataset.hpp"
#include "neuse/ensemble_baselines.hpp"
#include "neuse/neuse_net.hpp"
#include "neuse/snapshot_store.hpp"

namespace neuse {

enum class BaseAlgorithm { Rsvd, FmSgd, UserKnn, ItemKnn };

BaseAlgorithm parse_base_algorithm(std::string_view text);
std::string_view to_string(BaseAlgorithm algorithm);
bool is_sgd(BaseAlgorithm algorithm);

enum class Method { Single, Average, Hse, Se, NeuSE };

Method parse_method(std::string_view text);
std::string_view to_string(Method method);
// Comma-separated list, e.g. "single,average,neuse".
std::vector<Method> parse_methods(std::string_view text);

struct BaseConfig {
  BaseAlgorithm algorithm = BaseAlgorithm::Rsvd;
  std::size_t factors = 8;
  double lr = 0.005;
  double reg = 0.02;
  double init_std = 0.01;
  std::size_t delta_t = 10;
  std::size_t max_epoch = 90;
  std::vector<std::size_t> k_list{10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
  KnnPrediction knn_prediction = KnnPrediction::MeanCentered;
  // Sampled unobserved items per positive when base models learn the
  // ranking task.
  std::size_t implicit_negatives = 4;
};

struct SeConfig {
  std::size_t cycle_len = 10;
  std::size_t cycles = 9;
  double lr = 0.01;  // peak of the cosine cycle
};

struct RunConfig {
  std::filesystem::path dataset;
  RatingFormat format = RatingFormat::MovielensTab;
  Task task = Task::Rating;
  std::uint64_t seed = 42;
  std::vector<Method> methods{Method::Single, Method::Average, Method::NeuSE};
  std::size_t cutoff = 20;
  std::size_t num_negatives = 99;
  std::size_t neighbor_cap = 50;
  // Unobserved (user, item) targets of 0 per observed train pair when the
  // ensemble learns the ranking task.
  std::size_t train_negatives = 4;
  BaseConfig base;
  SeConfig se;
  NeuSEConfig neuse;
  HSEConfig hse;
  // Directory of pre-computed snapshot files to use instead of training the
  // base model.
  std::optional<std::filesystem::path> snapshots_dir;
  std::filesystem::path out = "out";

  void validate() const;
  // Canonical JSON of every field; two configs are the same run iff equal.
  std::string to_json() const;
  std::string fingerprint() const;
};

// Parses a JSON config. Relative paths are resolved against `base_dir`.
// Unknown or mistyped fields raise ConfigError naming the field.
RunConfig parse_run_config(std::string_view json_text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

struct ExperimentData {
  RatingDataset ratings;
  SplitDataset split;
  NeighborIndex neighbors;
  NegativeSamples test_negatives;
  NegativeSamples validation_negatives;
  // Pairs the ensemble combiners learn from, with their targets.
  std::vector<UserItem> train_pairs;
  std::vector<double> train_targets;
};

ExperimentData prepare_data(const RunConfig& config);
void write_prepared(const ExperimentData& data, const std::filesystem::path& dir);

// Snapshot predictions over every pair the ensemble stage touches.
struct SnapshotBundle {
  SnapshotSet train;
  SnapshotSet validation;
  SnapshotSet test;
  // Test-pair predictions of the cyclic-learning-rate run; present when SE is
  // requested.
  std::optional<SnapshotSet> se_test;
  std::vector<double> base_epoch_rmse;
};

SnapshotBundle train_base(const RunConfig& config, const ExperimentData& data);
void save_bundle(const SnapshotBundle& bundle, const std::filesystem::path& dir);
// Reads train/validation/test(/se_test).snapens from `dir` and records the
// per-snapshot validation metric.
SnapshotBundle load_bundle(const RunConfig& config, const ExperimentData& data,
                           const std::filesystem::path& dir);

// Training targets aligned with the rows of `set`: observed ratings for the
// rating task; 1 for observed and 0 for unobserved pairs for ranking.
std::vector<double> targets_for(const SnapshotSet& set, const RatingDataset& train, Task task);

struct EvalReport {
  std::string method;
  Task task = Task::Rating;
  std::optional<double> rmse;
  std::optional<double> hr;
  std::optional<double> ndcg;
  std::size_t cutoff = 20;
  std::string fingerprint;
  double seconds = 0.0;
};

struct ExperimentResult {
  std::vector<EvalReport> reports;
  std::optional<std::size_t> single_index;
  std::optional<NeuSETrainResult> neuse;
  std::optional<HSETrainResult> hse;
};

ExperimentResult run_methods(const RunConfig& config, const ExperimentData& data,
                             const SnapshotBundle& bundle);

// prepare_data, then train_base or load_bundle, then run_methods.
ExperimentResult run_experiment(const RunConfig& config);

// `method,task,metric,value` lines with a header; deterministic under seed.
std::string format_reports_csv(const std::vector<EvalReport>& reports);
std::string format_reports_table(const std::vector<EvalReport>& reports);
std::string format_timings_csv(const std::vector<EvalReport>& reports);
std::string format_history_csv(const std::vector<EpochStats>& history);

// Writes reports.csv, timings.csv, the training histories and the NeuSE
// parameters under config.out.
void write_outputs(const RunConfig& config, const ExperimentResult& result);

}  // namespace neuse
