#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neuse/common.hpp"
#include "neuse/dataset.hpp"
#include "neuse/snapshot_store.hpp"

namespace neuse {

double rmse(std::span<const double> preds, std::span<const double> truth);

// One test case: candidate items ranked by descending score (ties by
// ascending item id) and the held-out positive among them.
struct RankedList {
  std::vector<std::size_t> items;
  std::size_t positive = 0;
};

RankedList rank_candidates(std::span<const std::size_t> items, std::span<const double> scores,
                           std::size_t positive);

// 1-based rank of the positive; throws when the list lacks it.
std::size_t positive_rank(const RankedList& list);

double hr_at_n(std::span<const RankedList> rankings, std::size_t n);
double ndcg_at_n(std::span<const RankedList> rankings, std::size_t n);

// What a held-out partition is scored against, expressed over the rows of
// the SnapshotSet that holds its pairs.
struct EvalTarget {
  Task task = Task::Rating;
  std::optional<RatingScale> scale;  // predictions are clipped to it
  // Rating task: (row, true rating).
  std::vector<std::size_t> rows;
  std::vector<double> truth;
  // Ranking task: per example the positive row and its candidate rows.
  struct Group {
    std::size_t positive_item;
    std::vector<std::size_t> items;  // positive first, then negatives
    std::vector<std::size_t> rows;   // aligned with items
  };
  std::vector<Group> groups;
  std::size_t cutoff = 20;
};

EvalTarget rating_target(const SnapshotSet& set, const RatingDataset& heldout);
EvalTarget ranking_target(const SnapshotSet& set, const NegativeSamples& samples, std::size_t cutoff);

struct Scores {
  std::optional<double> rmse;
  std::optional<double> hr;
  std::optional<double> ndcg;
};

// `score(row)` is a combiner's output for one SnapshotSet row.
Scores evaluate(const EvalTarget& target, const std::function<double(std::size_t)>& score);

// The model-selection criterion: RMSE for rating (lower is better), HR@N for
// ranking (higher is better).
double selection_metric(const EvalTarget& target, const std::function<double(std::size_t)>& score);
bool lower_is_better(Task task);
std::string selection_metric_name(const EvalTarget& target);

}  // namespace neuse
