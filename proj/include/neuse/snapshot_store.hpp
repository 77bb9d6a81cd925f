#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "neuse/cf_base.hpp"
#include "neuse/common.hpp"
#include "neuse/dataset.hpp"

namespace neuse {

struct SnapshotMeta {
  std::size_t index = 0;
  std::int64_t tag = 0;
  std::string source;
  // Validation RMSE (rating task) or HR@N (ranking task); NaN until scored.
  double validation_metric = 0.0;

  bool operator==(const SnapshotMeta&) const;
};

// Per-pair prediction vectors of N_m snapshot models: the q_p inputs of every
// ensemble combiner. Rows keep insertion order; lookup by pair is O(1).
class SnapshotSet {
 public:
  SnapshotSet() = default;
  SnapshotSet(std::vector<SnapshotMeta> metas, std::optional<RatingScale> scale);

  std::size_t num_snapshots() const { return metas_.size(); }
  std::size_t num_pairs() const { return pairs_.size(); }
  const std::vector<SnapshotMeta>& metas() const { return metas_; }
  std::vector<std::int64_t> tags() const;
  // Clipping range for predictions; absent for ranking scores.
  const std::optional<RatingScale>& scale() const { return scale_; }
  // "rmse" or "hr@N"; empty when snapshots carry no validation metric.
  const std::string& metric_name() const { return metric_name_; }

  const std::vector<UserItem>& pairs() const { return pairs_; }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * metas_.size(), metas_.size()};
  }
  std::optional<std::size_t> find(std::size_t user, std::size_t item) const;
  std::size_t row_of(std::size_t user, std::size_t item) const;  // throws when absent
  std::span<const double> at(std::size_t user, std::size_t item) const { return row(row_of(user, item)); }

  // Appends a pair; values must be finite and of length N_m. Re-adding a
  // pair is an error.
  void add(UserItem pair, std::span<const double> values);

  void set_validation_metrics(std::string metric_name, std::span<const double> values);
  // Copies the per-snapshot metric from another set over the same snapshots.
  void copy_metrics_from(const SnapshotSet& other);

  bool operator==(const SnapshotSet& other) const;

 private:
  std::vector<SnapshotMeta> metas_;
  std::optional<RatingScale> scale_;
  std::string metric_name_;
  std::vector<UserItem> pairs_;
  std::vector<double> values_;
  std::unordered_map<std::uint64_t, std::size_t> index_;

  std::uint64_t key(std::size_t user, std::size_t item) const {
    return (static_cast<std::uint64_t>(user) << 32) ^ static_cast<std::uint64_t>(item);
  }
  friend SnapshotSet load_snapshots(const std::filesystem::path& path);
  friend SnapshotSet parse_snapshots(std::string_view text);
};

// Evaluates every snapshot of `source` on every pair. Predictions are clipped
// to `scale` when one is given.
SnapshotSet materialize(const SnapshotSource& source, std::span<const UserItem> pairs,
                        std::optional<RatingScale> scale);

void save_snapshots(const SnapshotSet& set, const std::filesystem::path& path);
std::string format_snapshots(const SnapshotSet& set);
SnapshotSet load_snapshots(const std::filesystem::path& path);
SnapshotSet parse_snapshots(std::string_view text);

}  // namespace neuse
