#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "neuse/common.hpp"

namespace neuse {

struct Interaction {
  std::size_t user = 0;
  std::size_t item = 0;
  double rating = 0.0;
  std::int64_t timestamp = 0;

  bool operator==(const Interaction&) const = default;
};

struct RatingScale {
  double min = 0.0;
  double max = 0.0;

  double clip(double v) const { return v < min ? min : (v > max ? max : v); }
  bool operator==(const RatingScale&) const = default;
};

struct UserItem {
  std::size_t user = 0;
  std::size_t item = 0;

  auto operator<=>(const UserItem&) const = default;
};

enum class RatingFormat { MovielensTab, GenericCsv };

RatingFormat parse_rating_format(std::string_view text);

// Interaction triples plus the raw-id <-> index maps. Construction checks the
// id-range, rating-scale and pair-uniqueness invariants.
class RatingDataset {
 public:
  RatingDataset() = default;
  RatingDataset(std::vector<Interaction> interactions, std::size_t num_users,
                std::size_t num_items, RatingScale scale);

  const std::vector<Interaction>& interactions() const { return interactions_; }
  std::size_t size() const { return interactions_.size(); }
  bool empty() const { return interactions_.empty(); }
  std::size_t num_users() const { return num_users_; }
  std::size_t num_items() const { return num_items_; }
  const RatingScale& scale() const { return scale_; }

  // Raw ids as read from the source file, indexed by dense id. Empty when the
  // dataset was built in memory.
  const std::vector<std::int64_t>& user_ids() const { return user_ids_; }
  const std::vector<std::int64_t>& item_ids() const { return item_ids_; }
  void set_raw_ids(std::vector<std::int64_t> users, std::vector<std::int64_t> items);

  // Same dimensions and scale, different interactions.
  RatingDataset subset(std::vector<Interaction> interactions) const;

  double mean_rating() const;

 private:
  std::vector<Interaction> interactions_;
  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  RatingScale scale_;
  std::vector<std::int64_t> user_ids_;
  std::vector<std::int64_t> item_ids_;
};

// Reads `user item rating timestamp` rows and reindexes raw ids to
// contiguous zero-based indices in ascending raw-id order. The rating scale is
// the observed (min, max).
RatingDataset load_ratings(const std::filesystem::path& path, RatingFormat format);
RatingDataset parse_ratings(std::string_view text, RatingFormat format);

struct SplitDataset {
  RatingDataset train;
  RatingDataset validation;
  RatingDataset test;
  // Index into the input interactions of each user's held-out rows, absent
  // for users with fewer than three interactions.
  std::vector<std::optional<std::size_t>> test_source;
  std::vector<std::optional<std::size_t>> validation_source;
};

// Per user: latest interaction to test, second-latest to validation, the rest
// to train. Users with fewer than three interactions are train-only.
// Timestamp ties are ordered by item id (higher id counts as later).
SplitDataset chronological_leave_one_out(const RatingDataset& ds);

struct NegativeList {
  std::size_t user = 0;
  std::size_t positive = 0;
  std::vector<std::size_t> negatives;
};

struct NegativeSamples {
  std::vector<NegativeList> lists;
  std::uint64_t seed = 0;
};

// Samples `n` items per test example that the user never interacted with in
// any partition.
NegativeSamples sample_negatives(const SplitDataset& split, std::size_t n, std::uint64_t seed);

// Same, for an arbitrary set of held-out examples (used for validation).
NegativeSamples sample_negatives_for(const SplitDataset& split, const RatingDataset& examples,
                                     std::size_t n, std::uint64_t seed);

class NeighborIndex {
 public:
  std::size_t cap() const { return cap_; }
  // N(i): users who rated the item in train, capped to the most recent.
  const std::vector<std::size_t>& users_of(std::size_t item) const { return by_item_[item]; }
  // N(u): items the user rated in train, capped to the most recent.
  const std::vector<std::size_t>& items_of(std::size_t user) const { return by_user_[user]; }
  std::size_t num_users() const { return by_user_.size(); }
  std::size_t num_items() const { return by_item_.size(); }

  friend NeighborIndex build_neighbor_index(const RatingDataset& train, std::size_t cap);

 private:
  std::size_t cap_ = 0;
  std::vector<std::vector<std::size_t>> by_item_;
  std::vector<std::vector<std::size_t>> by_user_;
};

// Neighborhoods larger than `cap` keep the `cap` most recent interactions
// (timestamp ties keep the lower id). Lists are in ascending timestamp order.
NeighborIndex build_neighbor_index(const RatingDataset& train, std::size_t cap);

// Writers used by the CLI's prepare step.
void write_ratings_csv(const RatingDataset& ds, const std::filesystem::path& path);
void write_negatives_csv(const NegativeSamples& samples, const std::filesystem::path& path);
void write_neighbor_index(const NeighborIndex& index, const std::filesystem::path& path);

}  // namespace neuse
