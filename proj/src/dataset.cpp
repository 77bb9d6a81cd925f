#include "neuse/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

namespace neuse {

RatingFormat parse_rating_format(std::string_view text) {
  if (text == "movielens-tab") return RatingFormat::MovielensTab;
  if (text == "generic-csv") return RatingFormat::GenericCsv;
  throw ConfigError("dataset.format: expected 'movielens-tab' or 'generic-csv', got '" +
                    std::string(text) + "'");
}

RatingDataset::RatingDataset(std::vector<Interaction> interactions, std::size_t num_users,
                             std::size_t num_items, RatingScale scale)
    : interactions_(std::move(interactions)),
      num_users_(num_users),
      num_items_(num_items),
      scale_(scale) {
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(interactions_.size());
  for (const auto& x : interactions_) {
    if (x.user >= num_users_ || x.item >= num_items_)
      throw DatasetError("interaction (" + std::to_string(x.user) + ", " + std::to_string(x.item) +
                         ") outside " + std::to_string(num_users_) + " users x " +
                         std::to_string(num_items_) + " items");
    if (!(x.rating >= scale_.min && x.rating <= scale_.max))
      throw DatasetError("rating " + std::to_string(x.rating) + " outside the rating scale");
    const std::uint64_t key = static_cast<std::uint64_t>(x.user) * num_items_ + x.item;
    if (!seen.insert(key).second)
      throw DatasetError("duplicate interaction for user " + std::to_string(x.user) + ", item " +
                         std::to_string(x.item));
  }
}

void RatingDataset::set_raw_ids(std::vector<std::int64_t> users, std::vector<std::int64_t> items) {
  user_ids_ = std::move(users);
  item_ids_ = std::move(items);
}

RatingDataset RatingDataset::subset(std::vector<Interaction> interactions) const {
  RatingDataset out(std::move(interactions), num_users_, num_items_, scale_);
  out.user_ids_ = user_ids_;
  out.item_ids_ = item_ids_;
  return out;
}

double RatingDataset::mean_rating() const {
  if (interactions_.empty()) return 0.0;
  double total = 0.0;
  for (const auto& x : interactions_) total += x.rating;
  return total / static_cast<double>(interactions_.size());
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line_no, const char* what) {
  field = trim(field);
  T value{};
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end || field.empty())
    throw ParseError("line " + std::to_string(line_no) + ": invalid " + what + " '" +
                     std::string(field) + "'");
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value))
      throw ParseError("line " + std::to_string(line_no) + ": non-finite " + what);
  }
  return value;
}

struct RawRow {
  std::int64_t user;
  std::int64_t item;
  double rating;
  std::int64_t timestamp;
};

}  // namespace

RatingDataset parse_ratings(std::string_view text, RatingFormat format) {
  const char sep = format == RatingFormat::MovielensTab ? '\t' : ',';
  std::vector<RawRow> rows;
  std::size_t line_no = 0;
  bool header_pending = format == RatingFormat::GenericCsv;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t stop = text.find('\n', start);
    if (stop == std::string_view::npos) stop = text.size();
    const std::string_view line = trim(text.substr(start, stop - start));
    start = stop + 1;
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_fields(line, sep);
    if (header_pending) {
      header_pending = false;
      if (fields.size() == 4 && trim(fields[0]) == "user" && trim(fields[1]) == "item" &&
          trim(fields[2]) == "rating" && trim(fields[3]) == "timestamp")
        continue;
      // A headerless generic file is accepted; fall through and parse the row.
    }
    if (fields.size() != 4)
      throw ParseError("line " + std::to_string(line_no) + ": expected 4 fields, got " +
                       std::to_string(fields.size()));
    rows.push_back({parse_number<std::int64_t>(fields[0], line_no, "user id"),
                    parse_number<std::int64_t>(fields[1], line_no, "item id"),
                    parse_number<double>(fields[2], line_no, "rating"),
                    parse_number<std::int64_t>(fields[3], line_no, "timestamp")});
  }
  if (rows.empty()) throw DatasetError("empty dataset: no rating rows");

  std::vector<std::int64_t> users, items;
  for (const auto& r : rows) {
    users.push_back(r.user);
    items.push_back(r.item);
  }
  auto uniq = [](std::vector<std::int64_t>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  };
  uniq(users);
  uniq(items);
  auto index_of = [](const std::vector<std::int64_t>& ids, std::int64_t id) {
    return static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), id) - ids.begin());
  };

  RatingScale scale{rows.front().rating, rows.front().rating};
  std::vector<Interaction> interactions;
  interactions.reserve(rows.size());
  for (const auto& r : rows) {
    scale.min = std::min(scale.min, r.rating);
    scale.max = std::max(scale.max, r.rating);
    interactions.push_back({index_of(users, r.user), index_of(items, r.item), r.rating, r.timestamp});
  }
  RatingDataset ds(std::move(interactions), users.size(), items.size(), scale);
  ds.set_raw_ids(std::move(users), std::move(items));
  return ds;
}

RatingDataset load_ratings(const std::filesystem::path& path, RatingFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open dataset file '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_ratings(buffer.str(), format);
}

namespace {

// Positions of each user's interactions sorted chronologically, ties by item.
std::vector<std::vector<std::size_t>> chronological_by_user(const RatingDataset& ds) {
  std::vector<std::vector<std::size_t>> by_user(ds.num_users());
  const auto& xs = ds.interactions();
  for (std::size_t k = 0; k < xs.size(); ++k) by_user[xs[k].user].push_back(k);
  for (auto& list : by_user) {
    std::sort(list.begin(), list.end(), [&](std::size_t a, std::size_t b) {
      if (xs[a].timestamp != xs[b].timestamp) return xs[a].timestamp < xs[b].timestamp;
      return xs[a].item < xs[b].item;
    });
  }
  return by_user;
}

}  // namespace

SplitDataset chronological_leave_one_out(const RatingDataset& ds) {
  const auto by_user = chronological_by_user(ds);
  const auto& xs = ds.interactions();
  enum Part : unsigned char { kTrain, kValidation, kTest };
  std::vector<Part> part(xs.size(), kTrain);
  SplitDataset split;
  split.test_source.assign(ds.num_users(), std::nullopt);
  split.validation_source.assign(ds.num_users(), std::nullopt);
  for (std::size_t u = 0; u < by_user.size(); ++u) {
    const auto& list = by_user[u];
    if (list.size() < 3) continue;
    part[list.back()] = kTest;
    part[list[list.size() - 2]] = kValidation;
    split.test_source[u] = list.back();
    split.validation_source[u] = list[list.size() - 2];
  }
  std::vector<Interaction> train, validation, test;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    switch (part[k]) {
      case kTrain: train.push_back(xs[k]); break;
      case kValidation: validation.push_back(xs[k]); break;
      case kTest: test.push_back(xs[k]); break;
    }
  }
  // Held-out partitions are ordered by user id.
  auto by_user_id = [](const Interaction& a, const Interaction& b) { return a.user < b.user; };
  std::sort(validation.begin(), validation.end(), by_user_id);
  std::sort(test.begin(), test.end(), by_user_id);
  split.train = ds.subset(std::move(train));
  split.validation = ds.subset(std::move(validation));
  split.test = ds.subset(std::move(test));
  return split;
}

NegativeSamples sample_negatives_for(const SplitDataset& split, const RatingDataset& examples,
                                     std::size_t n, std::uint64_t seed) {
  const std::size_t num_items = split.train.num_items();
  std::vector<std::vector<std::size_t>> seen(split.train.num_users());
  for (const RatingDataset* part : {&split.train, &split.validation, &split.test})
    for (const auto& x : part->interactions()) seen[x.user].push_back(x.item);

  NegativeSamples out;
  out.seed = seed;
  std::mt19937_64 rng(seed);
  std::vector<char> taken(num_items, 0);
  std::vector<std::size_t> candidates;
  for (const auto& x : examples.interactions()) {
    for (std::size_t item : seen[x.user]) taken[item] = 1;
    candidates.clear();
    for (std::size_t item = 0; item < num_items; ++item)
      if (!taken[item]) candidates.push_back(item);
    for (std::size_t item : seen[x.user]) taken[item] = 0;
    if (candidates.size() < n)
      throw DatasetError("user " + std::to_string(x.user) + " has only " +
                         std::to_string(candidates.size()) + " candidate negatives, need " +
                         std::to_string(n));
    // Partial Fisher-Yates: the first n slots become the sample.
    for (std::size_t k = 0; k < n; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, candidates.size() - 1);
      std::swap(candidates[k], candidates[pick(rng)]);
    }
    out.lists.push_back({x.user, x.item, {candidates.begin(), candidates.begin() + n}});
  }
  return out;
}

NegativeSamples sample_negatives(const SplitDataset& split, std::size_t n, std::uint64_t seed) {
  return sample_negatives_for(split, split.test, n, seed);
}

NeighborIndex build_neighbor_index(const RatingDataset& train, std::size_t cap) {
  if (cap < 1) throw ConfigError("neighbor cap must be at least 1");
  struct Entry {
    std::int64_t timestamp;
    std::size_t id;
  };
  std::vector<std::vector<Entry>> by_item(train.num_items()), by_user(train.num_users());
  for (const auto& x : train.interactions()) {
    by_item[x.item].push_back({x.timestamp, x.user});
    by_user[x.user].push_back({x.timestamp, x.item});
  }
  auto finish = [cap](std::vector<Entry>& entries) {
    if (entries.size() > cap) {
      // Most recent first; equal timestamps keep the lower id.
      std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.timestamp != b.timestamp) return a.timestamp > b.timestamp;
        return a.id < b.id;
      });
      entries.resize(cap);
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
      return a.id < b.id;
    });
    std::vector<std::size_t> ids;
    ids.reserve(entries.size());
    for (const auto& e : entries) ids.push_back(e.id);
    return ids;
  };
  NeighborIndex index;
  index.cap_ = cap;
  index.by_item_.reserve(by_item.size());
  for (auto& entries : by_item) index.by_item_.push_back(finish(entries));
  index.by_user_.reserve(by_user.size());
  for (auto& entries : by_user) index.by_user_.push_back(finish(entries));
  return index;
}

namespace {

std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  return out;
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_ratings_csv(const RatingDataset& ds, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  out << "user,item,rating,timestamp\n";
  for (const auto& x : ds.interactions())
    out << x.user << ',' << x.item << ',' << format_real(x.rating) << ',' << x.timestamp << '\n';
}

void write_negatives_csv(const NegativeSamples& samples, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  out << "# seed " << samples.seed << '\n';
  for (const auto& list : samples.lists) {
    out << list.user << ',' << list.positive;
    for (std::size_t item : list.negatives) out << ',' << item;
    out << '\n';
  }
}

void write_neighbor_index(const NeighborIndex& index, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  out << "# cap " << index.cap() << '\n';
  for (std::size_t i = 0; i < index.num_items(); ++i) {
    out << "item," << i;
    for (std::size_t u : index.users_of(i)) out << ',' << u;
    out << '\n';
  }
  for (std::size_t u = 0; u < index.num_users(); ++u) {
    out << "user," << u;
    for (std::size_t i : index.items_of(u)) out << ',' << i;
    out << '\n';
  }
}

}  // namespace neuse
