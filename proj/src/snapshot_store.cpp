#include "neuse/snapshot_store.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace neuse {

namespace {

constexpr std::string_view kMagic = "snapens-v1";

bool same_real(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

bool SnapshotMeta::operator==(const SnapshotMeta& o) const {
  return index == o.index && tag == o.tag && source == o.source &&
         same_real(validation_metric, o.validation_metric);
}

SnapshotSet::SnapshotSet(std::vector<SnapshotMeta> metas, std::optional<RatingScale> scale)
    : metas_(std::move(metas)), scale_(scale) {
  if (metas_.empty()) throw FormatError("a snapshot set needs at least one snapshot");
  for (std::size_t s = 0; s < metas_.size(); ++s) {
    metas_[s].index = s;
    if (s > 0 && metas_[s].tag <= metas_[s - 1].tag)
      throw FormatError("snapshot tags must be strictly increasing");
  }
}

std::vector<std::int64_t> SnapshotSet::tags() const {
  std::vector<std::int64_t> out;
  for (const auto& m : metas_) out.push_back(m.tag);
  return out;
}

std::optional<std::size_t> SnapshotSet::find(std::size_t user, std::size_t item) const {
  const auto it = index_.find(key(user, item));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t SnapshotSet::row_of(std::size_t user, std::size_t item) const {
  if (auto r = find(user, item)) return *r;
  throw OutOfRangeError("no snapshot predictions for user " + std::to_string(user) + ", item " +
                        std::to_string(item));
}

void SnapshotSet::add(UserItem pair, std::span<const double> values) {
  if (values.size() != metas_.size())
    throw FormatError("prediction vector of length " + std::to_string(values.size()) +
                      " for a set of " + std::to_string(metas_.size()) + " snapshots");
  if (!all_finite(values))
    throw NumericError("non-finite snapshot prediction for user " + std::to_string(pair.user) +
                       ", item " + std::to_string(pair.item));
  if (!index_.emplace(key(pair.user, pair.item), pairs_.size()).second)
    throw FormatError("duplicate pair (" + std::to_string(pair.user) + ", " +
                      std::to_string(pair.item) + ")");
  pairs_.push_back(pair);
  values_.insert(values_.end(), values.begin(), values.end());
}

void SnapshotSet::set_validation_metrics(std::string metric_name, std::span<const double> values) {
  if (values.size() != metas_.size())
    throw FormatError("validation metric count does not match snapshot count");
  metric_name_ = std::move(metric_name);
  for (std::size_t s = 0; s < metas_.size(); ++s) metas_[s].validation_metric = values[s];
}

void SnapshotSet::copy_metrics_from(const SnapshotSet& other) {
  if (other.tags() != tags()) throw FormatError("snapshot sets have different tags");
  std::vector<double> values;
  for (const auto& m : other.metas_) values.push_back(m.validation_metric);
  set_validation_metrics(other.metric_name_, values);
}

bool SnapshotSet::operator==(const SnapshotSet& o) const {
  if (!(metas_ == o.metas_ && scale_ == o.scale_ && metric_name_ == o.metric_name_ &&
        pairs_ == o.pairs_ && values_.size() == o.values_.size()))
    return false;
  return std::memcmp(values_.data(), o.values_.data(), values_.size() * sizeof(double)) == 0;
}

SnapshotSet materialize(const SnapshotSource& source, std::span<const UserItem> pairs,
                        std::optional<RatingScale> scale) {
  std::vector<SnapshotMeta> metas;
  const auto tags = source.tags();
  for (std::size_t s = 0; s < tags.size(); ++s)
    metas.push_back({s, tags[s], source.algorithm(), std::nan("")});
  SnapshotSet set(std::move(metas), scale);
  std::vector<double> buffer(tags.size());
  for (const auto& pair : pairs) {
    if (pair.user >= source.num_users() || pair.item >= source.num_items())
      throw OutOfRangeError("pair (" + std::to_string(pair.user) + ", " +
                            std::to_string(pair.item) + ") outside the snapshot models' range");
    source.predict_all(pair.user, pair.item, buffer);
    if (scale)
      for (double& v : buffer) v = scale->clip(v);
    set.add(pair, buffer);
  }
  return set;
}

std::string format_snapshots(const SnapshotSet& set) {
  std::string out;
  out += kMagic;
  out += ',' + std::to_string(set.num_snapshots());
  for (const auto& m : set.metas()) out += ',' + std::to_string(m.tag);
  out += "\n#source";
  for (const auto& m : set.metas()) out += ',' + m.source;
  out += "\n#scale";
  if (set.scale())
    out += ',' + format_real(set.scale()->min) + ',' + format_real(set.scale()->max);
  else
    out += ",none";
  out += "\n#metric";
  if (set.metric_name().empty()) {
    out += ",none";
  } else {
    out += ',' + set.metric_name();
    for (const auto& m : set.metas()) out += ',' + format_real(m.validation_metric);
  }
  out += '\n';
  for (std::size_t r = 0; r < set.num_pairs(); ++r) {
    out += std::to_string(set.pairs()[r].user) + ',' + std::to_string(set.pairs()[r].item);
    for (double v : set.row(r)) out += ',' + format_real(v);
    out += '\n';
  }
  out += "#rows," + std::to_string(set.num_pairs()) + '\n';
  return out;
}

void save_snapshots(const SnapshotSet& set, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << format_snapshots(set);
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_real(std::string_view f, std::size_t line_no) {
  if (f == "nan") return std::nan("");
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc() || ptr != f.data() + f.size() || f.empty())
    throw FormatError("line " + std::to_string(line_no) + ": invalid number '" + std::string(f) + "'");
  return v;
}

template <typename Int>
Int parse_int(std::string_view f, std::size_t line_no) {
  Int v = 0;
  auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc() || ptr != f.data() + f.size() || f.empty())
    throw FormatError("line " + std::to_string(line_no) + ": invalid integer '" + std::string(f) + "'");
  return v;
}

}  // namespace

SnapshotSet parse_snapshots(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto stop = text.find('\n', start);
    if (stop == std::string_view::npos) stop = text.size();
    lines.push_back(text.substr(start, stop - start));
    start = stop + 1;
  }
  if (lines.empty()) throw FormatError("empty snapshot file");

  const auto header = split_csv(lines[0]);
  if (header.empty() || header[0] != kMagic)
    throw FormatError("line 1: expected '" + std::string(kMagic) + "' header");
  if (header.size() < 2) throw FormatError("line 1: missing snapshot count");
  const auto n = parse_int<std::size_t>(header[1], 1);
  if (n == 0 || header.size() != n + 2)
    throw FormatError("line 1: header declares " + std::to_string(n) + " snapshots but lists " +
                      std::to_string(header.size() - 2) + " tags");

  std::vector<SnapshotMeta> metas(n);
  for (std::size_t s = 0; s < n; ++s) {
    metas[s].index = s;
    metas[s].tag = parse_int<std::int64_t>(header[s + 2], 1);
    metas[s].validation_metric = std::nan("");
  }

  auto expect_prefix = [&](std::size_t idx, std::string_view prefix) {
    if (idx >= lines.size()) throw FormatError("truncated snapshot file: missing " + std::string(prefix));
    auto fields = split_csv(lines[idx]);
    if (fields[0] != prefix)
      throw FormatError("line " + std::to_string(idx + 1) + ": expected " + std::string(prefix));
    return fields;
  };

  const auto sources = expect_prefix(1, "#source");
  if (sources.size() != n + 1) throw FormatError("line 2: expected one source per snapshot");
  for (std::size_t s = 0; s < n; ++s) metas[s].source = std::string(sources[s + 1]);

  std::optional<RatingScale> scale;
  const auto scale_fields = expect_prefix(2, "#scale");
  if (!(scale_fields.size() == 2 && scale_fields[1] == "none")) {
    if (scale_fields.size() != 3) throw FormatError("line 3: malformed #scale");
    scale = RatingScale{parse_real(scale_fields[1], 3), parse_real(scale_fields[2], 3)};
  }

  const auto metric_fields = expect_prefix(3, "#metric");
  std::string metric_name;
  if (!(metric_fields.size() == 2 && metric_fields[1] == "none")) {
    if (metric_fields.size() != n + 2) throw FormatError("line 4: expected one metric per snapshot");
    metric_name = std::string(metric_fields[1]);
    for (std::size_t s = 0; s < n; ++s) metas[s].validation_metric = parse_real(metric_fields[s + 2], 4);
  }

  SnapshotSet set(std::move(metas), scale);
  set.metric_name_ = std::move(metric_name);
  std::vector<double> buffer(n);
  bool footer_seen = false;
  for (std::size_t idx = 4; idx < lines.size(); ++idx) {
    const auto line_no = idx + 1;
    const auto fields = split_csv(lines[idx]);
    if (fields[0] == "#rows") {
      if (fields.size() != 2 || parse_int<std::size_t>(fields[1], line_no) != set.num_pairs())
        throw FormatError("line " + std::to_string(line_no) + ": row count does not match footer");
      if (idx + 1 != lines.size()) throw FormatError("content after #rows footer");
      footer_seen = true;
      break;
    }
    if (fields.size() != n + 2)
      throw FormatError("row " + std::to_string(line_no) + ": expected " + std::to_string(n + 2) +
                        " fields, got " + std::to_string(fields.size()));
    const UserItem pair{parse_int<std::size_t>(fields[0], line_no),
                        parse_int<std::size_t>(fields[1], line_no)};
    for (std::size_t s = 0; s < n; ++s) buffer[s] = parse_real(fields[s + 2], line_no);
    set.add(pair, buffer);
  }
  if (!footer_seen) throw FormatError("truncated snapshot file: missing #rows footer");
  return set;
}

SnapshotSet load_snapshots(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open snapshot file '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_snapshots(buffer.str());
}

}  // namespace neuse
