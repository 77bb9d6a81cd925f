#include "neuse/cf_base.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace neuse {

SnapshotSchedule SnapshotSchedule::every(std::size_t delta_t, std::size_t max_epoch) {
  SnapshotSchedule s;
  s.mode = Mode::EveryDeltaT;
  s.delta_t = delta_t;
  s.max_epoch = max_epoch;
  return s;
}

SnapshotSchedule SnapshotSchedule::knn(std::vector<std::size_t> k_list) {
  SnapshotSchedule s;
  s.mode = Mode::KnnKList;
  s.k_list = std::move(k_list);
  return s;
}

SnapshotSchedule SnapshotSchedule::cyclic(std::size_t cycle_len, std::size_t cycles) {
  SnapshotSchedule s;
  s.mode = Mode::CyclicLr;
  s.cycle_len = cycle_len;
  s.cycles = cycles;
  return s;
}

void SnapshotSchedule::validate() const {
  switch (mode) {
    case Mode::EveryDeltaT:
      if (delta_t < 1) throw ConfigError("schedule.delta_t must be at least 1");
      if (max_epoch < delta_t || max_epoch % delta_t != 0)
        throw ConfigError("schedule.max_epoch must be a positive multiple of delta_t");
      break;
    case Mode::KnnKList:
      if (k_list.empty()) throw ConfigError("schedule.k_list must not be empty");
      for (std::size_t k = 0; k < k_list.size(); ++k) {
        if (k_list[k] < 1) throw ConfigError("schedule.k_list entries must be at least 1");
        if (k > 0 && k_list[k] <= k_list[k - 1])
          throw ConfigError("schedule.k_list must be strictly increasing");
      }
      break;
    case Mode::CyclicLr:
      if (cycle_len < 1) throw ConfigError("schedule.cycle_len must be at least 1");
      if (cycles < 1) throw ConfigError("schedule.cycles must be at least 1");
      break;
  }
}

std::size_t SnapshotSchedule::total_epochs() const {
  switch (mode) {
    case Mode::EveryDeltaT: return max_epoch;
    case Mode::CyclicLr: return cycle_len * cycles;
    case Mode::KnnKList: break;
  }
  return 0;
}

std::vector<std::size_t> SnapshotSchedule::capture_epochs() const {
  std::vector<std::size_t> out;
  switch (mode) {
    case Mode::EveryDeltaT:
      for (std::size_t e = delta_t; e <= max_epoch; e += delta_t) out.push_back(e);
      break;
    case Mode::CyclicLr:
      for (std::size_t c = 1; c <= cycles; ++c) out.push_back(c * cycle_len);
      break;
    case Mode::KnnKList: break;
  }
  return out;
}

double cyclic_lr(std::size_t epoch, double base_lr, std::size_t cycle_len) {
  if (cycle_len < 1) throw ConfigError("cycle_len must be at least 1");
  const double phase = static_cast<double>(epoch % cycle_len) / static_cast<double>(cycle_len);
  return base_lr / 2.0 * (std::cos(std::numbers::pi * phase) + 1.0);
}

double MFModel::predict(std::size_t user, std::size_t item) const {
  return global_mean + user_bias[user] + item_bias[item] +
         dot(user_factors.row(user), item_factors.row(item));
}

double FMModel::predict(std::size_t user, std::size_t item) const {
  const std::size_t j = num_users + item;
  return w0 + w[user] + w[j] + dot(factors.row(user), factors.row(j));
}

namespace {

void check_sgd_config(const SgdConfig& c) {
  if (c.factors < 1) throw ConfigError("base.factors must be at least 1");
  if (!(c.lr > 0.0)) throw ConfigError("base.lr must be positive");
  if (c.reg < 0.0) throw ConfigError("base.reg must be non-negative");
  if (c.init_std < 0.0) throw ConfigError("base.init_std must be non-negative");
}

void fill_gaussian(Matrix& m, double std_dev, std::mt19937_64& rng) {
  if (std_dev == 0.0) return;
  std::normal_distribution<double> gauss(0.0, std_dev);
  for (double& v : m.flat()) v = gauss(rng);
}

bool is_finite(const MFModel& m) {
  return all_finite(m.user_factors.flat()) && all_finite(m.item_factors.flat()) &&
         all_finite(m.user_bias) && all_finite(m.item_bias);
}

bool is_finite(const FMModel& m) {
  return std::isfinite(m.w0) && all_finite(m.w) && all_finite(m.factors.flat());
}

struct Example {
  std::size_t user;
  std::size_t item;
  double target;
};

// Builds the per-epoch SGD examples; explicit data is fixed, implicit data
// redraws its negatives every epoch.
class ExampleStream {
 public:
  ExampleStream(const RatingDataset& train, const SgdConfig& config)
      : train_(train),
        negatives_(config.implicit_negatives.value_or(0)),
        implicit_(config.implicit_negatives.has_value()),
        rng_(derive_seed(config.seed, "sgd-shuffle")) {
    if (implicit_) {
      rated_.resize(train.num_users());
      for (const auto& x : train.interactions()) rated_[x.user].push_back(x.item);
      for (auto& items : rated_) std::sort(items.begin(), items.end());
    }
  }

  double mean_target() const {
    if (implicit_) return 1.0 / static_cast<double>(1 + negatives_);
    return train_.mean_rating();
  }

  const std::vector<Example>& next_epoch() {
    examples_.clear();
    for (const auto& x : train_.interactions()) {
      examples_.push_back({x.user, x.item, implicit_ ? 1.0 : x.rating});
      if (!implicit_) continue;
      const auto& seen = rated_[x.user];
      if (seen.size() >= train_.num_items()) continue;
      std::uniform_int_distribution<std::size_t> pick(0, train_.num_items() - 1);
      for (std::size_t n = 0; n < negatives_; ++n) {
        std::size_t item;
        do {
          item = pick(rng_);
        } while (std::binary_search(seen.begin(), seen.end(), item));
        examples_.push_back({x.user, item, 0.0});
      }
    }
    std::shuffle(examples_.begin(), examples_.end(), rng_);
    return examples_;
  }

 private:
  const RatingDataset& train_;
  std::size_t negatives_;
  bool implicit_;
  std::mt19937_64 rng_;
  std::vector<std::vector<std::size_t>> rated_;
  std::vector<Example> examples_;
};

template <typename Model, typename Step>
SgdResult<Model> run_sgd(Model model, ExampleStream& stream, const SnapshotSchedule& schedule,
                         double base_lr, Step step) {
  schedule.validate();
  if (schedule.mode == SnapshotSchedule::Mode::KnnKList)
    throw ConfigError("SGD trainers need an every-delta-T or cyclic-lr schedule");
  const auto captures = schedule.capture_epochs();
  auto next_capture = captures.begin();
  SgdResult<Model> result;
  for (std::size_t epoch = 0; epoch < schedule.total_epochs(); ++epoch) {
    const double lr = schedule.mode == SnapshotSchedule::Mode::CyclicLr
                          ? cyclic_lr(epoch, base_lr, schedule.cycle_len)
                          : base_lr;
    const auto& examples = stream.next_epoch();
    for (const auto& ex : examples) step(model, ex, lr);

    double sse = 0.0;
    for (const auto& ex : examples) {
      const double e = ex.target - model.predict(ex.user, ex.item);
      sse += e * e;
    }
    const double rmse = std::sqrt(sse / static_cast<double>(std::max<std::size_t>(1, examples.size())));
    if (!is_finite(model) || !std::isfinite(rmse)) throw TrainingDiverged(epoch + 1);
    result.epoch_rmse.push_back(rmse);
    if (next_capture != captures.end() && *next_capture == epoch + 1) {
      result.snapshots.push_back({epoch + 1, model});
      ++next_capture;
    }
  }
  return result;
}

}  // namespace

SgdResult<MFModel> train_rsvd(const RatingDataset& train, const SgdConfig& config,
                              const SnapshotSchedule& schedule) {
  check_sgd_config(config);
  ExampleStream stream(train, config);
  std::mt19937_64 init_rng(derive_seed(config.seed, "sgd-init"));
  MFModel model;
  model.user_factors = Matrix(train.num_users(), config.factors);
  model.item_factors = Matrix(train.num_items(), config.factors);
  fill_gaussian(model.user_factors, config.init_std, init_rng);
  fill_gaussian(model.item_factors, config.init_std, init_rng);
  model.user_bias.assign(train.num_users(), 0.0);
  model.item_bias.assign(train.num_items(), 0.0);
  model.global_mean = stream.mean_target();

  const double reg = config.reg;
  auto step = [reg](MFModel& m, const Example& ex, double lr) {
    const double err = ex.target - m.predict(ex.user, ex.item);
    double& bu = m.user_bias[ex.user];
    double& bi = m.item_bias[ex.item];
    bu += lr * (err - reg * bu);
    bi += lr * (err - reg * bi);
    auto pu = m.user_factors.row(ex.user);
    auto qi = m.item_factors.row(ex.item);
    for (std::size_t k = 0; k < pu.size(); ++k) {
      const double puk = pu[k];
      pu[k] += lr * (err * qi[k] - reg * puk);
      qi[k] += lr * (err * puk - reg * qi[k]);
    }
  };
  return run_sgd(std::move(model), stream, schedule, config.lr, step);
}

SgdResult<FMModel> train_fm_sgd(const RatingDataset& train, const SgdConfig& config,
                                const SnapshotSchedule& schedule) {
  check_sgd_config(config);
  ExampleStream stream(train, config);
  std::mt19937_64 init_rng(derive_seed(config.seed, "sgd-init"));
  FMModel model;
  model.num_users = train.num_users();
  model.num_items = train.num_items();
  model.w0 = stream.mean_target();
  model.w.assign(model.num_users + model.num_items, 0.0);
  model.factors = Matrix(model.num_users + model.num_items, config.factors);
  fill_gaussian(model.factors, config.init_std, init_rng);

  const double reg = config.reg;
  // With one-hot user and item features (x = 1 on both), the FM gradient of
  // the pairwise term w.r.t. v_user is v_item and vice versa.
  auto step = [reg](FMModel& m, const Example& ex, double lr) {
    const double err = ex.target - m.predict(ex.user, ex.item);
    const std::size_t j = m.num_users + ex.item;
    m.w0 += lr * err;
    m.w[ex.user] += lr * (err - reg * m.w[ex.user]);
    m.w[j] += lr * (err - reg * m.w[j]);
    auto vu = m.factors.row(ex.user);
    auto vi = m.factors.row(j);
    for (std::size_t k = 0; k < vu.size(); ++k) {
      const double vuk = vu[k];
      vu[k] += lr * (err * vi[k] - reg * vuk);
      vi[k] += lr * (err * vuk - reg * vi[k]);
    }
  };
  return run_sgd(std::move(model), stream, schedule, config.lr, step);
}

double cosine_similarity(std::span<const SparseEntry> a, std::span<const SparseEntry> b) {
  double dot_ab = 0.0, norm_a = 0.0, norm_b = 0.0;
  for (const auto& e : a) norm_a += e.value * e.value;
  for (const auto& e : b) norm_b += e.value * e.value;
  std::size_t x = 0, y = 0;
  while (x < a.size() && y < b.size()) {
    if (a[x].index < b[y].index) {
      ++x;
    } else if (b[y].index < a[x].index) {
      ++y;
    } else {
      dot_ab += a[x].value * b[y].value;
      ++x;
      ++y;
    }
  }
  if (norm_a == 0.0 || norm_b == 0.0) return 0.0;
  return std::clamp(dot_ab / (std::sqrt(norm_a) * std::sqrt(norm_b)), -1.0, 1.0);
}

KnnPrediction parse_knn_prediction(std::string_view text) {
  if (text == "weighted-mean") return KnnPrediction::WeightedMean;
  if (text == "mean-centered") return KnnPrediction::MeanCentered;
  throw ConfigError("knn prediction: expected weighted-mean or mean-centered, got '" + std::string(text) + "'");
}

std::string_view to_string(KnnPrediction rule) {
  return rule == KnnPrediction::WeightedMean ? "weighted-mean" : "mean-centered";
}

KnnTable::KnnTable(const RatingDataset& train, KnnKind kind, bool implicit, KnnPrediction rule)
    : kind_(kind),
      implicit_(implicit),
      rule_(rule),
      num_users_(train.num_users()),
      num_items_(train.num_items()) {
  const std::size_t n_users = num_users_, n_items = num_items_;
  std::vector<double> user_sum(n_users, 0.0), item_sum(n_items, 0.0);
  std::vector<std::size_t> user_count(n_users, 0), item_count(n_items, 0);
  for (const auto& x : train.interactions()) {
    user_sum[x.user] += x.rating;
    item_sum[x.item] += x.rating;
    ++user_count[x.user];
    ++item_count[x.item];
  }
  global_mean_ = train.mean_rating();
  user_mean_.assign(n_users, global_mean_);
  item_mean_.assign(n_items, global_mean_);
  user_seen_.assign(n_users, 0);
  item_seen_.assign(n_items, 0);
  for (std::size_t u = 0; u < n_users; ++u)
    if (user_count[u] > 0) {
      user_mean_[u] = user_sum[u] / static_cast<double>(user_count[u]);
      user_seen_[u] = 1;
    }
  for (std::size_t i = 0; i < n_items; ++i)
    if (item_count[i] > 0) {
      item_mean_[i] = item_sum[i] / static_cast<double>(item_count[i]);
      item_seen_[i] = 1;
    }

  // The compared entities (users for user-kind) and the coordinates of their
  // vectors (items for user-kind).
  const bool by_user = kind == KnnKind::User;
  const std::size_t n_entities = by_user ? n_users : n_items;
  const std::size_t n_coords = by_user ? n_items : n_users;
  const auto& entity_mean = by_user ? user_mean_ : item_mean_;

  // Mean-centered (or binary) entries grouped by coordinate.
  std::vector<std::vector<SparseEntry>> by_coord(n_coords);
  std::vector<double> norm_sq(n_entities, 0.0);
  candidates_.assign(n_coords, {});
  for (const auto& x : train.interactions()) {
    const std::size_t entity = by_user ? x.user : x.item;
    const std::size_t coord = by_user ? x.item : x.user;
    const double v = implicit ? 1.0 : x.rating - entity_mean[entity];
    by_coord[coord].push_back({entity, v});
    norm_sq[entity] += v * v;
    const bool centered = rule == KnnPrediction::MeanCentered;
    candidates_[coord].push_back({entity, implicit || centered ? v : x.rating});
  }
  for (auto& list : candidates_)
    std::sort(list.begin(), list.end(),
              [](const SparseEntry& a, const SparseEntry& b) { return a.index < b.index; });

  // Dot products accumulated over shared coordinates.
  sim_ = Matrix(n_entities, n_entities, 0.0);
  for (const auto& entries : by_coord)
    for (std::size_t p = 0; p < entries.size(); ++p)
      for (std::size_t q = p + 1; q < entries.size(); ++q) {
        const double prod = entries[p].value * entries[q].value;
        sim_(entries[p].index, entries[q].index) += prod;
        sim_(entries[q].index, entries[p].index) += prod;
      }
  for (std::size_t a = 0; a < n_entities; ++a) {
    for (std::size_t b = 0; b < n_entities; ++b) {
      const double denom = std::sqrt(norm_sq[a]) * std::sqrt(norm_sq[b]);
      sim_(a, b) = denom == 0.0 ? 0.0 : std::clamp(sim_(a, b) / denom, -1.0, 1.0);
    }
    if (norm_sq[a] > 0.0) sim_(a, a) = 1.0;
  }
}

void KnnTable::predict(std::size_t user, std::size_t item, std::span<const std::size_t> k_list,
                       std::span<double> out) const {
  if (user >= num_users_ || item >= num_items_)
    throw OutOfRangeError("KNN prediction for unknown user " + std::to_string(user) + " / item " +
                          std::to_string(item));
  const bool by_user = kind_ == KnnKind::User;
  const std::size_t self = by_user ? user : item;
  const auto& pool = candidates_[by_user ? item : user];

  struct Scored {
    double sim;
    std::size_t id;
    double value;
  };
  std::vector<Scored> scored;
  scored.reserve(pool.size());
  for (const auto& e : pool) {
    if (e.index == self) continue;
    const double s = sim_(self, e.index);
    if (s > 0.0) scored.push_back({s, e.index, e.value});
  }
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.sim != b.sim) return a.sim > b.sim;
    return a.id < b.id;
  });

  double fallback = global_mean_;
  if (by_user && user_seen_[user]) fallback = user_mean_[user];
  if (!by_user && item_seen_[item]) fallback = item_mean_[item];

  double weighted = 0.0, weight = 0.0;
  std::size_t used = 0;
  for (std::size_t slot = 0; slot < k_list.size(); ++slot) {
    const std::size_t k = std::min(k_list[slot], scored.size());
    for (; used < k; ++used) {
      weighted += scored[used].sim * scored[used].value;
      weight += scored[used].sim;
    }
    if (implicit_)
      out[slot] = weighted;  // sum of neighbor similarities
    else if (used == 0)
      out[slot] = fallback;
    else
      out[slot] = rule_ == KnnPrediction::MeanCentered ? fallback + weighted / weight : weighted / weight;
  }
}

double KNNModel::predict(std::size_t user, std::size_t item) const {
  double out = 0.0;
  const std::size_t ks[1] = {k};
  table->predict(user, item, ks, {&out, 1});
  return out;
}

std::vector<KNNModel> knn_snapshots(const RatingDataset& train, KnnKind kind,
                                    std::vector<std::size_t> k_list, bool implicit, KnnPrediction rule) {
  SnapshotSchedule::knn(k_list).validate();
  auto table = std::make_shared<const KnnTable>(train, kind, implicit, rule);
  std::vector<KNNModel> models;
  for (std::size_t k : k_list) models.push_back({table, k});
  return models;
}

namespace {

template <typename Model>
class SgdSource final : public SnapshotSource {
 public:
  SgdSource(std::string name, std::vector<TaggedModel<Model>> snapshots, std::size_t users,
            std::size_t items)
      : name_(std::move(name)), snapshots_(std::move(snapshots)), users_(users), items_(items) {}

  std::string algorithm() const override { return name_; }
  std::vector<std::int64_t> tags() const override {
    std::vector<std::int64_t> out;
    for (const auto& s : snapshots_) out.push_back(static_cast<std::int64_t>(s.epoch));
    return out;
  }
  std::size_t num_users() const override { return users_; }
  std::size_t num_items() const override { return items_; }
  void predict_all(std::size_t user, std::size_t item, std::span<double> out) const override {
    if (user >= users_ || item >= items_)
      throw OutOfRangeError("prediction for unknown user " + std::to_string(user) + " / item " +
                            std::to_string(item));
    for (std::size_t s = 0; s < snapshots_.size(); ++s)
      out[s] = snapshots_[s].model.predict(user, item);
  }

 private:
  std::string name_;
  std::vector<TaggedModel<Model>> snapshots_;
  std::size_t users_;
  std::size_t items_;
};

class KnnSource final : public SnapshotSource {
 public:
  explicit KnnSource(std::vector<KNNModel> models) : models_(std::move(models)) {
    for (const auto& m : models_) {
      if (m.table != models_.front().table)
        throw ConfigError("KNN snapshots must share one similarity table");
      k_list_.push_back(m.k);
    }
  }

  std::string algorithm() const override {
    return models_.front().table->kind() == KnnKind::User ? "userknn" : "itemknn";
  }
  std::vector<std::int64_t> tags() const override {
    return {k_list_.begin(), k_list_.end()};
  }
  std::size_t num_users() const override { return models_.front().table->num_users(); }
  std::size_t num_items() const override { return models_.front().table->num_items(); }
  void predict_all(std::size_t user, std::size_t item, std::span<double> out) const override {
    models_.front().table->predict(user, item, k_list_, out);
  }

 private:
  std::vector<KNNModel> models_;
  std::vector<std::size_t> k_list_;
};

}  // namespace

std::unique_ptr<SnapshotSource> make_source(std::vector<TaggedModel<MFModel>> snapshots) {
  if (snapshots.empty()) throw ConfigError("no RSVD snapshots captured");
  const std::size_t users = snapshots.front().model.user_factors.rows();
  const std::size_t items = snapshots.front().model.item_factors.rows();
  return std::make_unique<SgdSource<MFModel>>("rsvd", std::move(snapshots), users, items);
}

std::unique_ptr<SnapshotSource> make_source(std::vector<TaggedModel<FMModel>> snapshots) {
  if (snapshots.empty()) throw ConfigError("no FM snapshots captured");
  const std::size_t users = snapshots.front().model.num_users;
  const std::size_t items = snapshots.front().model.num_items;
  return std::make_unique<SgdSource<FMModel>>("fm", std::move(snapshots), users, items);
}

std::unique_ptr<SnapshotSource> make_source(std::vector<KNNModel> models) {
  if (models.empty()) throw ConfigError("no KNN snapshots");
  return std::make_unique<KnnSource>(std::move(models));
}

}  // namespace neuse
