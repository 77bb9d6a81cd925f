#include <cmath>
#include <numbers>

#include "doctest.h"
#include "neuse/cf_base.hpp"
#include "support.hpp"

using namespace neuse;

namespace {

// Dense ratings with 0 for unrated cells, centered by each row's mean over its
// rated cells. Rows are users for user-kind and items for item-kind.
std::vector<std::vector<double>> centered_rows(const RatingDataset& ds, KnnKind kind,
                                               std::vector<double>& row_mean) {
  const bool by_user = kind == KnnKind::User;
  const std::size_t rows = by_user ? ds.num_users() : ds.num_items();
  const std::size_t cols = by_user ? ds.num_items() : ds.num_users();
  std::vector<double> sum(rows, 0.0);
  std::vector<double> count(rows, 0.0);
  for (const auto& x : ds.interactions()) {
    sum[by_user ? x.user : x.item] += x.rating;
    count[by_user ? x.user : x.item] += 1.0;
  }
  row_mean.assign(rows, ds.mean_rating());
  for (std::size_t r = 0; r < rows; ++r)
    if (count[r] > 0) row_mean[r] = sum[r] / count[r];
  std::vector<std::vector<double>> out(rows, std::vector<double>(cols, 0.0));
  for (const auto& x : ds.interactions()) {
    const std::size_t r = by_user ? x.user : x.item;
    out[r][by_user ? x.item : x.user] = x.rating - row_mean[r];
  }
  return out;
}

double dense_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  return aa == 0.0 || bb == 0.0 ? 0.0 : ab / std::sqrt(aa * bb);
}

double rating_of(const RatingDataset& ds, std::size_t user, std::size_t item, bool& found) {
  for (const auto& x : ds.interactions())
    if (x.user == user && x.item == item) {
      found = true;
      return x.rating;
    }
  found = false;
  return 0.0;
}

// Brute-force KNN prediction for one pair.
double knn_oracle(const RatingDataset& ds, KnnKind kind, std::size_t k, KnnPrediction rule,
                  std::size_t user, std::size_t item) {
  std::vector<double> mean;
  const auto rows = centered_rows(ds, kind, mean);
  const bool by_user = kind == KnnKind::User;
  const std::size_t self = by_user ? user : item;
  std::vector<std::tuple<double, std::size_t, double>> cands;
  for (std::size_t other = 0; other < rows.size(); ++other) {
    if (other == self) continue;
    bool found = false;
    const double r = by_user ? rating_of(ds, other, item, found) : rating_of(ds, user, other, found);
    if (!found) continue;
    const double s = dense_cosine(rows[self], rows[other]);
    if (s > 0.0) cands.push_back({-s, other, r});
  }
  std::sort(cands.begin(), cands.end());
  double num = 0.0, den = 0.0;
  for (std::size_t n = 0; n < std::min(k, cands.size()); ++n) {
    const auto [neg_s, other, r] = cands[n];
    num += -neg_s * (rule == KnnPrediction::MeanCentered ? r - mean[other] : r);
    den += -neg_s;
  }
  if (den == 0.0) return mean[self];
  return rule == KnnPrediction::MeanCentered ? mean[self] + num / den : num / den;
}

RatingDataset constant_ratings(double c) {
  std::vector<Interaction> rows;
  std::int64_t t = 0;
  for (std::size_t u = 0; u < 10; ++u)
    for (std::size_t i = 0; i < 8; ++i)
      if ((u + i) % 3 != 0) rows.push_back({u, i, c, ++t});
  return RatingDataset(std::move(rows), 10, 8, {c, c});
}

}  // namespace

TEST_CASE("schedule arithmetic") {
  const auto every = SnapshotSchedule::every(10, 90);
  CHECK(every.capture_epochs() == std::vector<std::size_t>{10, 20, 30, 40, 50, 60, 70, 80, 90});
  CHECK(every.total_epochs() == 90);
  CHECK(SnapshotSchedule::every(10, 50).capture_epochs().size() == 5);
  const auto cyc = SnapshotSchedule::cyclic(10, 3);
  CHECK(cyc.capture_epochs() == std::vector<std::size_t>{10, 20, 30});
  CHECK(cyc.total_epochs() == 30);

  CHECK_THROWS_AS(SnapshotSchedule::every(0, 90).validate(), ConfigError);
  CHECK_THROWS_AS(SnapshotSchedule::every(10, 95).validate(), ConfigError);
  CHECK_THROWS_AS(SnapshotSchedule::knn({}).validate(), ConfigError);
  CHECK_THROWS_AS(SnapshotSchedule::knn({20, 10}).validate(), ConfigError);
  CHECK_THROWS_AS(SnapshotSchedule::cyclic(0, 3).validate(), ConfigError);
}

TEST_CASE("cyclic learning rate") {
  CHECK(cyclic_lr(0, 0.01, 10) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(cyclic_lr(20, 0.01, 10) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(cyclic_lr(5, 0.01, 10) == doctest::Approx(0.005).epsilon(1e-12));
  const double expected = 0.005 * (std::cos(0.99 * std::numbers::pi) + 1.0);
  CHECK(cyclic_lr(99, 0.01, 100) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::abs(cyclic_lr(99, 0.01, 100) - 2.47e-6) < 5e-9);
  CHECK_THROWS_AS(cyclic_lr(1, 0.01, 0), ConfigError);
}

TEST_CASE("RSVD snapshots follow the schedule") {
  const auto ds = testing::random_ratings(30, 20, 6, 1);
  SgdConfig config;
  config.seed = 7;
  const auto result = train_rsvd(ds, config, SnapshotSchedule::every(10, 90));
  REQUIRE(result.snapshots.size() == 9);
  for (std::size_t s = 0; s < 9; ++s) CHECK(result.snapshots[s].epoch == 10 * (s + 1));
  CHECK(result.epoch_rmse.size() == 90);
  CHECK(result.snapshots[0].model.user_factors != result.snapshots[8].model.user_factors);

  const auto again = train_rsvd(ds, config, SnapshotSchedule::every(10, 90));
  CHECK(again.epoch_rmse == result.epoch_rmse);
  CHECK(again.snapshots.back().model.item_factors == result.snapshots.back().model.item_factors);
}

TEST_CASE("RSVD converges on constant ratings") {
  const auto ds = constant_ratings(4.0);
  SgdConfig config;
  config.factors = 1;
  config.reg = 0.0;
  config.lr = 0.01;
  config.seed = 3;
  const auto result = train_rsvd(ds, config, SnapshotSchedule::every(50, 200));
  const auto& model = result.snapshots.back().model;
  for (std::size_t u = 0; u < 10; ++u)
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(model.predict(u, i) - 4.0) < 1e-2);
}

TEST_CASE("RSVD initial factors have the configured spread") {
  const auto ds = testing::random_ratings(2000, 50, 3, 2);
  SgdConfig config;
  config.lr = 1e-12;
  config.seed = 5;
  const auto result = train_rsvd(ds, config, SnapshotSchedule::every(1, 1));
  const auto values = result.snapshots[0].model.user_factors.flat();
  REQUIRE(values.size() >= 10000);
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(values.size() - 1));
  CHECK(std::abs(sd - 0.01) < 0.001);
}

TEST_CASE("SGD config errors") {
  const auto ds = constant_ratings(3.0);
  SgdConfig config;
  config.factors = 0;
  CHECK_THROWS_AS(train_rsvd(ds, config, SnapshotSchedule::every(1, 1)), ConfigError);
  config.factors = 2;
  CHECK_THROWS_AS(train_fm_sgd(ds, config, SnapshotSchedule::knn({10})), ConfigError);
}

TEST_CASE("RSVD with an oversized step diverges") {
  const auto path = testing::ml100k_path();
  if (!path) {
    MESSAGE("ML-100K not found; skipped");
    return;
  }
  const auto split = chronological_leave_one_out(load_ratings(*path, RatingFormat::MovielensTab));
  SgdConfig config;
  config.lr = 10.0;
  config.seed = 1;
  try {
    train_rsvd(split.train, config, SnapshotSchedule::every(1, 10));
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.epoch() >= 1);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("RSVD training loss settles over 20-epoch windows on ML-100K") {
  const auto path = testing::ml100k_path();
  if (!path) {
    MESSAGE("ML-100K not found; skipped");
    return;
  }
  const auto split = chronological_leave_one_out(load_ratings(*path, RatingFormat::MovielensTab));
  SgdConfig config;
  config.seed = derive_seed(42, "base");
  const auto result = train_rsvd(split.train, config, SnapshotSchedule::every(10, 90));
  const auto& loss = result.epoch_rmse;
  for (std::size_t start = 0; start + 20 <= loss.size(); ++start)
    for (std::size_t e = start + 1; e < start + 20; ++e) CHECK(loss[e] <= loss[e - 1] + 1e-3);
}

TEST_CASE("FM with zero interactions predicts the bias") {
  FMModel m;
  m.num_users = 3;
  m.num_items = 4;
  m.w0 = 3.5;
  m.w.assign(7, 0.0);
  m.factors = Matrix(7, 4, 0.0);
  for (std::size_t u = 0; u < 3; ++u)
    for (std::size_t i = 0; i < 4; ++i) CHECK(m.predict(u, i) == 3.5);
}

TEST_CASE("FM prediction rule") {
  FMModel m;
  m.num_users = 2;
  m.num_items = 2;
  m.w0 = 1.0;
  m.w = {0.5, -0.5, 0.25, 2.0};
  m.factors = Matrix(4, 2, 0.0);
  m.factors(1, 0) = 2.0;
  m.factors(1, 1) = 1.0;
  m.factors(3, 0) = 0.5;
  m.factors(3, 1) = -1.0;
  // w0 + w_u + w_i + <v_u, v_i>
  CHECK(m.predict(1, 1) == doctest::Approx(1.0 - 0.5 + 2.0 + (1.0 - 1.0)));
  CHECK(m.predict(0, 1) == doctest::Approx(1.0 + 0.5 + 2.0));
}

TEST_CASE("FM snapshots and single-pair overfit") {
  const auto ds = testing::random_ratings(20, 15, 5, 4);
  SgdConfig config;
  config.seed = 9;
  CHECK(train_fm_sgd(ds, config, SnapshotSchedule::every(10, 50)).snapshots.size() == 5);

  const RatingDataset single({{0, 0, 4.0, 1}}, 1, 1, {1.0, 5.0});
  config.reg = 0.0;
  config.lr = 0.05;
  const auto fit = train_fm_sgd(single, config, SnapshotSchedule::every(100, 500));
  CHECK(std::abs(fit.snapshots.back().model.predict(0, 0) - 4.0) < 1e-3);
}

TEST_CASE("FM on implicit feedback stays finite") {
  const auto ds = testing::random_ratings(20, 30, 5, 6);
  SgdConfig config;
  config.seed = 2;
  config.implicit_negatives = 4;
  const auto result = train_fm_sgd(ds, config, SnapshotSchedule::every(5, 10));
  CHECK(result.snapshots.size() == 2);
  for (double v : result.epoch_rmse) CHECK(std::isfinite(v));
}

TEST_CASE("cosine similarity") {
  const std::vector<SparseEntry> a{{0, 1.0}, {3, 2.0}};
  const std::vector<SparseEntry> b{{0, 2.0}, {3, 4.0}};
  const std::vector<SparseEntry> c{{1, 5.0}, {2, 1.0}};
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
  CHECK(cosine_similarity(a, b) == doctest::Approx(1.0));
  CHECK(cosine_similarity(a, c) == 0.0);
  CHECK(cosine_similarity(a, {}) == 0.0);
  // Norms cover the full vectors, not just the overlap.
  const std::vector<SparseEntry> d{{0, 1.0}, {5, 1.0}};
  CHECK(cosine_similarity(a, d) == doctest::Approx(1.0 / (std::sqrt(5.0) * std::sqrt(2.0))));
}

TEST_CASE("KNN similarity table matches dense cosine") {
  const auto ds = testing::random_ratings(15, 12, 6, 8);
  for (KnnKind kind : {KnnKind::User, KnnKind::Item}) {
    const KnnTable table(ds, kind, false);
    std::vector<double> mean;
    const auto rows = centered_rows(ds, kind, mean);
    for (std::size_t a = 0; a < rows.size(); ++a)
      for (std::size_t b = 0; b < rows.size(); ++b) {
        if (a == b) continue;
        CHECK(table.similarity(a, b) == doctest::Approx(dense_cosine(rows[a], rows[b])).epsilon(1e-12));
        CHECK(table.similarity(a, b) >= -1.0);
        CHECK(table.similarity(a, b) <= 1.0);
      }
  }
}

TEST_CASE("identical rating vectors have similarity one") {
  const RatingDataset ds({{0, 0, 5, 1}, {0, 1, 1, 2}, {1, 0, 5, 3}, {1, 1, 1, 4}, {2, 0, 2, 5}}, 3, 2,
                         {1.0, 5.0});
  CHECK(KnnTable(ds, KnnKind::User, false).similarity(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("KNN predictions match a brute-force oracle") {
  const auto ds = testing::random_ratings(15, 12, 6, 10);
  const std::vector<std::size_t> k_list{1, 3, 5};
  for (KnnKind kind : {KnnKind::User, KnnKind::Item})
    for (KnnPrediction rule : {KnnPrediction::MeanCentered, KnnPrediction::WeightedMean}) {
      const KnnTable table(ds, kind, false, rule);
      std::vector<double> out(k_list.size());
      for (std::size_t u = 0; u < 15; ++u)
        for (std::size_t i = 0; i < 12; ++i) {
          table.predict(u, i, k_list, out);
          for (std::size_t s = 0; s < k_list.size(); ++s)
            CHECK(out[s] == doctest::Approx(knn_oracle(ds, kind, k_list[s], rule, u, i)).epsilon(1e-10));
        }
    }
}

TEST_CASE("KNN falls back to the mean when no neighbor rated the target") {
  // Item 2 is rated only by user 0, who is anti-correlated with user 1; item
  // 2 has a single rating, so its centered vector is zero.
  const RatingDataset ds({{0, 0, 5, 1}, {0, 2, 1, 2}, {1, 0, 3, 3}, {1, 1, 5, 4}}, 2, 3, {1.0, 5.0});
  const auto user_models = knn_snapshots(ds, KnnKind::User, {10});
  CHECK(user_models[0].predict(1, 2) == doctest::Approx(4.0));  // user 1's mean
  const auto item_models = knn_snapshots(ds, KnnKind::Item, {10}, false, KnnPrediction::WeightedMean);
  CHECK(item_models[0].predict(1, 2) == doctest::Approx(1.0));  // item 2's mean
  CHECK_THROWS_AS(user_models[0].predict(5, 0), OutOfRangeError);
}

TEST_CASE("KNN snapshot family") {
  const auto ds = testing::random_ratings(12, 10, 4, 12);
  const auto models = knn_snapshots(ds, KnnKind::Item, {10, 20, 30, 40, 50, 60, 70, 80, 90, 100});
  REQUIRE(models.size() == 10);
  for (const auto& m : models) CHECK(m.table == models[0].table);
  // Item neighborhoods here never exceed 9 items, so every k beyond that agrees.
  for (std::size_t u = 0; u < 12; ++u)
    for (std::size_t i = 0; i < 10; ++i) CHECK(models[0].predict(u, i) == models[9].predict(u, i));

  const auto source = make_source(models);
  CHECK(source->tags() == std::vector<std::int64_t>{10, 20, 30, 40, 50, 60, 70, 80, 90, 100});
  std::vector<double> out(10);
  source->predict_all(3, 4, out);
  CHECK(out[2] == models[2].predict(3, 4));
}

TEST_CASE("knn prediction rule names") {
  CHECK(parse_knn_prediction("weighted-mean") == KnnPrediction::WeightedMean);
  CHECK(parse_knn_prediction("mean-centered") == KnnPrediction::MeanCentered);
  CHECK(to_string(KnnPrediction::MeanCentered) == "mean-centered");
  CHECK_THROWS_AS(parse_knn_prediction("median"), ConfigError);
}

TEST_CASE("learned-model sources") {
  const auto ds = testing::random_ratings(10, 8, 4, 13);
  SgdConfig config;
  config.seed = 1;
  auto result = train_rsvd(ds, config, SnapshotSchedule::every(2, 6));
  const auto expected = result.snapshots[1].model.predict(2, 3);
  const auto source = make_source(std::move(result.snapshots));
  CHECK(source->tags() == std::vector<std::int64_t>{2, 4, 6});
  CHECK(source->num_users() == 10);
  std::vector<double> out(3);
  source->predict_all(2, 3, out);
  CHECK(out[1] == expected);
}
