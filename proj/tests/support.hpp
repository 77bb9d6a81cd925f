#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "neuse/dataset.hpp"

namespace neuse::testing {

// ML-100K u.data: $NEUSE_ML100K, else the build-time default; absent when
// neither exists.
inline std::optional<std::filesystem::path> ml100k_path() {
  if (const char* env = std::getenv("NEUSE_ML100K"); env && *env) {
    if (std::filesystem::exists(env)) return std::filesystem::path(env);
    return std::nullopt;
  }
#ifdef NEUSE_ML100K_DEFAULT
  if (std::filesystem::exists(NEUSE_ML100K_DEFAULT)) return std::filesystem::path(NEUSE_ML100K_DEFAULT);
#endif
  return std::nullopt;
}

// Random ratings in {1..5}: each user rates `per_user` distinct items with
// distinct timestamps.
inline RatingDataset random_ratings(std::size_t users, std::size_t items, std::size_t per_user,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Interaction> rows;
  std::vector<std::size_t> pool(items);
  std::int64_t t = 0;
  for (std::size_t u = 0; u < users; ++u) {
    for (std::size_t i = 0; i < items; ++i) pool[i] = i;
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t k = 0; k < per_user; ++k) {
      const double r = static_cast<double>(1 + rng() % 5);
      rows.push_back({u, pool[k], r, ++t});
    }
  }
  return RatingDataset(std::move(rows), users, items, {1.0, 5.0});
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("neuse_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// ||a - b|| / max(||a|| + ||b||, floor)
inline double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-10) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff += (a[k] - b[k]) * (a[k] - b[k]);
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nb), floor);
}

}  // namespace neuse::testing
