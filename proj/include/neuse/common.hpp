#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace neuse {

// Error hierarchy. Every module throws one of these; the CLI maps them to a
// non-zero exit code with the message.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};
class DatasetError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class FormatError : public Error {
 public:
  using Error::Error;
};
class NumericError : public Error {
 public:
  using Error::Error;
};
class OutOfRangeError : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  explicit TrainingDiverged(std::size_t epoch)
      : Error("training diverged at epoch " + std::to_string(epoch)), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

enum class Task { Rating, Ranking };

std::string_view to_string(Task task);
Task parse_task(std::string_view text);

// Dense row-major matrix of doubles. Vectors are 1 x n matrices when they
// need to live alongside other parameter tensors.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::span<double> flat() { return values_; }
  std::span<const double> flat() const { return values_; }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

// A mutable view of one named parameter tensor; used by the optimizer,
// serialization and gradient checks to walk any parameter pack uniformly.
struct NamedTensor {
  std::string name;
  Matrix* value;
};

struct NamedConstTensor {
  std::string name;
  const Matrix* value;
};

double dot(std::span<const double> a, std::span<const double> b);

// In-place numerically stable softmax.
void softmax_inplace(std::span<double> values);

bool all_finite(std::span<const double> values);

// Named sub-seed derived from a root seed, so that each consumer of
// randomness (split, negatives, init, shuffling, ...) gets an independent
// stream that does not shift when another consumer changes.
std::uint64_t derive_seed(std::uint64_t root, std::string_view name);

}  // namespace neuse
