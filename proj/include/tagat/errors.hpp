#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tagat {

/// Base class for every error thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeMismatch : Error {
  using Error::Error;
};

struct ZeroVarianceColumn : Error {
  std::size_t column;
  explicit ZeroVarianceColumn(std::size_t col)
      : Error("zero-variance column at index " + std::to_string(col)), column(col) {}
};

struct FactorizationFailed : Error {
  using Error::Error;
};

struct NonpositiveDiagonal : Error {
  std::size_t index;
  explicit NonpositiveDiagonal(std::size_t i)
      : Error("nonpositive precision diagonal at index " + std::to_string(i)), index(i) {}
};

struct NonScalarLoss : Error {
  using Error::Error;
};

struct IndexOutOfRange : Error {
  using Error::Error;
};

struct UnknownTask : Error {
  int task;
  explicit UnknownTask(int k) : Error("unknown task index " + std::to_string(k)), task(k) {}
};

struct EmptyBatch : Error {
  using Error::Error;
};

struct ZeroNormRow : Error {
  std::size_t row;
  explicit ZeroNormRow(std::size_t k)
      : Error("memory bank row " + std::to_string(k) + " has zero norm"), row(k) {}
};

struct NonPositiveEdgeWeight : Error {
  std::size_t i, j;
  double w;
  NonPositiveEdgeWeight(std::size_t i_, std::size_t j_, double w_)
      : Error("retained edge (" + std::to_string(i_) + "," + std::to_string(j_) +
              ") has non-positive weight " + std::to_string(w_) +
              "; density exceeds the positive partial-correlation count"),
        i(i_), j(j_), w(w_) {}
};

struct EmptyDataset : Error {
  using Error::Error;
};

struct NonFiniteLoss : Error {
  std::size_t step;
  explicit NonFiniteLoss(std::size_t s, const std::string& what)
      : Error("non-finite loss at step " + std::to_string(s) + ": " + what), step(s) {}
};

struct ParseError : Error {
  std::size_t line, col;
  ParseError(std::size_t line_, std::size_t col_, const std::string& what)
      : Error("parse error at line " + std::to_string(line_) + ", column " +
              std::to_string(col_) + ": " + what),
        line(line_), col(col_) {}
};

struct NonFiniteValue : Error {
  std::size_t line, col;
  NonFiniteValue(std::size_t line_, std::size_t col_)
      : Error("non-finite value at line " + std::to_string(line_) + ", column " +
              std::to_string(col_)),
        line(line_), col(col_) {}
};

struct VersionMismatch : Error {
  using Error::Error;
};

struct CorruptPayload : Error {
  using Error::Error;
};

}  // namespace tagat
