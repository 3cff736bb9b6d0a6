#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace randla {

using Real = double;
using Index = Eigen::Index;

template <typename Scalar>
using Points3 = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;

template <typename Scalar>
using MatrixR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Coords = Points3<Real>;
using Matrix = MatrixR<Real>;
using Vector = VectorX<Real>;
using IndexMatrix = MatrixR<std::int32_t>;
using IndexList = std::vector<std::int32_t>;

/// Bad arguments or malformed input detected before any work is done.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input file could not be parsed; the message names the offending record.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numeric failure (non-finite values) surfaced at an operation boundary.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

}  // namespace randla
