#pragma once

#include <Eigen/Dense>

namespace nvmag {

/// Splittings S[i][j] (MHz): one row per bias field, four NV axes per row.
/// Rows coming from spectra are unlabeled (sorted by descending splitting).
struct SplittingTable {
  Eigen::MatrixX4d s;
  Eigen::MatrixX4d sigma;

  SplittingTable() = default;
  explicit SplittingTable(Eigen::Index rows)
      : s(Eigen::MatrixX4d::Zero(rows, 4)), sigma(Eigen::MatrixX4d::Zero(rows, 4)) {}

  Eigen::Index rows() const { return s.rows(); }

  /// Throws kInvalidInput on shape mismatch, negative or non-finite values.
  void validate() const;
};

}  // namespace nvmag
