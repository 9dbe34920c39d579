#pragma once

#include "riceem/tensor.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace riceem {

/// Factorial acquisition scheme: every direction at every knot, the whole
/// block repeated. Rows are ordered repetition-major, then knot, then
/// direction, so the first directions().size() * knots().size() rows form
/// one complete repetition.
class AcquisitionScheme {
 public:
  AcquisitionScheme() = default;
  AcquisitionScheme(std::vector<Vec3> directions, std::vector<double> knots, int repetitions);

  const std::vector<Vec3>& directions() const { return directions_; }
  const std::vector<double>& knots() const { return knots_; }
  int repetitions() const { return repetitions_; }
  const std::vector<GradientControl>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

  std::size_t knot_of_row(std::size_t row) const;
  std::size_t direction_of_row(std::size_t row) const;
  std::size_t repetition_of_row(std::size_t row) const;

  friend bool operator==(const AcquisitionScheme&, const AcquisitionScheme&) = default;

 private:
  std::vector<Vec3> directions_;
  std::vector<double> knots_;
  int repetitions_ = 0;
  std::vector<GradientControl> rows_;
};

/// Design matrix of a scheme for one tensor order, with the b-value of each row.
struct Design {
  TensorOrder order = TensorOrder::Two;
  Eigen::MatrixXd z;  // m x d
  Eigen::VectorXd b;  // m

  Eigen::Index rows() const { return z.rows(); }
  Eigen::Index cols() const { return z.cols(); }
};

Design make_design(const AcquisitionScheme& scheme, TensorOrder order);
Design make_design(std::span<const GradientControl> rows, TensorOrder order);

}  // namespace riceem
