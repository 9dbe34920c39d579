// Log-linear regression of log Y on (1, Z), shared by the EM initializer and
// the LS/WLS baselines.
#pragma once

#include "riceem/scheme.hpp"

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <vector>

namespace riceem {

class RankDeficientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LogLinearFit {
  double log_s0 = 0.0;
  Eigen::VectorXd theta;
  std::vector<Eigen::Index> rows;  // rows of the design that entered the fit
  Eigen::VectorXd fitted_log;      // per used row
  Eigen::VectorXd residuals;       // log Y - fitted_log, per used row
};

/// Rows with Y > 0 and, when given, b <= cutoff.
std::vector<Eigen::Index> usable_rows(const Design& design, const Eigen::VectorXd& y,
                                      std::optional<double> b_cutoff);

/// (Weighted) least squares over `rows`. Throws RankDeficientError when the
/// (1, Z) design restricted to `rows` has rank < d + 1.
LogLinearFit log_linear_fit(const Design& design, const Eigen::VectorXd& y,
                            const std::vector<Eigen::Index>& rows,
                            const Eigen::VectorXd* weights = nullptr);

/// LS pass followed by `passes` reweighted solves with weights proportional
/// to the squared fitted signal (normalized to a unit maximum).
LogLinearFit wls_fit(const Design& design, const Eigen::VectorXd& y,
                     const std::vector<Eigen::Index>& rows, int passes);

/// Delta-method noise variance: residual variance of the log fit times the
/// squared geometric mean of the fitted signal.
double delta_method_sigma_sq(const LogLinearFit& fit, int n_params);

}  // namespace riceem
