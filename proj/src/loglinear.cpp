#include "riceem/loglinear.hpp"

#include <cmath>
#include <string>

namespace riceem {

std::vector<Eigen::Index> usable_rows(const Design& design, const Eigen::VectorXd& y,
                                      std::optional<double> b_cutoff) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (!(y[i] > 0.0)) continue;
    if (b_cutoff && design.b[i] > *b_cutoff) continue;
    rows.push_back(i);
  }
  return rows;
}

LogLinearFit log_linear_fit(const Design& design, const Eigen::VectorXd& y,
                            const std::vector<Eigen::Index>& rows, const Eigen::VectorXd* weights) {
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index p = design.cols() + 1;
  if (n < p) {
    throw RankDeficientError("log-linear fit needs at least " + std::to_string(p) +
                             " rows for " + std::to_string(p) + " columns, got " +
                             std::to_string(n));
  }
  Eigen::MatrixXd a(n, p);
  Eigen::VectorXd rhs(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index i = rows[static_cast<std::size_t>(k)];
    const double w = weights ? std::sqrt((*weights)[k]) : 1.0;
    a(k, 0) = w;
    a.row(k).tail(p - 1) = w * design.z.row(i);
    rhs[k] = w * std::log(y[i]);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < p) {
    throw RankDeficientError("log-linear design is rank deficient: rank " +
                             std::to_string(qr.rank()) + " < " + std::to_string(p) +
                             " columns over " + std::to_string(n) + " rows");
  }
  const Eigen::VectorXd beta = qr.solve(rhs);

  LogLinearFit fit;
  fit.log_s0 = beta[0];
  fit.theta = beta.tail(p - 1);
  fit.rows = rows;
  fit.fitted_log.resize(n);
  fit.residuals.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index i = rows[static_cast<std::size_t>(k)];
    fit.fitted_log[k] = beta[0] + design.z.row(i).dot(fit.theta);
    fit.residuals[k] = std::log(y[i]) - fit.fitted_log[k];
  }
  return fit;
}

LogLinearFit wls_fit(const Design& design, const Eigen::VectorXd& y,
                     const std::vector<Eigen::Index>& rows, int passes) {
  LogLinearFit fit = log_linear_fit(design, y, rows);
  for (int pass = 0; pass < passes; ++pass) {
    // Squared fitted signal, scaled so the largest weight is one.
    const double top = fit.fitted_log.maxCoeff();
    const Eigen::VectorXd w = (2.0 * (fit.fitted_log.array() - top)).exp().matrix();
    fit = log_linear_fit(design, y, rows, &w);
  }
  return fit;
}

double delta_method_sigma_sq(const LogLinearFit& fit, int n_params) {
  const auto n = fit.residuals.size();
  const double dof = n > n_params ? static_cast<double>(n - n_params) : static_cast<double>(n);
  const double var = fit.residuals.squaredNorm() / dof;
  const double gm_sq = std::exp(2.0 * fit.fitted_log.mean());
  return var * gm_sq;
}

}  // namespace riceem
