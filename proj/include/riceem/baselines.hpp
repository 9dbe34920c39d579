// Comparison estimators: log-linear LS and WLS (optionally on the b <= 1000
// subset) and direct maximization of the Rician log-likelihood.
#pragma once

#include "riceem/em.hpp"
#include "riceem/scheme.hpp"
#include "riceem/tensor.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <string_view>

namespace riceem {

enum class BaselineMethod { LS, WLS, LSTruncated, WLSTruncated, RicianDirect };

std::string_view to_string(BaselineMethod method);

inline constexpr double kTruncationCutoff = 1000.0;

struct BaselineReport {
  BaselineMethod method = BaselineMethod::LS;
  TensorParams theta;
  double s0_sq = 0.0;
  double sigma_sq = 0.0;
  bool converged = false;
  int iterations = 0;
  double loglik = 0.0;  // Rician log-likelihood at the estimate
  bool degenerate = false;  // every magnitude was zero
};

/// Ordinary LS of log Y on (1, Z) over rows with Y > 0 and b <= cutoff (all
/// rows when no cutoff). sigma^2 by the delta method. Closed form, so
/// converged is always set and iterations is 1.
BaselineReport fit_ls(const Design& design, const Eigen::VectorXd& y,
                      std::optional<double> b_cutoff = std::nullopt);

/// LS followed by two passes reweighted by the squared fitted signal.
BaselineReport fit_wls(const Design& design, const Eigen::VectorXd& y,
                       std::optional<double> b_cutoff = std::nullopt);

/// Half the smallest positive magnitude; throws if none is positive.
double default_censor_floor(const Eigen::VectorXd& y);

struct DirectGradient {
  Eigen::VectorXd theta;
  double s0_sq = 0.0;
  double sigma_sq = 0.0;
};

/// Sum of Rician log-densities. A zero magnitude is read as "below y_min" and
/// contributes log P(Y <= y_min); y_min is only consulted when such rows exist.
double rician_direct_loglik(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& theta, double s0_sq, double sigma_sq,
                            double y_min = 0.0);

DirectGradient rician_direct_gradient(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                      const Eigen::VectorXd& theta, double s0_sq,
                                      double sigma_sq, double y_min = 0.0);

/// Exact Hessian of rician_direct_loglik in theta.
Eigen::MatrixXd rician_direct_hessian_theta(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                            const Eigen::VectorXd& theta, double s0_sq,
                                            double sigma_sq, double y_min = 0.0);

/// High-SNR approximation sum_i Z_i' Z_i ((S0^2 / sigma^2) exp(2 Z_i theta) - 1/2).
Eigen::MatrixXd rician_approx_fisher(const Eigen::MatrixXd& z, const Eigen::VectorXd& theta,
                                     double s0_sq, double sigma_sq);

struct DirectOptions {
  std::optional<double> y_min;  // default_censor_floor(y) when unset
  bool use_approx_fisher = false;
  int max_iters = 500;
  double tol = 1e-6;            // Newton decrement
  FitOptions init;              // initializer settings (truncated WLS by default)
};

BaselineReport fit_rician_direct(const Design& design, const Eigen::VectorXd& y,
                                 const DirectOptions& options = {});

}  // namespace riceem
