// Evaluation statistics for comparing estimators against a known truth:
// fitted SNR curves, MSE tables and fitted-signal curves.
#pragma once

#include "riceem/baselines.hpp"
#include "riceem/em.hpp"
#include "riceem/scheme.hpp"
#include "riceem/synth.hpp"
#include "riceem/tensor.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace riceem {

/// Point estimate of (theta, S0^2, sigma^2), whatever produced it.
struct Estimate {
  TensorParams theta;
  double s0_sq = 0.0;
  double sigma_sq = 0.0;

  static Estimate from(const FitReport& r) { return {r.theta, r.s0_sq, r.sigma_sq}; }
  static Estimate from(const BaselineReport& r) { return {r.theta, r.s0_sq, r.sigma_sq}; }
  static Estimate from(const GroundTruth& t) { return {t.theta, t.s0 * t.s0, t.sigma_sq}; }
};

struct SnrCurve {
  std::vector<double> knots;
  std::vector<double> snr;
};

/// Per knot, the mean over directions of S0 exp(Z theta) / sigma.
SnrCurve snr_curve(const Estimate& estimate, const AcquisitionScheme& scheme);

/// Per knot, mean(Y) / sd(Y) over all rows at that knot (diagnostic only).
SnrCurve raw_snr_curve(const AcquisitionScheme& scheme, const Eigen::VectorXd& y);

/// S0 exp(Z(b, g) theta) for every direction g of the scheme. Throws
/// std::invalid_argument listing the knots when b is not one of them.
std::vector<double> signal_curve(const Estimate& estimate, const AcquisitionScheme& scheme, double b);

struct FitRecord {
  std::string method;
  Estimate estimate;
  GroundTruth truth;
};

struct MethodMse {
  std::string method;
  int count = 0;
  Eigen::VectorXd theta_mse;    // per coefficient
  double theta_mse_mean = 0.0;  // unweighted mean over coefficients
  double sigma_sq_mse = 0.0;
  std::vector<double> signal_mse;  // per knot, averaged over directions
};

struct MseTable {
  std::vector<double> knots;
  std::vector<MethodMse> methods;  // sorted by method name

  const MethodMse* find(const std::string& method) const;
};

/// Groups records by method. Every record must carry the same generating
/// parameters (std::invalid_argument otherwise) and the same tensor order.
/// The result does not depend on the order of `records`.
MseTable mse_report(const std::vector<FitRecord>& records, const AcquisitionScheme& scheme);

/// sigma^2-MSE of `numerator` over that of `denominator`, when both are present.
std::optional<double> sigma_mse_ratio(const MseTable& table, const std::string& numerator,
                                      const std::string& denominator);

}  // namespace riceem
