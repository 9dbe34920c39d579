// Helpers shared by the unit tests and the acceptance runner: independent
// Bessel oracles, finite differences and a random-voxel generator.
#pragma once

#include "riceem/scheme.hpp"
#include "riceem/synth.hpp"
#include "riceem/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>

namespace riceem::testing {

/// I0(x) and I1(x) by direct power series in long double; fine for x <= 60.
inline long double series_i0(long double x) {
  const long double q = x * x / 4.0L;
  long double term = 1.0L, sum = 1.0L;
  for (int k = 1; k < 400; ++k) {
    term *= q / (static_cast<long double>(k) * k);
    sum += term;
    if (term < sum * 1e-21L) break;
  }
  return sum;
}

inline long double series_i1(long double x) {
  const long double q = x * x / 4.0L;
  long double term = x / 2.0L, sum = term;
  for (int k = 1; k < 400; ++k) {
    term *= q / (static_cast<long double>(k) * (k + 1));
    sum += term;
    if (term < sum * 1e-21L) break;
  }
  return sum;
}

/// Hankel expansion of log I0 and I1/I0 for large x, summed in long double
/// until the terms stop shrinking. Independent of the library's branch.
inline long double hankel_log_i0(long double x) {
  long double term = 1.0L, sum = 1.0L;
  for (int k = 1; k < 60; ++k) {
    const long double next = term * (2 * k - 1) * (2 * k - 1) / (8.0L * k * x);
    if (std::fabs(next) > std::fabs(term)) break;
    term = next;
    sum += term;
    if (std::fabs(term) < 1e-22L) break;
  }
  return x - 0.5L * std::log(2.0L * 3.14159265358979323846264338327950288L * x) + std::log(sum);
}

inline long double hankel_i1_over_i0(long double x) {
  long double t0 = 1.0L, s0 = 1.0L, t1 = 1.0L, s1 = 1.0L;
  for (int k = 1; k < 60; ++k) {
    const long double n0 = t0 * (2 * k - 1) * (2 * k - 1) / (8.0L * k * x);
    const long double n1 = -t1 * (4.0L - (2 * k - 1) * (2 * k - 1)) / (8.0L * k * x);
    if (std::fabs(n0) > std::fabs(t0) || std::fabs(n1) > std::fabs(t1)) break;
    t0 = n0;
    t1 = n1;
    s0 += t0;
    s1 += t1;
    if (std::fabs(t0) + std::fabs(t1) < 1e-22L) break;
  }
  return s1 / s0;
}

/// Oracle values combining the series (x <= 40) and the expansion (above).
inline double oracle_log_i0(double x) {
  return x <= 40.0 ? static_cast<double>(std::log(series_i0(x))) : static_cast<double>(hankel_log_i0(x));
}

inline double oracle_ratio(double x) {
  if (x == 0.0) return 0.0;
  return x <= 40.0 ? static_cast<double>(series_i1(x) / series_i0(x)) : static_cast<double>(hankel_i1_over_i0(x));
}

/// Central difference with one Richardson step: error O(h^4).
inline double richardson_derivative(const std::function<double(double)>& f, double x, double h) {
  const double d1 = (f(x + h) - f(x - h)) / (2 * h);
  const double d2 = (f(x + h / 2) - f(x - h / 2)) / h;
  return (4 * d2 - d1) / 3;
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

inline double rel_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

/// Random symmetric positive definite order-2 tensor with eigenvalues in
/// [lo, hi] mm^2/s and a random orientation.
inline TensorParams random_tensor2(std::mt19937_64& rng, double lo = 2e-4, double hi = 2e-3) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Matrix3d a;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) a(i, j) = n(rng);
  const Eigen::Matrix3d q = Eigen::HouseholderQR<Eigen::Matrix3d>(a).householderQ();
  const Eigen::Vector3d lambda(lo + (hi - lo) * u(rng), lo + (hi - lo) * u(rng), lo + (hi - lo) * u(rng));
  return tensor_from_matrix(q * lambda.asDiagonal() * q.transpose());
}

/// Order-4 tensor: a lifted order-2 background plus a positive quartic
/// product term, so it is positive by construction.
inline TensorParams random_tensor4(std::mt19937_64& rng) {
  const TensorParams base = lift_to_order4(random_tensor2(rng, 2e-4, 1.2e-3));
  const TensorParams a = random_tensor2(rng, 0.2, 1.0);
  const TensorParams b = random_tensor2(rng, 0.2, 1.0);
  TensorParams q = quartic_product(a, b);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  q.theta *= 1e-3 * u(rng);
  return TensorParams(TensorOrder::Four, base.theta + q.theta);
}

struct RandomVoxel {
  AcquisitionScheme scheme;
  Design design;
  GroundTruth truth;
  Eigen::VectorXd y;
  double snr = 0.0;
};

struct VoxelRanges {
  double snr_lo = 2.0;
  double snr_hi = 50.0;
  int m_lo = 24;
  int m_hi = 1440;
};

/// Random scheme (size in [m_lo, m_hi]), tensor and SNR (log-uniform), with
/// Rician data drawn from the result.
inline RandomVoxel random_voxel(std::mt19937_64& rng, TensorOrder order, const VoxelRanges& r = {}) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int d = coefficient_count(order);
  int dirs = 0, knots = 0, reps = 0;
  for (;;) {
    dirs = d + static_cast<int>(u(rng) * (33 - d));
    knots = 3 + static_cast<int>(u(rng) * 13);
    reps = 1 + static_cast<int>(u(rng) * 3);
    const int m = dirs * knots * reps;
    if (m >= r.m_lo && m <= r.m_hi) break;
  }
  RandomVoxel v;
  v.scheme = make_scheme(dirs, geometric_knots(knots, 100.0, 2000.0 + 12000.0 * u(rng)), reps);
  v.design = make_design(v.scheme, order);
  v.truth.theta = order == TensorOrder::Two ? random_tensor2(rng) : random_tensor4(rng);
  v.snr = r.snr_lo * std::pow(r.snr_hi / r.snr_lo, u(rng));
  v.truth.s0 = 100.0 + 400.0 * u(rng);
  v.truth.sigma_sq = (v.truth.s0 / v.snr) * (v.truth.s0 / v.snr);
  v.truth.seed = rng();
  v.y = synthesize(v.scheme, v.truth);
  return v;
}

}  // namespace riceem::testing
