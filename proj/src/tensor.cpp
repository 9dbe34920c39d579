#include "riceem/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace riceem {

namespace {

constexpr Monomial kOrder2[] = {
    {{2, 0, 0}, 1.0}, {{0, 2, 0}, 1.0}, {{0, 0, 2}, 1.0},
    {{1, 1, 0}, 2.0}, {{1, 0, 1}, 2.0}, {{0, 1, 1}, 2.0},
};

constexpr Monomial kOrder4[] = {
    {{4, 0, 0}, 1.0},  {{3, 1, 0}, 4.0},  {{3, 0, 1}, 4.0}, {{2, 2, 0}, 6.0},
    {{2, 1, 1}, 12.0}, {{2, 0, 2}, 6.0},  {{1, 3, 0}, 4.0}, {{1, 2, 1}, 12.0},
    {{1, 1, 2}, 12.0}, {{1, 0, 3}, 4.0},  {{0, 4, 0}, 1.0}, {{0, 3, 1}, 4.0},
    {{0, 2, 2}, 6.0},  {{0, 1, 3}, 4.0},  {{0, 0, 4}, 1.0},
};

constexpr double kUnitTolerance = 1e-9;

double monomial_value(const std::array<int, 3>& e, const Vec3& g) {
  double v = 1.0;
  for (int axis = 0; axis < 3; ++axis) {
    for (int k = 0; k < e[axis]; ++k) v *= g[axis];
  }
  return v;
}

void require_unit(const Vec3& g, const char* what) {
  const double n = g.norm();
  if (!std::isfinite(n) || std::abs(n - 1.0) > kUnitTolerance) {
    throw std::domain_error(std::string(what) + ": gradient direction must have unit length, |g| = " +
                            std::to_string(n));
  }
}

int monomial_index(TensorOrder order, const std::array<int, 3>& e) {
  const auto table = monomials(order);
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table[i].exponent == e) return static_cast<int>(i);
  }
  throw std::logic_error("monomial_index: exponent not in table");
}

// Unit eigenvector for an eigenvalue of multiplicity one.
Vec3 eigenvector_isolated(const Eigen::Matrix3d& a, double lambda) {
  const Vec3 r0(a(0, 0) - lambda, a(0, 1), a(0, 2));
  const Vec3 r1(a(0, 1), a(1, 1) - lambda, a(1, 2));
  const Vec3 r2(a(0, 2), a(1, 2), a(2, 2) - lambda);
  const Vec3 c[3] = {r0.cross(r1), r0.cross(r2), r1.cross(r2)};
  int best = 0;
  double best_norm = c[0].squaredNorm();
  for (int i = 1; i < 3; ++i) {
    const double n = c[i].squaredNorm();
    if (n > best_norm) {
      best = i;
      best_norm = n;
    }
  }
  if (best_norm == 0.0) return Vec3::UnitX();
  return c[best] / std::sqrt(best_norm);
}

// Eigenvector for `lambda` restricted to the plane orthogonal to `w`.
Vec3 eigenvector_in_complement(const Eigen::Matrix3d& a, const Vec3& w, double lambda) {
  Vec3 u;
  if (std::abs(w[0]) > std::abs(w[1])) {
    const double inv = 1.0 / std::hypot(w[0], w[2]);
    u = Vec3(-w[2] * inv, 0.0, w[0] * inv);
  } else {
    const double inv = 1.0 / std::hypot(w[1], w[2]);
    u = Vec3(0.0, w[2] * inv, -w[1] * inv);
  }
  const Vec3 v = w.cross(u);
  const Vec3 au = a * u;
  const Vec3 av = a * v;
  double m00 = u.dot(au) - lambda;
  double m01 = u.dot(av);
  double m11 = v.dot(av) - lambda;
  const double a00 = std::abs(m00);
  const double a01 = std::abs(m01);
  const double a11 = std::abs(m11);
  if (a00 >= a11) {
    if (std::max(a00, a01) == 0.0) return u;
    if (a00 >= a01) {
      m01 /= m00;
      m00 = 1.0 / std::sqrt(1.0 + m01 * m01);
      m01 *= m00;
    } else {
      m00 /= m01;
      m01 = 1.0 / std::sqrt(1.0 + m00 * m00);
      m00 *= m01;
    }
    return (m01 * u - m00 * v).normalized();
  }
  if (std::max(a11, a01) == 0.0) return u;
  if (a11 >= a01) {
    m01 /= m11;
    m11 = 1.0 / std::sqrt(1.0 + m01 * m01);
    m01 *= m11;
  } else {
    m11 /= m01;
    m01 = 1.0 / std::sqrt(1.0 + m11 * m11);
    m11 *= m01;
  }
  return (m11 * u - m01 * v).normalized();
}

}  // namespace

int coefficient_count(TensorOrder order) { return order == TensorOrder::Two ? 6 : 15; }

TensorOrder tensor_order_from_int(int order) {
  if (order == 2) return TensorOrder::Two;
  if (order == 4) return TensorOrder::Four;
  throw std::invalid_argument("tensor order must be 2 or 4, got " + std::to_string(order));
}

void GradientControl::validate() const {
  if (!std::isfinite(b) || b < 0.0) {
    throw std::domain_error("GradientControl: b must be finite and >= 0");
  }
  if (b > 0.0) require_unit(g, "GradientControl");
}

std::span<const Monomial> monomials(TensorOrder order) {
  if (order == TensorOrder::Two) return kOrder2;
  return kOrder4;
}

TensorParams::TensorParams(TensorOrder o, Eigen::VectorXd t) : order(o), theta(std::move(t)) {
  validate();
}

void TensorParams::validate() const {
  if (theta.size() != coefficient_count(order)) {
    throw std::invalid_argument("TensorParams: order " + std::to_string(static_cast<int>(order)) +
                                " needs " + std::to_string(coefficient_count(order)) +
                                " coefficients, got " + std::to_string(theta.size()));
  }
  if (!theta.allFinite()) throw std::invalid_argument("TensorParams: non-finite coefficient");
}

Eigen::VectorXd design_row(const GradientControl& control, TensorOrder order) {
  control.validate();
  const auto table = monomials(order);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(table.size()));
  if (control.b == 0.0) return z;
  for (std::size_t j = 0; j < table.size(); ++j) {
    z[static_cast<Eigen::Index>(j)] =
        -control.b * table[j].multiplicity * monomial_value(table[j].exponent, control.g);
  }
  return z;
}

Eigen::MatrixXd design_matrix(std::span<const GradientControl> rows, TensorOrder order) {
  Eigen::MatrixXd z(static_cast<Eigen::Index>(rows.size()), coefficient_count(order));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    z.row(static_cast<Eigen::Index>(i)) = design_row(rows[i], order).transpose();
  }
  return z;
}

double diffusivity(const TensorParams& tensor, const Vec3& g) {
  require_unit(g, "diffusivity");
  return -design_row(GradientControl{1.0, g}, tensor.order).dot(tensor.theta);
}

Eigen::Matrix3d tensor_matrix(const TensorParams& tensor) {
  if (tensor.order != TensorOrder::Two) {
    throw std::invalid_argument("tensor_matrix: order-2 tensor required");
  }
  const auto& t = tensor.theta;
  Eigen::Matrix3d d;
  d << t[0], t[3], t[4],
       t[3], t[1], t[5],
       t[4], t[5], t[2];
  return d;
}

TensorParams tensor_from_matrix(const Eigen::Matrix3d& d) {
  Eigen::VectorXd t(6);
  t << d(0, 0), d(1, 1), d(2, 2), 0.5 * (d(0, 1) + d(1, 0)), 0.5 * (d(0, 2) + d(2, 0)),
      0.5 * (d(1, 2) + d(2, 1));
  return TensorParams(TensorOrder::Two, std::move(t));
}

TensorParams quartic_product(const TensorParams& a, const TensorParams& b) {
  if (a.order != TensorOrder::Two || b.order != TensorOrder::Two) {
    throw std::invalid_argument("quartic_product: order-2 factors required");
  }
  Eigen::VectorXd coeff = Eigen::VectorXd::Zero(15);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      std::array<int, 3> e{};
      for (int axis = 0; axis < 3; ++axis) {
        e[axis] = kOrder2[i].exponent[axis] + kOrder2[j].exponent[axis];
      }
      coeff[monomial_index(TensorOrder::Four, e)] += kOrder2[i].multiplicity * a.theta[i] *
                                                     kOrder2[j].multiplicity * b.theta[j];
    }
  }
  for (int k = 0; k < 15; ++k) coeff[k] /= kOrder4[k].multiplicity;
  return TensorParams(TensorOrder::Four, std::move(coeff));
}

TensorParams lift_to_order4(const TensorParams& order2) {
  return quartic_product(order2, tensor_from_matrix(Eigen::Matrix3d::Identity()));
}

EigenDecomposition eigen_symmetric3(const Eigen::Matrix3d& d) {
  EigenDecomposition out;
  const double scale = d.cwiseAbs().maxCoeff();
  if (scale == 0.0 || !std::isfinite(scale)) {
    if (!std::isfinite(scale)) throw std::domain_error("eigen_symmetric3: non-finite matrix");
    return out;
  }
  const Eigen::Matrix3d a = 0.5 * (d + d.transpose()) / scale;
  const double off = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);

  std::array<double, 3> val{};  // ascending
  std::array<Vec3, 3> vec;
  if (off == 0.0) {
    std::array<int, 3> idx{0, 1, 2};
    std::sort(idx.begin(), idx.end(), [&](int i, int j) { return a(i, i) < a(j, j); });
    for (int k = 0; k < 3; ++k) {
      val[k] = a(idx[k], idx[k]);
      vec[k] = Vec3::Unit(idx[k]);
    }
  } else {
    const double q = a.trace() / 3.0;
    const Eigen::Matrix3d shifted = a - q * Eigen::Matrix3d::Identity();
    const double p = std::sqrt((shifted.diagonal().squaredNorm() + 2.0 * off) / 6.0);
    const double half_det = std::clamp(0.5 * (shifted / p).determinant(), -1.0, 1.0);
    const double angle = std::acos(half_det) / 3.0;
    const double two_thirds_pi = 2.0 * std::numbers::pi / 3.0;
    const double beta2 = 2.0 * std::cos(angle);
    const double beta0 = 2.0 * std::cos(angle + two_thirds_pi);
    const double beta1 = -(beta0 + beta2);
    val = {q + p * beta0, q + p * beta1, q + p * beta2};
    // Start from the eigenvalue farther from the middle one; the remaining
    // pair is resolved inside the orthogonal complement, and the third
    // vector is the cross product, which keeps the frame orthonormal.
    if (half_det >= 0.0) {
      vec[2] = eigenvector_isolated(a, val[2]);
      vec[1] = eigenvector_in_complement(a, vec[2], val[1]);
      vec[0] = vec[1].cross(vec[2]).normalized();
    } else {
      vec[0] = eigenvector_isolated(a, val[0]);
      vec[1] = eigenvector_in_complement(a, vec[0], val[1]);
      vec[2] = vec[0].cross(vec[1]).normalized();
    }
  }
  for (int k = 0; k < 3; ++k) {
    out.values[k] = val[2 - k] * scale;
    out.vectors.col(k) = vec[2 - k];
  }
  return out;
}

EigenDecomposition eigen_2nd_order(const TensorParams& tensor) {
  return eigen_symmetric3(tensor_matrix(tensor));
}

double fractional_anisotropy(const EigenDecomposition& eig) {
  const auto& l = eig.values;
  const double sum_sq = l[0] * l[0] + l[1] * l[1] + l[2] * l[2];
  if (!(sum_sq > 0.0)) {
    throw std::domain_error("fractional_anisotropy: all eigenvalues are zero");
  }
  const double mean = (l[0] + l[1] + l[2]) / 3.0;
  const double dev = (l[0] - mean) * (l[0] - mean) + (l[1] - mean) * (l[1] - mean) +
                     (l[2] - mean) * (l[2] - mean);
  return std::clamp(std::sqrt(3.0 * dev / (2.0 * sum_sq)), 0.0, 1.0);
}

double mean_diffusivity(const TensorParams& tensor) {
  tensor.validate();
  const auto& t = tensor.theta;
  if (tensor.order == TensorOrder::Two) return (t[0] + t[1] + t[2]) / 3.0;
  const auto at = [&](int a, int b, int c) { return t[monomial_index(TensorOrder::Four, {a, b, c})]; };
  return (at(4, 0, 0) + at(2, 2, 0) + at(2, 0, 2) + 2.0 * at(0, 4, 0) + 2.0 * at(0, 0, 4) +
          2.0 * at(0, 2, 2)) /
         5.0;
}

std::vector<Vec3> sphere_grid(int count) {
  if (count < 1) throw std::invalid_argument("sphere_grid: count must be >= 1");
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / count;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    pts.emplace_back(Vec3(r * std::cos(phi), r * std::sin(phi), z).normalized());
  }
  return pts;
}

PositivityReport positivity_check(const TensorParams& tensor, int grid_size) {
  tensor.validate();
  PositivityReport report;
  if (tensor.order == TensorOrder::Two) {
    const auto eig = eigen_2nd_order(tensor);
    report.min_eigenvalue = eig.values[2];
    report.min_diffusivity = eig.values[2];
    report.direction = eig.vectors.col(2);
    report.pass = eig.values[2] > 0.0;
    return report;
  }
  if (grid_size < 60) {
    throw std::invalid_argument("positivity_check: order-4 grid needs at least 60 points");
  }
  bool first = true;
  for (const auto& g : sphere_grid(grid_size)) {
    const double v = diffusivity(tensor, g);
    if (first || v < report.min_diffusivity) {
      report.min_diffusivity = v;
      report.direction = g;
      first = false;
    }
  }
  report.pass = report.min_diffusivity > 0.0;
  return report;
}

TensorParams project_positive(const TensorParams& order2, double floor) {
  auto eig = eigen_2nd_order(order2);
  Eigen::Vector3d l;
  for (int k = 0; k < 3; ++k) l[k] = std::max(eig.values[k], floor);
  return tensor_from_matrix(eig.vectors * l.asDiagonal() * eig.vectors.transpose());
}

}  // namespace riceem
