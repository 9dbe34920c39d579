// Diffusivity parametrizations of order 2 and 4, design rows, scalar
// invariants (FA, MD) and positivity diagnostics.
//
// Coefficients are stored per distinct monomial g_x^a g_y^b g_z^c of the
// diffusivity polynomial, with the multinomial multiplicity of the monomial
// folded into the design row. For order 2 this gives
//   theta = (Dxx, Dyy, Dzz, Dxy, Dxz, Dyz),
//   Z(b, g) = -b (gx^2, gy^2, gz^2, 2 gx gy, 2 gx gz, 2 gy gz),
// and for order 4 the 15 exponents are ordered lexicographically from
// (4,0,0) down to (0,0,4).
#pragma once

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <span>
#include <vector>

namespace riceem {

using Vec3 = Eigen::Vector3d;

enum class TensorOrder : int { Two = 2, Four = 4 };

/// Number of free coefficients of a tensor of the given order (6 or 15).
int coefficient_count(TensorOrder order);

/// Parses 2 or 4; throws std::invalid_argument otherwise.
TensorOrder tensor_order_from_int(int order);

/// One acquisition: diffusion weighting b (s/mm^2) and unit direction g.
struct GradientControl {
  double b = 0.0;
  Vec3 g = Vec3::UnitX();

  /// Throws std::domain_error when b < 0 or, for b > 0, when |g| != 1.
  void validate() const;

  friend bool operator==(const GradientControl& a, const GradientControl& b) {
    return a.b == b.b && a.g == b.g;
  }
};

/// Exponent triple (a, b, c) and multiplicity of each coefficient.
struct Monomial {
  std::array<int, 3> exponent;
  double multiplicity;
};
std::span<const Monomial> monomials(TensorOrder order);

struct TensorParams {
  TensorOrder order = TensorOrder::Two;
  Eigen::VectorXd theta;

  TensorParams() : theta(Eigen::VectorXd::Zero(6)) {}
  TensorParams(TensorOrder o, Eigen::VectorXd t);

  int size() const { return static_cast<int>(theta.size()); }
  void validate() const;
};

struct EigenDecomposition {
  std::array<double, 3> values{};  // descending
  Eigen::Matrix3d vectors = Eigen::Matrix3d::Identity();  // columns match values
};

/// Design row with Z . theta = -b d(g).
Eigen::VectorXd design_row(const GradientControl& control, TensorOrder order);

/// Stacked design rows of a list of controls (m x d).
Eigen::MatrixXd design_matrix(std::span<const GradientControl> rows, TensorOrder order);

/// d(g) for a unit direction g.
double diffusivity(const TensorParams& tensor, const Vec3& g);

/// 3x3 symmetric matrix of an order-2 tensor and its inverse mapping.
Eigen::Matrix3d tensor_matrix(const TensorParams& tensor);
TensorParams tensor_from_matrix(const Eigen::Matrix3d& d);

/// Order-4 tensor whose diffusivity is (g'Ag)(g'Bg) for order-2 A, B.
TensorParams quartic_product(const TensorParams& a, const TensorParams& b);

/// Order-4 tensor with the same diffusivity as an order-2 tensor.
TensorParams lift_to_order4(const TensorParams& order2);

/// Closed-form eigensolver for a symmetric 3x3 matrix.
EigenDecomposition eigen_symmetric3(const Eigen::Matrix3d& d);
EigenDecomposition eigen_2nd_order(const TensorParams& tensor);

double fractional_anisotropy(const EigenDecomposition& eig);

/// Order 2: trace / 3. Order 4: (D1111 + D1122 + D1133 + 2 D2222 + 2 D3333 + 2 D2233) / 5.
double mean_diffusivity(const TensorParams& tensor);

struct PositivityReport {
  double min_diffusivity = 0.0;
  std::optional<double> min_eigenvalue;  // order 2 only
  Vec3 direction = Vec3::UnitX();       // minimizing direction
  bool pass = false;
};

/// Deterministic near-uniform point set on the unit sphere.
std::vector<Vec3> sphere_grid(int count);

/// Order 2: eigenvalue test. Order 4: minimum of d(g) over sphere_grid(grid_size),
/// which needs grid_size >= 60.
PositivityReport positivity_check(const TensorParams& tensor, int grid_size = 2000);

/// Clamps the eigenvalues of an order-2 tensor at `floor`.
TensorParams project_positive(const TensorParams& order2, double floor = 1e-7);

}  // namespace riceem
