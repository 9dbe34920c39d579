#include "riceem/tensor.hpp"
#include "support.hpp"

#include <doctest.h>

#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

using namespace riceem;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Exponents (a, b, c) of the 15 order-4 coefficients, in storage order.
constexpr std::array<std::array<int, 3>, 15> kQuartic{{{4, 0, 0}, {3, 1, 0}, {3, 0, 1}, {2, 2, 0}, {2, 1, 1},
                                                       {2, 0, 2}, {1, 3, 0}, {1, 2, 1}, {1, 1, 2}, {1, 0, 3},
                                                       {0, 4, 0}, {0, 3, 1}, {0, 2, 2}, {0, 1, 3}, {0, 0, 4}}};

// Sum_{ijkl} D_ijkl g_i g_j g_k g_l with D the symmetric tensor whose entry
// for index multiset with counts (a, b, c) is the coefficient of (a, b, c).
double brute_force_quartic(const Eigen::VectorXd& theta, const Vec3& g) {
  double sum = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k)
        for (int l = 0; l < 3; ++l) {
          std::array<int, 3> count{0, 0, 0};
          ++count[i];
          ++count[j];
          ++count[k];
          ++count[l];
          int idx = -1;
          for (int q = 0; q < 15; ++q)
            if (kQuartic[q] == count) idx = q;
          sum += theta(idx) * g(i) * g(j) * g(k) * g(l);
        }
  return sum;
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 g(n(rng), n(rng), n(rng));
  return g.normalized();
}

}  // namespace

TEST_CASE("design_row examples") {
  CHECK(design_row({1000.0, Vec3(1, 0, 0)}, TensorOrder::Two).isApprox(vec({-1000, 0, 0, 0, 0, 0})));
  const double r = 1.0 / std::sqrt(2.0);
  const Eigen::VectorXd z = design_row({1.0, Vec3(r, r, 0)}, TensorOrder::Two);
  CHECK((z - vec({-0.5, -0.5, 0, -1, 0, 0})).norm() < 1e-15);
  CHECK(design_row({0.0, Vec3(0.3, 0.1, 7.0)}, TensorOrder::Four).isZero());
  CHECK(design_row({1.0, Vec3(1, 0, 0)}, TensorOrder::Four).size() == 15);
  CHECK_THROWS_AS(design_row({1.0, Vec3(1, 1, 0)}, TensorOrder::Two), std::domain_error);
  CHECK_THROWS_AS(design_row({-1.0, Vec3(1, 0, 0)}, TensorOrder::Two), std::domain_error);
  CHECK_THROWS_AS(tensor_order_from_int(3), std::invalid_argument);
  CHECK(coefficient_count(TensorOrder::Four) == 15);
}

TEST_CASE("order-4 design rows match the brute-force contraction") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd theta(15);
    for (auto& t : theta) t = n(rng);
    const Vec3 g = random_unit(rng);
    const double b = 1.0 + 999.0 * std::abs(n(rng));
    const double zt = design_row({b, g}, TensorOrder::Four).dot(theta);
    CHECK(zt == doctest::Approx(-b * brute_force_quartic(theta, g)).epsilon(1e-12));
    CHECK(diffusivity(TensorParams(TensorOrder::Four, theta), g) ==
          doctest::Approx(brute_force_quartic(theta, g)).epsilon(1e-12));
  }
}

TEST_CASE("design_row is linear in b and diffusivity is reflection symmetric") {
  std::mt19937_64 rng(4);
  for (TensorOrder order : {TensorOrder::Two, TensorOrder::Four}) {
    const TensorParams t = order == TensorOrder::Two ? testing::random_tensor2(rng) : testing::random_tensor4(rng);
    for (int trial = 0; trial < 20; ++trial) {
      const Vec3 g = random_unit(rng);
      CHECK((design_row({250.0, g}, order) - 250.0 * design_row({1.0, g}, order)).norm() < 1e-12);
      CHECK(diffusivity(t, g) == doctest::Approx(diffusivity(t, -g)).epsilon(1e-14));
    }
  }
}

TEST_CASE("diffusivity examples and matrix assembly") {
  const TensorParams iso(TensorOrder::Two, vec({1, 1, 1, 0, 0, 0}));
  std::mt19937_64 rng(5);
  for (int i = 0; i < 10; ++i) CHECK(diffusivity(iso, random_unit(rng)) == doctest::Approx(1.0));
  CHECK(diffusivity(TensorParams(TensorOrder::Two, vec({2, 1, 1, 0, 0, 0})), Vec3(1, 0, 0)) == doctest::Approx(2.0));
  CHECK_THROWS_AS(diffusivity(iso, Vec3(2, 0, 0)), std::domain_error);
  for (int trial = 0; trial < 20; ++trial) {
    const TensorParams t = testing::random_tensor2(rng);
    const Vec3 g = random_unit(rng);
    const Eigen::Matrix3d d = tensor_matrix(t);
    CHECK(std::abs(diffusivity(t, g) - g.dot(d * g)) < 1e-12 * d.norm());
    CHECK(tensor_from_matrix(d).theta.isApprox(t.theta));
    const TensorParams lifted = lift_to_order4(t);
    CHECK(diffusivity(lifted, g) == doctest::Approx(diffusivity(t, g)).epsilon(1e-12));
  }
}

TEST_CASE("eigen decomposition") {
  auto e = eigen_2nd_order(TensorParams(TensorOrder::Two, vec({3, 2, 1, 0, 0, 0})));
  CHECK(e.values[0] == doctest::Approx(3.0));
  CHECK(e.values[1] == doctest::Approx(2.0));
  CHECK(e.values[2] == doctest::Approx(1.0));
  CHECK(std::abs(std::abs(e.vectors(0, 0)) - 1.0) < 1e-12);
  CHECK(std::abs(std::abs(e.vectors(2, 2)) - 1.0) < 1e-12);

  e = eigen_2nd_order(TensorParams(TensorOrder::Two, vec({1, 1, 1, 1, 0, 0})));
  CHECK(e.values[0] == doctest::Approx(2.0));
  CHECK(e.values[1] == doctest::Approx(1.0));
  CHECK(std::abs(e.values[2]) < 1e-12);

  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::Matrix3d a;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) a(i, j) = n(rng);
    Eigen::Matrix3d d = a + a.transpose();
    if (trial % 10 == 0) d = Eigen::Vector3d(1.0, 1.0, 2.0).asDiagonal();  // repeated eigenvalue
    const auto eig = eigen_symmetric3(d);
    CHECK(eig.values[0] >= eig.values[1]);
    CHECK(eig.values[1] >= eig.values[2]);
    CHECK((eig.vectors.transpose() * eig.vectors - Eigen::Matrix3d::Identity()).norm() < 1e-9);
    const Eigen::Vector3d lambda(eig.values[0], eig.values[1], eig.values[2]);
    CHECK((eig.vectors * lambda.asDiagonal() * eig.vectors.transpose() - d).norm() <= 1e-9 * d.norm());
  }
}

TEST_CASE("fractional anisotropy") {
  auto fa = [](double a, double b, double c) {
    EigenDecomposition e;
    e.values = {a, b, c};
    return fractional_anisotropy(e);
  };
  CHECK(fa(1, 1, 1) == doctest::Approx(0.0));
  CHECK(fa(1, 0, 0) == doctest::Approx(1.0));
  CHECK(fa(2, 1, 1) == doctest::Approx(1.0 / std::sqrt(6.0)).epsilon(1e-14));
  CHECK(fa(2 * 7.5, 7.5, 7.5) == doctest::Approx(fa(2, 1, 1)).epsilon(1e-14));
  CHECK(fa(1.7e-3, 0.4e-3, 0.2e-3) == doctest::Approx(fa(1.7, 0.4, 0.2)).epsilon(1e-13));
  CHECK_THROWS_AS(fa(0, 0, 0), std::domain_error);
}

TEST_CASE("mean diffusivity") {
  CHECK(mean_diffusivity(TensorParams(TensorOrder::Two, vec({3, 2, 1, 0, 0, 0}))) == doctest::Approx(2.0));
  // Listed components D1111, D1122, D1133, D2222, D3333, D2233 set to one.
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(15);
  for (const auto& e : {std::array<int, 3>{4, 0, 0}, {2, 2, 0}, {2, 0, 2}, {0, 4, 0}, {0, 0, 4}, {0, 2, 2}}) {
    for (int q = 0; q < 15; ++q)
      if (kQuartic[q] == e) theta(q) = 1.0;
  }
  CHECK(mean_diffusivity(TensorParams(TensorOrder::Four, theta)) == doctest::Approx(9.0 / 5.0));

  // |g|^4 = (gx^2 + gy^2 + gz^2)^2: diffusivity constant one. The formula as
  // printed gives (1 + 1/3 + 1/3 + 2 + 2 + 2/3) / 5 = 19/15 on it.
  const TensorParams unit = lift_to_order4(TensorParams(TensorOrder::Two, vec({1, 1, 1, 0, 0, 0})));
  std::mt19937_64 rng(8);
  CHECK(diffusivity(unit, random_unit(rng)) == doctest::Approx(1.0));
  CHECK(mean_diffusivity(unit) == doctest::Approx(19.0 / 15.0));

  const TensorParams t = testing::random_tensor2(rng);
  const Eigen::Matrix3d q = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  const TensorParams rotated = tensor_from_matrix(q * tensor_matrix(t) * q.transpose());
  CHECK(mean_diffusivity(rotated) == doctest::Approx(mean_diffusivity(t)).epsilon(1e-13));
}

TEST_CASE("positivity checks") {
  auto r = positivity_check(TensorParams(TensorOrder::Two, vec({1, 1, 1, 0, 0, 0})));
  CHECK(r.pass);
  CHECK(*r.min_eigenvalue == doctest::Approx(1.0));
  r = positivity_check(TensorParams(TensorOrder::Two, vec({1, 1, -1, 0, 0, 0})));
  CHECK_FALSE(r.pass);
  CHECK(*r.min_eigenvalue == doctest::Approx(-1.0));

  std::mt19937_64 rng(9);
  const TensorParams a = testing::random_tensor2(rng);
  const TensorParams square = quartic_product(a, a);
  r = positivity_check(square);
  CHECK(r.pass);
  CHECK_FALSE(r.min_eigenvalue.has_value());
  CHECK(r.min_diffusivity > 0.0);
  CHECK(r.min_diffusivity == doctest::Approx(diffusivity(square, r.direction)));
  CHECK_THROWS_AS(positivity_check(square, 30), std::invalid_argument);

  // A quartic with a negative lobe along z.
  Eigen::VectorXd theta = lift_to_order4(TensorParams(TensorOrder::Two, vec({1, 1, 1, 0, 0, 0}))).theta;
  theta(14) = -2.0;
  r = positivity_check(TensorParams(TensorOrder::Four, theta));
  CHECK_FALSE(r.pass);
  CHECK(std::abs(r.direction.z()) > 0.9);
}

TEST_CASE("project_positive clamps eigenvalues") {
  const TensorParams t(TensorOrder::Two, vec({1e-3, 1e-3, -1e-3, 0, 0, 0}));
  const TensorParams p = project_positive(t);
  const auto e = eigen_2nd_order(p);
  CHECK(e.values[2] == doctest::Approx(1e-7));
  CHECK(e.values[0] == doctest::Approx(1e-3));
}

TEST_CASE("sphere grid") {
  const auto g = sphere_grid(500);
  CHECK(g.size() == 500);
  for (const auto& v : g) CHECK(v.norm() == doctest::Approx(1.0));
  CHECK_THROWS_AS(sphere_grid(0), std::invalid_argument);
}
