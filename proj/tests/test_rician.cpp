#include "riceem/rician.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

using namespace riceem;
using riceem::testing::oracle_log_i0;
using riceem::testing::oracle_ratio;

namespace {

double density(double y, double s, double sigma_sq) {
  return std::exp(rician_log_density(y, RicianParams{s, sigma_sq}));
}

// Composite Simpson on [a, b] with n (even) panels.
template <class F>
double simpson(F f, double a, double b, int n) {
  const double h = (b - a) / n;
  double sum = f(a) + f(b);
  for (int i = 1; i < n; ++i) sum += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return sum * h / 3.0;
}

}  // namespace

TEST_CASE("log_bessel_i0 small arguments") {
  CHECK(log_bessel_i0(0.0) == 0.0);
  CHECK(log_bessel_i0(1.0) == doctest::Approx(std::log(1.2660658777520082)).epsilon(1e-14));
  CHECK(log_bessel_i0(700.0) == doctest::Approx(700.0 - 0.5 * std::log(2 * std::numbers::pi * 700.0) +
                                                std::log1p(1.0 / 5600.0 + 9.0 / (2.0 * 5600.0 * 5600.0)))
                                    .epsilon(1e-12));
  CHECK_THROWS_AS(log_bessel_i0(-1.0), std::domain_error);
}

TEST_CASE("log_bessel_i0 matches the series oracle on [0, 30] and across the seam") {
  for (double x = 0.0; x <= 30.0; x += 0.0731) {
    CHECK(std::exp(log_bessel_i0(x) - oracle_log_i0(x)) == doctest::Approx(1.0).epsilon(1e-10));
  }
  for (double x : {19.999999, 20.0, 20.000001}) {
    CHECK(log_bessel_i0(x) == doctest::Approx(oracle_log_i0(x)).epsilon(1e-13));
  }
}

TEST_CASE("bessel ratio examples and invariants") {
  CHECK(bessel_ratio_i1_i0(0.0) == 0.0);
  CHECK(bessel_ratio_i1_i0(2.0) == doctest::Approx(1.5906368546373291 / 2.2795853023360673).epsilon(1e-13));
  CHECK(bessel_ratio_i1_i0(1e8) == doctest::Approx(1.0 - 0.5e-8).epsilon(1e-15));
  double prev = -1.0;
  for (double x = 0.0; x < 200.0; x = x * 1.05 + 0.01) {
    const double r = bessel_ratio_i1_i0(x);
    CHECK(r >= 0.0);
    CHECK(r < 1.0);
    CHECK(r >= prev);
    prev = r;
    CHECK(r == doctest::Approx(oracle_ratio(x)).epsilon(1e-12));
    CHECK(bessel_ratio_complement(x) == doctest::Approx(1.0 - oracle_ratio(x)).epsilon(1e-10));
  }
}

TEST_CASE("ratio derivative agrees with finite differences") {
  CHECK(bessel_ratio_derivative(0.0) == doctest::Approx(0.5));
  for (double x : {0.3, 1.0, 5.0, 19.5, 20.5, 80.0}) {
    const double fd = testing::richardson_derivative(bessel_ratio_i1_i0, x, 1e-3);
    CHECK(bessel_ratio_derivative(x) == doctest::Approx(fd).epsilon(1e-8));
  }
}

TEST_CASE("augmented expectation") {
  CHECK(augmented_expectation(0.0) == 0.0);
  CHECK(augmented_expectation(1.0) == doctest::Approx(0.6977746579640081).epsilon(1e-12));
  CHECK(augmented_expectation(1e6) == doctest::Approx(1e6 - 0.25).epsilon(1e-13));
  for (double tau = 1e-6; tau < 1e7; tau *= 3.7) {
    const double n = augmented_expectation(tau);
    CHECK(n >= 0.0);
    CHECK(n < tau);
  }
  CHECK(augmented_expectation(1e12) / 1e12 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("derivative identity d/dtau log I0(2 tau) = 2 I1(2 tau)/I0(2 tau)") {
  for (double tau : {0.1, 1.0, 4.0, 9.9, 10.1, 50.0}) {
    const double fd =
        testing::richardson_derivative([](double t) { return log_bessel_i0(2.0 * t); }, tau, 1e-3);
    CHECK(fd == doctest::Approx(2.0 * bessel_ratio_i1_i0(2.0 * tau)).epsilon(1e-6));
  }
}

TEST_CASE("rician_log_density examples") {
  CHECK(rician_log_density(1.0, {0.0, 1.0}) == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(rician_log_density(2.0, {3.0, 1.0}) ==
        doctest::Approx(std::log(2.0) - 6.5 + oracle_log_i0(6.0)).epsilon(1e-13));
  CHECK_THROWS_AS(rician_log_density(0.0, {1.0, 1.0}), std::domain_error);
  CHECK_THROWS_AS(rician_log_density(-1.0, {1.0, 1.0}), std::domain_error);
  CHECK_THROWS_AS(rician_log_density(1.0, {1.0, 0.0}), std::domain_error);
  CHECK_THROWS_AS(rician_log_density(1.0, {-1.0, 1.0}), std::domain_error);
}

TEST_CASE("rician density is Rayleigh at S = 0 and integrates to one") {
  for (double y : {0.1, 1.0, 3.0}) {
    const double s2 = 2.5;
    CHECK(rician_log_density(y, {0.0, s2}) == doctest::Approx(std::log(y / s2) - y * y / (2 * s2)).epsilon(1e-14));
  }
  for (auto [s, s2] : {std::pair{0.0, 1.0}, {3.0, 1.0}, {250.0, 93.0405}, {10.0, 4.0}}) {
    const double sigma = std::sqrt(s2);
    const double lo = std::max(1e-12, s - 20 * sigma);
    const double mass = simpson([&](double y) { return y > 0 ? density(y, s, s2) : 0.0; }, lo, s + 20 * sigma, 20000);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("sample_rician moments, determinism and errors") {
  CHECK_THROWS_AS(sample_rician({1.0, 1.0}, 0, 1), std::domain_error);

  const auto a = sample_rician({2.0, 1.0}, 100, 42);
  const auto b = sample_rician({2.0, 1.0}, 100, 42);
  const auto c = sample_rician({2.0, 1.0}, 100, 43);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(std::all_of(a.begin(), a.end(), [](double v) { return v > 0.0; }));

  const std::size_t n = 1000000;
  {
    const auto y = sample_rician({0.0, 1.0}, n, 7);
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
    const double expect = std::sqrt(std::numbers::pi / 2.0);
    const double sd = std::sqrt(2.0 - std::numbers::pi / 2.0);
    CHECK(std::abs(mean - expect) < 3.0 * sd / std::sqrt(double(n)));
  }
  {
    const auto y = sample_rician({5.0, 2.0}, n, 8);
    double m2 = 0.0, m4 = 0.0;
    for (double v : y) {
      m2 += v * v;
      m4 += v * v * v * v;
    }
    m2 /= n;
    m4 /= n;
    const double se = std::sqrt((m4 - m2 * m2) / n);
    CHECK(std::abs(m2 - 29.0) < 3.0 * se);
  }
}

TEST_CASE("sample_rician passes a Kolmogorov-Smirnov test against the quadrature CDF") {
  const std::size_t n = 100000;
  auto y = sample_rician({3.0, 1.0}, n, 11);
  std::sort(y.begin(), y.end());
  // CDF on a fine grid by cumulative Simpson panels.
  const double top = 3.0 + 12.0;
  const int cells = 12000;
  const double h = top / cells;
  std::vector<double> cdf(cells + 1, 0.0);
  auto f = [](double v) { return v > 0 ? density(v, 3.0, 1.0) : 0.0; };
  for (int i = 0; i < cells; ++i) {
    const double a = i * h;
    cdf[i + 1] = cdf[i] + h / 6.0 * (f(a) + 4.0 * f(a + h / 2) + f(a + h));
  }
  double ks = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = y[i] / h;
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(pos), cells - 1);
    const double frac = pos - k;
    const double fy = cdf[k] + frac * (cdf[k + 1] - cdf[k]);
    ks = std::max({ks, std::abs(fy - double(i) / n), std::abs(fy - double(i + 1) / n)});
  }
  CHECK(ks < 1.628 / std::sqrt(double(n)));
}

TEST_CASE("derive_seed is deterministic and spreads indices") {
  CHECK(derive_seed(1, 0) == derive_seed(1, 0));
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
}
