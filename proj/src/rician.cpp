#include "riceem/rician.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace riceem {

namespace {

void require_nonnegative_finite(double x, const char* what) {
  if (!std::isfinite(x) || x < 0.0) {
    throw std::domain_error(std::string(what) + ": argument must be finite and >= 0, got " +
                            std::to_string(x));
  }
}

// Power series of I0 and I1 at x <= kBesselSeriesLimit. All terms are
// positive, so the sums carry full relative precision.
struct SeriesSums {
  double i0;
  double i1;
};

SeriesSums bessel_series(double x) {
  const double q = 0.25 * x * x;
  double t0 = 1.0;
  double t1 = 0.5 * x;
  double s0 = t0;
  double s1 = t1;
  for (int n = 1; n < 500; ++n) {
    t0 *= q / (static_cast<double>(n) * n);
    t1 *= q / (static_cast<double>(n) * (n + 1));
    s0 += t0;
    s1 += t1;
    if (t0 < 1e-18 * s0 && t1 <= 1e-18 * s1) break;
  }
  return {s0, s1};
}

// Large-argument expansions I_nu(x) ~ e^x / sqrt(2 pi x) * (1 + sum_k c_k),
// returned as the tails sum_{k>=1}. For nu = 0 every c_k is positive, for
// nu = 1 every c_k is negative, so the difference of the tails is a sum of
// positive terms and carries no cancellation.
struct AsymptoticTails {
  double tail0;
  double tail1;
  double diff;  // tail0 - tail1
};

AsymptoticTails bessel_asymptotic(double x) {
  double a = 1.0;
  double b = 1.0;
  AsymptoticTails out{0.0, 0.0, 0.0};
  double prev = std::numeric_limits<double>::infinity();
  for (int k = 1; k < 200; ++k) {
    const double odd = 2.0 * k - 1.0;
    const double denom = 8.0 * k * x;
    a *= odd * odd / denom;
    b *= (odd * odd - 4.0) / denom;
    const double mag = std::abs(a) + std::abs(b);
    // Optimal truncation: stop once terms start to grow.
    if (mag > prev) break;
    out.tail0 += a;
    out.tail1 += b;
    out.diff += a - b;
    if (mag < 1e-17) break;
    prev = mag;
  }
  return out;
}

}  // namespace

void RicianParams::validate() const {
  if (!std::isfinite(signal) || signal < 0.0) {
    throw std::domain_error("RicianParams: signal must be finite and >= 0");
  }
  if (!std::isfinite(sigma_sq) || sigma_sq <= 0.0) {
    throw std::domain_error("RicianParams: sigma_sq must be finite and > 0");
  }
}

double log_bessel_i0(double x) {
  require_nonnegative_finite(x, "log_bessel_i0");
  if (x <= kBesselSeriesLimit) {
    return std::log(bessel_series(x).i0);
  }
  const auto tails = bessel_asymptotic(x);
  return x - 0.5 * std::log(2.0 * std::numbers::pi * x) + std::log1p(tails.tail0);
}

double bessel_ratio_i1_i0(double x) {
  require_nonnegative_finite(x, "bessel_ratio_i1_i0");
  if (x == 0.0) return 0.0;
  double r;
  if (x <= kBesselSeriesLimit) {
    const auto s = bessel_series(x);
    r = s.i1 / s.i0;
  } else {
    const auto tails = bessel_asymptotic(x);
    r = (1.0 + tails.tail1) / (1.0 + tails.tail0);
  }
  // The exact ratio is < 1; keep that true after rounding.
  return std::min(r, std::nextafter(1.0, 0.0));
}

double bessel_ratio_complement(double x) {
  require_nonnegative_finite(x, "bessel_ratio_complement");
  if (x <= kBesselSeriesLimit) {
    if (x == 0.0) return 1.0;
    const auto s = bessel_series(x);
    return (s.i0 - s.i1) / s.i0;
  }
  const auto tails = bessel_asymptotic(x);
  return tails.diff / (1.0 + tails.tail0);
}

double bessel_ratio_derivative(double x) {
  require_nonnegative_finite(x, "bessel_ratio_derivative");
  if (x < 1e-4) {
    // g(x) = x/2 - x^3/16 + x^5/96 - ...
    return 0.5 - 3.0 * x * x / 16.0;
  }
  if (x <= kBesselSeriesLimit) {
    const double g = bessel_ratio_i1_i0(x);
    return 1.0 - g / x - g * g;
  }
  const double q = bessel_ratio_complement(x);
  return q * (2.0 - q) - (1.0 - q) / x;
}

double augmented_expectation(double tau) {
  require_nonnegative_finite(tau, "augmented_expectation");
  if (tau == 0.0) return 0.0;
  const double x = 2.0 * tau;
  double n;
  if (x <= kBesselSeriesLimit) {
    n = tau * bessel_ratio_i1_i0(x);
  } else {
    n = tau - tau * bessel_ratio_complement(x);
  }
  if (n >= tau) n = std::nextafter(tau, 0.0);
  return n;
}

double rician_log_density(double y, const RicianParams& params) {
  params.validate();
  if (!std::isfinite(y) || y <= 0.0) {
    throw std::domain_error("rician_log_density: y must be finite and > 0");
  }
  const double s2 = params.sigma_sq;
  return std::log(y) - std::log(s2) - (y * y + params.signal * params.signal) / (2.0 * s2) +
         log_bessel_i0(y * params.signal / s2);
}

double draw_rician(const RicianParams& params, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sigma = std::sqrt(params.sigma_sq);
  const double re = params.signal + sigma * normal(rng);
  const double im = sigma * normal(rng);
  return std::hypot(re, im);
}

std::vector<double> sample_rician(const RicianParams& params, std::size_t count,
                                  std::uint64_t seed) {
  params.validate();
  if (count == 0) throw std::domain_error("sample_rician: count must be >= 1");
  Rng rng(seed);
  std::vector<double> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(draw_rician(params, rng));
  return out;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

}  // namespace riceem
