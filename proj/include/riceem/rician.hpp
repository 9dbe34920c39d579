// Rician noise kernels: modified Bessel functions of orders 0 and 1 in a
// numerically stable form, the conditional mean of the Poisson augmentation
// variable, the Rician density and a seeded sampler.
//
// Every function is pure. Series evaluation is used for arguments up to
// kBesselSeriesLimit and the large-argument expansion above it, so that no
// intermediate overflows for any finite argument.
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace riceem {

/// Random engine used for every simulation. Seeds are recorded in outputs.
using Rng = std::mt19937_64;

/// Series/asymptotic switch point for I0 and I1.
inline constexpr double kBesselSeriesLimit = 20.0;

/// Parameters of a Rician law: noise-free amplitude and per-channel variance.
struct RicianParams {
  double signal = 0.0;
  double sigma_sq = 1.0;

  /// Throws std::domain_error unless signal >= 0 and sigma_sq > 0.
  void validate() const;
};

/// log I0(x) for finite x >= 0.
double log_bessel_i0(double x);

/// I1(x) / I0(x), in [0, 1) and nondecreasing.
double bessel_ratio_i1_i0(double x);

/// 1 - I1(x)/I0(x), accurate for large x where the ratio is close to one.
double bessel_ratio_complement(double x);

/// d/dx [I1(x)/I0(x)] = 1 - g(x)/x - g(x)^2 with g = I1/I0; 1/2 at x = 0.
double bessel_ratio_derivative(double x);

/// E(N | Y) = tau I1(2 tau) / I0(2 tau) for the reinforced Poisson law.
double augmented_expectation(double tau);

/// log p(y) for the Rician density with the given parameters, y > 0.
double rician_log_density(double y, const RicianParams& params);

/// Draw |(S + s g1) + i s g2| with s = sqrt(sigma_sq), g1, g2 ~ N(0, 1).
double draw_rician(const RicianParams& params, Rng& rng);

/// `count` independent draws from a fresh engine seeded with `seed`.
std::vector<double> sample_rician(const RicianParams& params, std::size_t count,
                                  std::uint64_t seed);

/// Derives the seed of stream `index` from a master seed (deterministic).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

}  // namespace riceem
