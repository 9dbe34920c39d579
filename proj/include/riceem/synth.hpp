// Synthetic acquisition schemes and Rician-corrupted datasets with recorded
// ground truth.
//
// The default scheme and truths are fixtures chosen to resemble a clinical
// acquisition; they are not published values:
//   - 32 directions from deterministic antipodal electrostatic repulsion,
//   - 15 knots: b = 0 followed by 14 geometrically spaced values from 62 to
//     14000 s/mm^2 (rounded to integers), 3 repetitions (m = 1440),
//   - order 2: eigenvalues (1.7, 0.4, 0.2) x 1e-3 mm^2/s in a fixed rotated frame,
//   - order 4: two crossing quartic sticks over an isotropic background,
//   - S0 = 250 with sigma^2 = 93.0405 (high noise) or 12.8821 (low noise).
#pragma once

#include "riceem/rician.hpp"
#include "riceem/scheme.hpp"
#include "riceem/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace riceem {

inline constexpr double kHighNoiseSigmaSq = 93.0405;
inline constexpr double kLowNoiseSigmaSq = 12.8821;
inline constexpr double kFixtureS0 = 250.0;

enum class NoiseLevel { High, Low };

struct GroundTruth {
  TensorParams theta;
  double s0 = kFixtureS0;
  double sigma_sq = kHighNoiseSigmaSq;
  std::uint64_t seed = 0;
  std::string label;  // fixture name, empty for user-supplied truths

  /// Throws std::invalid_argument unless s0 > 0, sigma_sq >= 0 and the tensor
  /// passes positivity_check.
  void validate() const;

  /// Equality of the generating parameters (seed and label ignored).
  bool same_parameters(const GroundTruth& other) const;
};

/// Deterministic antipodally symmetric repulsion set on the upper hemisphere.
std::vector<Vec3> repulsion_directions(int count);

/// 0 followed by `count - 1` geometric steps from `b_first` to `b_max`, rounded.
std::vector<double> geometric_knots(int count, double b_first, double b_max);
std::vector<double> default_knots();

AcquisitionScheme make_scheme(int n_directions, const std::vector<double>& knots, int repetitions);
AcquisitionScheme default_scheme();

TensorParams fixture_tensor(TensorOrder order);
GroundTruth fixture_truth(TensorOrder order, NoiseLevel noise, std::uint64_t seed);

struct SynthOptions {
  /// Magnitudes strictly below this are recorded as 0 (zero-coding). 0 disables.
  double zero_threshold = 0.0;
};

/// Noise-free signal S0 exp(Z theta) for every row.
Eigen::VectorXd noise_free_signal(const Design& design, const TensorParams& theta, double s0);

/// Magnitudes Y_i ~ Rice(S_i, sigma^2), drawn in row order from an engine
/// seeded with truth.seed. sigma^2 = 0 returns the noise-free signal.
Eigen::VectorXd synthesize(const AcquisitionScheme& scheme, const GroundTruth& truth,
                           const SynthOptions& options = {});

struct SyntheticDataset {
  std::uint64_t seed = 0;
  Eigen::VectorXd magnitudes;
};

/// Independent datasets; dataset i uses derive_seed(truth.seed, i).
std::vector<SyntheticDataset> make_ensemble(const AcquisitionScheme& scheme,
                                            const GroundTruth& truth, int n_datasets,
                                            const SynthOptions& options = {},
                                            unsigned workers = 1);

}  // namespace riceem
