#include "riceem/synth.hpp"

#include "riceem/batch.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace riceem {

// ---------------------------------------------------------------------------
// AcquisitionScheme / Design

AcquisitionScheme::AcquisitionScheme(std::vector<Vec3> directions, std::vector<double> knots,
                                     int repetitions)
    : directions_(std::move(directions)), knots_(std::move(knots)), repetitions_(repetitions) {
  if (directions_.empty()) throw std::invalid_argument("AcquisitionScheme: no directions");
  if (knots_.empty()) throw std::invalid_argument("AcquisitionScheme: no knots");
  if (repetitions_ < 1) throw std::invalid_argument("AcquisitionScheme: repetitions must be >= 1");
  for (std::size_t k = 0; k < knots_.size(); ++k) {
    if (!std::isfinite(knots_[k]) || knots_[k] < 0.0) {
      throw std::invalid_argument("AcquisitionScheme: knots must be finite and >= 0");
    }
    if (k > 0 && knots_[k] <= knots_[k - 1]) {
      throw std::invalid_argument("AcquisitionScheme: knots must be strictly ascending");
    }
  }
  rows_.reserve(directions_.size() * knots_.size() * static_cast<std::size_t>(repetitions_));
  for (int r = 0; r < repetitions_; ++r) {
    for (double b : knots_) {
      for (const auto& g : directions_) {
        GradientControl c{b, g};
        if (std::abs(g.norm() - 1.0) > 1e-9) {
          throw std::invalid_argument("AcquisitionScheme: directions must have unit length");
        }
        rows_.push_back(c);
      }
    }
  }
}

std::size_t AcquisitionScheme::knot_of_row(std::size_t row) const {
  return (row / directions_.size()) % knots_.size();
}

std::size_t AcquisitionScheme::direction_of_row(std::size_t row) const {
  return row % directions_.size();
}

std::size_t AcquisitionScheme::repetition_of_row(std::size_t row) const {
  return row / (directions_.size() * knots_.size());
}

Design make_design(std::span<const GradientControl> rows, TensorOrder order) {
  Design d;
  d.order = order;
  d.z = design_matrix(rows, order);
  d.b.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) d.b[static_cast<Eigen::Index>(i)] = rows[i].b;
  return d;
}

Design make_design(const AcquisitionScheme& scheme, TensorOrder order) {
  return make_design(std::span<const GradientControl>(scheme.rows()), order);
}

// ---------------------------------------------------------------------------
// Directions and knots

std::vector<Vec3> repulsion_directions(int count) {
  if (count < 1) throw std::invalid_argument("repulsion_directions: count must be >= 1");
  const auto n = static_cast<std::size_t>(count);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::vector<Vec3> p(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = 1.0 - (static_cast<double>(i) + 0.5) / count;
    const double r = std::sqrt(1.0 - z * z);
    p[i] = Vec3(r * std::cos(golden * i), r * std::sin(golden * i), z);
  }
  // Each direction repels the other directions and their antipodes. Moves
  // are capped by a shrinking step so the iteration is fixed-length and
  // fully deterministic.
  constexpr int kIterations = 1000;
  std::vector<Vec3> force(n);
  for (int it = 0; it < kIterations; ++it) {
    double max_force = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      Vec3 f = Vec3::Zero();
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const Vec3 dm = p[i] - p[j];
        const Vec3 dp = p[i] + p[j];
        f += dm / std::pow(dm.norm(), 3) + dp / std::pow(dp.norm(), 3);
      }
      f -= f.dot(p[i]) * p[i];
      force[i] = f;
      max_force = std::max(max_force, f.norm());
    }
    if (max_force == 0.0) break;
    const double step = (0.05 * (1.0 - static_cast<double>(it) / kIterations) + 1e-4) / max_force;
    for (std::size_t i = 0; i < n; ++i) p[i] = (p[i] + step * force[i]).normalized();
  }
  for (auto& v : p) {
    if (v.z() < 0.0 || (v.z() == 0.0 && v.y() < 0.0)) v = -v;
  }
  return p;
}

std::vector<double> geometric_knots(int count, double b_first, double b_max) {
  if (count < 2) throw std::invalid_argument("geometric_knots: need at least 2 knots");
  if (!(b_first > 0.0) || !(b_max > b_first)) {
    throw std::invalid_argument("geometric_knots: need 0 < b_first < b_max");
  }
  std::vector<double> knots{0.0};
  const int steps = count - 1;
  for (int k = 0; k < steps; ++k) {
    const double frac = steps == 1 ? 1.0 : static_cast<double>(k) / (steps - 1);
    knots.push_back(std::round(b_first * std::pow(b_max / b_first, frac)));
  }
  return knots;
}

std::vector<double> default_knots() { return geometric_knots(15, 62.0, 14000.0); }

AcquisitionScheme make_scheme(int n_directions, const std::vector<double>& knots, int repetitions) {
  return AcquisitionScheme(repulsion_directions(n_directions), knots, repetitions);
}

AcquisitionScheme default_scheme() { return make_scheme(32, default_knots(), 3); }

// ---------------------------------------------------------------------------
// Ground truth

namespace {

Eigen::Matrix3d fixture_frame() {
  return (Eigen::AngleAxisd(std::numbers::pi / 6.0, Vec3::UnitZ()) *
          Eigen::AngleAxisd(std::numbers::pi / 9.0, Vec3::UnitY()))
      .toRotationMatrix();
}

TensorParams outer(const Vec3& u) { return tensor_from_matrix(u * u.transpose()); }

}  // namespace

TensorParams fixture_tensor(TensorOrder order) {
  const Eigen::Matrix3d r = fixture_frame();
  if (order == TensorOrder::Two) {
    const Eigen::Vector3d lambda(1.7e-3, 0.4e-3, 0.2e-3);
    return tensor_from_matrix(r * lambda.asDiagonal() * r.transpose());
  }
  // d(g) = l_perp |g|^4 + (l_par - l_perp) ((u1.g)^4 + (u2.g)^4) / 2
  constexpr double l_par = 1.7e-3;
  constexpr double l_perp = 0.3e-3;
  const Vec3 u1 = r * Vec3::UnitX();
  const Vec3 u2 = r * Vec3(0.5, std::sqrt(3.0) / 2.0, 0.0);
  const TensorParams iso = tensor_from_matrix(Eigen::Matrix3d::Identity());
  Eigen::VectorXd theta = l_perp * quartic_product(iso, iso).theta +
                          0.5 * (l_par - l_perp) *
                              (quartic_product(outer(u1), outer(u1)).theta +
                               quartic_product(outer(u2), outer(u2)).theta);
  return TensorParams(TensorOrder::Four, std::move(theta));
}

GroundTruth fixture_truth(TensorOrder order, NoiseLevel noise, std::uint64_t seed) {
  GroundTruth t;
  t.theta = fixture_tensor(order);
  t.s0 = kFixtureS0;
  t.sigma_sq = noise == NoiseLevel::High ? kHighNoiseSigmaSq : kLowNoiseSigmaSq;
  t.seed = seed;
  t.label = std::string("fixture-order") + (order == TensorOrder::Two ? "2" : "4") +
            (noise == NoiseLevel::High ? "-high" : "-low");
  return t;
}

void GroundTruth::validate() const {
  theta.validate();
  if (!std::isfinite(s0) || s0 <= 0.0) throw std::invalid_argument("GroundTruth: s0 must be > 0");
  if (!std::isfinite(sigma_sq) || sigma_sq < 0.0) {
    throw std::invalid_argument("GroundTruth: sigma_sq must be >= 0");
  }
  if (!positivity_check(theta).pass) {
    throw std::invalid_argument("GroundTruth: tensor is not positive");
  }
}

bool GroundTruth::same_parameters(const GroundTruth& other) const {
  return theta.order == other.theta.order && theta.theta == other.theta.theta &&
         s0 == other.s0 && sigma_sq == other.sigma_sq;
}

// ---------------------------------------------------------------------------
// Synthesis

Eigen::VectorXd noise_free_signal(const Design& design, const TensorParams& theta, double s0) {
  if (theta.order != design.order) {
    throw std::invalid_argument("noise_free_signal: tensor order does not match design");
  }
  return s0 * (design.z * theta.theta).array().exp().matrix();
}

namespace {

Eigen::VectorXd synthesize_with_seed(const AcquisitionScheme& scheme, const GroundTruth& truth,
                                     std::uint64_t seed, const SynthOptions& options) {
  const Design design = make_design(scheme, truth.theta.order);
  Eigen::VectorXd y = noise_free_signal(design, truth.theta, truth.s0);
  if (truth.sigma_sq > 0.0) {
    Rng rng(seed);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      y[i] = draw_rician(RicianParams{y[i], truth.sigma_sq}, rng);
    }
  }
  if (options.zero_threshold > 0.0) {
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (y[i] < options.zero_threshold) y[i] = 0.0;
    }
  }
  return y;
}

}  // namespace

Eigen::VectorXd synthesize(const AcquisitionScheme& scheme, const GroundTruth& truth,
                           const SynthOptions& options) {
  truth.validate();
  return synthesize_with_seed(scheme, truth, truth.seed, options);
}

std::vector<SyntheticDataset> make_ensemble(const AcquisitionScheme& scheme,
                                            const GroundTruth& truth, int n_datasets,
                                            const SynthOptions& options, unsigned workers) {
  if (n_datasets < 1) throw std::invalid_argument("make_ensemble: n_datasets must be >= 1");
  truth.validate();
  std::vector<SyntheticDataset> out(static_cast<std::size_t>(n_datasets));
  parallel_for(out.size(), workers, [&](std::size_t i) {
    out[i].seed = derive_seed(truth.seed, i);
    out[i].magnitudes = synthesize_with_seed(scheme, truth, out[i].seed, options);
  });
  return out;
}

}  // namespace riceem
