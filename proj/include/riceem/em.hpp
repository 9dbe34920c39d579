// Poisson-augmented EM for Rician diffusion-tensor estimation.
//
// Each magnitude Y_i is paired with a latent count N_i ~ Poisson(t_i),
// t_i = S0^2 exp(2 Z_i theta) / (2 sigma^2), and Y_i^2 | N_i is
// Gamma(N_i + 1, 1 / (2 sigma^2)). The E-step replaces N_i by its
// conditional mean <N_i> = tau_i I1(2 tau_i) / I0(2 tau_i) with
// tau_i = Y_i S0 exp(Z_i theta) / (2 sigma^2). The expected augmented
// log-likelihood (the surrogate)
//
//   Q = sum_i (log S0^2 - 2 log sigma^2 + 2 Z_i theta) <N_i> - m log sigma^2
//       - sum_i (S0^2 exp(2 Z_i theta) + Y_i^2) / (2 sigma^2)
//
// is then raised coordinate-wise: theta by stabilized Fisher scoring (it is
// a Poisson log-linear model in theta), followed by the closed-form
// maximizers for sigma^2 and S0^2. Each coordinate step raises Q, so the
// marginal Rician likelihood never decreases across sweeps.
#pragma once

#include "riceem/scheme.hpp"
#include "riceem/tensor.hpp"

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace riceem {

class InitializationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Floor used for S0^2 when no acquisition carries signal.
inline constexpr double kS0SqFloor = 1e-12;

enum class InitMethod { LS, WLS };

/// None runs plain EM sweeps. Anderson mixes the last few sweep images and
/// keeps a mixed point only if the sweep from it does not lower the objective;
/// the fixed point is the same.
enum class Acceleration { None, Anderson };

struct FitOptions {
  double alpha = 0.1;             // Fisher-scoring stabilizer in [0, 1]
  double anneal_threshold = 1e-4; // alpha drops to 0 once a sweep raises Q by less
  int max_em_iters = 500;
  int max_scoring_iters = 50;
  double tol_scoring = 1e-6;      // relative theta step inside the scoring loop
  double tol_theta = 1e-6;        // relative theta change per sweep
  double tol_loglik = 1e-8;       // absolute objective change per sweep
  double init_b_cutoff = 1000.0;
  InitMethod init_method = InitMethod::WLS;
  bool single_step_scoring = false;
  bool positivity_projection = false;  // order 2 only
  double eigenvalue_floor = 1e-7;
  Acceleration acceleration = Acceleration::Anderson;
  int anderson_memory = 5;

  void validate() const;
};

/// Priors for MAP estimation: theta ~ N(0, omega^-1), S0^2 with kernel
/// (S0^2)^c1 exp(-c2 S0^2), and the scale-invariant 1/sigma^2 prior.
struct PriorSpec {
  Eigen::MatrixXd omega;
  double c1 = 1e-6;
  double c2 = 1e-6;

  /// omega = scale * I_d.
  static PriorSpec isotropic(int d, double omega_scale, double c1 = 1e-6, double c2 = 1e-6);
  void validate(int d) const;
  double log_density(const Eigen::VectorXd& theta, double s0_sq, double sigma_sq) const;
};

struct FitState {
  TensorParams theta;
  double s0_sq = 1.0;
  double sigma_sq = 1.0;
  Eigen::VectorXd n_expect;
  int iteration = 0;
  double marginal_loglik = 0.0;
};

/// Result of a fit; both MLE and MAP.
struct FitReport {
  std::string method;  // "mle" or "map"
  TensorParams theta;
  double s0_sq = 0.0;
  double sigma_sq = 0.0;
  bool converged = false;
  int iterations = 0;                // EM sweeps performed
  double final_loglik = 0.0;         // marginal Rician log-likelihood
  std::vector<double> objective_trace;  // loglik (MLE) or log posterior kernel (MAP), per accepted update
  Eigen::VectorXd n_expect;
  bool degenerate = false;
  int scoring_failures = 0;
};

// ---------------------------------------------------------------------------
// Building blocks. `design` supplies Z (m x d); `y` the magnitudes.

/// t_i = S0^2 exp(2 Z_i theta) / (2 sigma^2).
Eigen::VectorXd poisson_means(const Eigen::MatrixXd& z, const Eigen::VectorXd& theta, double s0_sq,
                              double sigma_sq);

/// Rician log-likelihood of the data. Rows with Y_i = 0 contribute their
/// limiting density -log sigma^2 - t_i (the parameter-free log y term is dropped).
double marginal_loglik(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& theta, double s0_sq, double sigma_sq);

/// Expected augmented log-likelihood Q at (theta, s0_sq, sigma_sq) for fixed <N>.
double augmented_surrogate(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& n_expect, const Eigen::VectorXd& theta,
                           double s0_sq, double sigma_sq);

/// theta-dependent part of Q: sum_i 2 Z_i theta <N_i> - S0^2 exp(2 Z_i theta) / (2 sigma^2).
double surrogate_theta(const FitState& state, const Eigen::MatrixXd& z, const Eigen::VectorXd& theta);

Eigen::VectorXd e_step(const FitState& state, const Eigen::MatrixXd& z, const Eigen::VectorXd& y);

/// sum_i (S0^2 exp(2 Z_i theta) + Y_i^2) / (2 m + 4 sum_i <N_i>).
double m_step_sigma(const FitState& state, const Eigen::MatrixXd& z, const Eigen::VectorXd& y);

struct S0Update {
  double s0_sq = kS0SqFloor;
  bool degenerate = false;
};
/// 2 sigma^2 sum_i <N_i> / sum_i exp(2 Z_i theta).
S0Update m_step_s0(const FitState& state, const Eigen::MatrixXd& z);

/// MAP counterparts of the sigma^2 and S0^2 updates.
double m_step_sigma_map(const FitState& state, const Eigen::MatrixXd& z, const Eigen::VectorXd& y);
S0Update m_step_s0_map(const FitState& state, const Eigen::MatrixXd& z, const PriorSpec& prior);

/// S(theta) = 2 sum_i Z_i <N_i> - (S0^2 / sigma^2) sum_i exp(2 Z_i theta) Z_i.
Eigen::VectorXd score_theta(const FitState& state, const Eigen::MatrixXd& z);

/// J(theta) = 2 (S0^2 / sigma^2) sum_i exp(2 Z_i theta) Z_i' Z_i.
Eigen::MatrixXd fisher_info_theta(const FitState& state, const Eigen::MatrixXd& z);

struct ScoringResult {
  Eigen::VectorXd theta;
  int iterations = 0;
  bool converged = false;
  bool failed = false;  // stabilized matrix singular even after the ridge
};

/// Iterates theta <- theta + ((1 - alpha) J + alpha S S')^-1 S with step
/// halving until the relative step falls below tol_scoring (or one step when
/// single_step_scoring is set). With a prior, S - omega theta and J + omega
/// are used.
ScoringResult scoring_step(const FitState& state, const Eigen::MatrixXd& z, const FitOptions& options,
                           double alpha, const PriorSpec* prior = nullptr);

/// LS or WLS regression of log Y on (1, Z) over rows with Y > 0 and
/// b <= init_b_cutoff. Throws InitializationError when fewer than d + 1 rows
/// are usable.
FitState initialize(const Design& design, const Eigen::VectorXd& y, const FitOptions& options = {});

FitReport fit_mle(const Design& design, const Eigen::VectorXd& y, const FitOptions& options = {});
FitReport fit_map(const Design& design, const Eigen::VectorXd& y, const PriorSpec& prior,
                  const FitOptions& options = {});

FitReport fit_mle(const AcquisitionScheme& scheme, const Eigen::VectorXd& y, TensorOrder order,
                  const FitOptions& options = {});
FitReport fit_map(const AcquisitionScheme& scheme, const Eigen::VectorXd& y, TensorOrder order,
                  const PriorSpec& prior, const FitOptions& options = {});

}  // namespace riceem
