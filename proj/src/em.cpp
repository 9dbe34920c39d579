#include "riceem/em.hpp"

#include "riceem/loglinear.hpp"
#include "riceem/rician.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace riceem {

namespace {

// Neumaier-compensated sum; log-likelihoods of long scans are large and the
// per-sweep increments near convergence are tiny.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

void check_shapes(const Eigen::MatrixXd& z, const Eigen::VectorXd& y) {
  if (z.rows() != y.size()) {
    throw std::invalid_argument("design has " + std::to_string(z.rows()) + " rows but data has " +
                                std::to_string(y.size()) + " magnitudes");
  }
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (!std::isfinite(y[i]) || y[i] < 0.0) {
      throw std::invalid_argument("magnitudes must be finite and >= 0 (row " + std::to_string(i) + ")");
    }
  }
}

Eigen::VectorXd exp2eta(const Eigen::MatrixXd& z, const Eigen::VectorXd& theta) {
  return (2.0 * (z * theta).array()).exp().matrix();
}

}  // namespace

// ---------------------------------------------------------------------------

void FitOptions::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("FitOptions: alpha must lie in [0, 1]");
  if (!(tol_scoring > 0.0) || !(tol_theta > 0.0) || !(tol_loglik > 0.0)) {
    throw std::invalid_argument("FitOptions: tolerances must be > 0");
  }
  if (max_em_iters < 1 || max_scoring_iters < 1) {
    throw std::invalid_argument("FitOptions: iteration caps must be >= 1");
  }
  if (anderson_memory < 1) throw std::invalid_argument("FitOptions: anderson_memory must be >= 1");
}

PriorSpec PriorSpec::isotropic(int d, double omega_scale, double c1, double c2) {
  PriorSpec p;
  p.omega = omega_scale * Eigen::MatrixXd::Identity(d, d);
  p.c1 = c1;
  p.c2 = c2;
  return p;
}

void PriorSpec::validate(int d) const {
  if (omega.rows() != d || omega.cols() != d) {
    throw std::invalid_argument("PriorSpec: omega must be " + std::to_string(d) + "x" + std::to_string(d));
  }
  if (!omega.isApprox(omega.transpose(), 1e-12) && !(omega - omega.transpose()).isZero(1e-300)) {
    throw std::invalid_argument("PriorSpec: omega must be symmetric");
  }
  if (d > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(omega, Eigen::EigenvaluesOnly);
    const double scale = std::max(1.0, omega.cwiseAbs().maxCoeff());
    if (es.eigenvalues().minCoeff() < -1e-12 * scale) {
      throw std::invalid_argument("PriorSpec: omega must be positive semi-definite");
    }
  }
  if (!(c1 > 0.0) || !(c2 > 0.0)) throw std::invalid_argument("PriorSpec: c1 and c2 must be > 0");
}

double PriorSpec::log_density(const Eigen::VectorXd& theta, double s0_sq, double sigma_sq) const {
  return -0.5 * theta.dot(omega * theta) + c1 * std::log(s0_sq) - c2 * s0_sq - std::log(sigma_sq);
}

// ---------------------------------------------------------------------------

Eigen::VectorXd poisson_means(const Eigen::MatrixXd& z, const Eigen::VectorXd& theta, double s0_sq,
                              double sigma_sq) {
  return (s0_sq / (2.0 * sigma_sq)) * exp2eta(z, theta);
}

double marginal_loglik(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& theta, double s0_sq, double sigma_sq) {
  const Eigen::VectorXd eta = z * theta;
  const double s0 = std::sqrt(s0_sq);
  const double log_s2 = std::log(sigma_sq);
  CompensatedSum sum;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double s = s0 * std::exp(eta[i]);
    if (y[i] > 0.0) {
      sum.add(std::log(y[i]) - log_s2 - (y[i] * y[i] + s * s) / (2.0 * sigma_sq) +
              log_bessel_i0(y[i] * s / sigma_sq));
    } else {
      sum.add(-log_s2 - s * s / (2.0 * sigma_sq));
    }
  }
  return sum.value();
}

double augmented_surrogate(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& n_expect, const Eigen::VectorXd& theta,
                           double s0_sq, double sigma_sq) {
  const Eigen::VectorXd eta = z * theta;
  const double log_s0 = std::log(s0_sq);
  const double log_s2 = std::log(sigma_sq);
  CompensatedSum sum;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    sum.add((log_s0 - 2.0 * log_s2 + 2.0 * eta[i]) * n_expect[i] - log_s2 -
            (s0_sq * std::exp(2.0 * eta[i]) + y[i] * y[i]) / (2.0 * sigma_sq));
  }
  return sum.value();
}

double surrogate_theta(const FitState& state, const Eigen::MatrixXd& z, const Eigen::VectorXd& theta) {
  const Eigen::VectorXd eta = z * theta;
  const double scale = state.s0_sq / (2.0 * state.sigma_sq);
  CompensatedSum sum;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    sum.add(2.0 * eta[i] * state.n_expect[i] - scale * std::exp(2.0 * eta[i]));
  }
  return sum.value();
}

Eigen::VectorXd e_step(const FitState& state, const Eigen::MatrixXd& z, const Eigen::VectorXd& y) {
  const Eigen::VectorXd eta = z * state.theta.theta;
  const double s0 = std::sqrt(state.s0_sq);
  Eigen::VectorXd n(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double tau = y[i] * s0 * std::exp(eta[i]) / (2.0 * state.sigma_sq);
    n[i] = augmented_expectation(tau);
  }
  return n;
}

double m_step_sigma(const FitState& state, const Eigen::MatrixXd& z, const Eigen::VectorXd& y) {
  const double num = state.s0_sq * exp2eta(z, state.theta.theta).sum() + y.squaredNorm();
  if (!(num > 0.0)) throw DegenerateDataError("sigma^2 update: all signals and magnitudes are zero");
  const double m = static_cast<double>(y.size());
  return num / (2.0 * m + 4.0 * state.n_expect.sum());
}

S0Update m_step_s0(const FitState& state, const Eigen::MatrixXd& z) {
  const double n_sum = state.n_expect.sum();
  if (!(n_sum > 0.0)) return {kS0SqFloor, true};
  const double e_sum = exp2eta(z, state.theta.theta).sum();
  if (!(e_sum > 0.0)) throw DegenerateDataError("S0^2 update: exp(2 Z theta) underflows on every row");
  return {2.0 * state.sigma_sq * n_sum / e_sum, false};
}

double m_step_sigma_map(const FitState& state, const Eigen::MatrixXd& z, const Eigen::VectorXd& y) {
  const double num = 0.5 * (state.s0_sq * exp2eta(z, state.theta.theta).sum() + y.squaredNorm());
  if (!(num > 0.0)) throw DegenerateDataError("sigma^2 update: all signals and magnitudes are zero");
  return num / ((2.0 * state.n_expect.array() + 1.0).sum() + 1.0);
}

S0Update m_step_s0_map(const FitState& state, const Eigen::MatrixXd& z, const PriorSpec& prior) {
  const double n_sum = state.n_expect.sum();
  const double rate = exp2eta(z, state.theta.theta).sum() / (2.0 * state.sigma_sq) + prior.c2;
  return {(n_sum + prior.c1) / rate, !(n_sum > 0.0)};
}

Eigen::VectorXd score_theta(const FitState& state, const Eigen::MatrixXd& z) {
  const Eigen::VectorXd e = exp2eta(z, state.theta.theta);
  return 2.0 * z.transpose() * state.n_expect - (state.s0_sq / state.sigma_sq) * (z.transpose() * e);
}

Eigen::MatrixXd fisher_info_theta(const FitState& state, const Eigen::MatrixXd& z) {
  const Eigen::VectorXd e = exp2eta(z, state.theta.theta);
  return 2.0 * (state.s0_sq / state.sigma_sq) * (z.transpose() * e.asDiagonal() * z);
}

ScoringResult scoring_step(const FitState& state, const Eigen::MatrixXd& z, const FitOptions& options,
                           double alpha, const PriorSpec* prior) {
  constexpr int kMaxHalvings = 30;
  const Eigen::Index d = z.cols();
  const double ratio = state.s0_sq / state.sigma_sq;
  const Eigen::VectorXd zn2 = 2.0 * z.transpose() * state.n_expect;

  // Surrogate in theta, written as sum_i 2 eta_i <N_i> - ratio/2 sum_i e_i with
  // e = exp(2 Z theta); the first sum equals theta . zn2.
  auto evaluate = [&](const Eigen::VectorXd& theta, Eigen::VectorXd& e) {
    e = (2.0 * (z * theta).array()).exp().matrix();
    double q = theta.dot(zn2) - 0.5 * ratio * e.sum();
    if (prior) q -= 0.5 * theta.dot(prior->omega * theta);
    return q;
  };

  ScoringResult out;
  out.theta = state.theta.theta;
  Eigen::VectorXd e;
  double q = evaluate(out.theta, e);
  Eigen::VectorXd e_candidate;
  for (int it = 0; it < options.max_scoring_iters; ++it) {
    Eigen::VectorXd s = zn2 - ratio * (z.transpose() * e);
    Eigen::MatrixXd j = (2.0 * ratio) * (z.transpose() * (z.array().colwise() * e.array()).matrix());
    if (prior) {
      s -= prior->omega * out.theta;
      j += prior->omega;
    }
    out.iterations = it + 1;
    if (s.isZero(0.0)) {
      out.converged = true;
      break;
    }
    Eigen::MatrixXd h = (1.0 - alpha) * j + alpha * (s * s.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(h);
    if (llt.info() != Eigen::Success) {
      const double ridge = 1e-10 * h.trace() / static_cast<double>(d);
      h.diagonal().array() += ridge;
      llt.compute(h);
      if (llt.info() != Eigen::Success || !(ridge > 0.0)) {
        out.failed = true;
        break;
      }
    }
    const Eigen::VectorXd delta = llt.solve(s);
    if (!delta.allFinite()) {
      out.failed = true;
      break;
    }

    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd candidate;
    double q_new = q;
    for (int h_count = 0; h_count <= kMaxHalvings; ++h_count) {
      candidate = out.theta + step * delta;
      q_new = evaluate(candidate, e_candidate);
      if (q_new >= q) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // No ascent along the step at rounding resolution: theta is at the fixed point.
      out.converged = true;
      break;
    }
    const double move = (candidate - out.theta).norm();
    const double ref = std::max(out.theta.norm(), std::numeric_limits<double>::min());
    out.theta = candidate;
    e.swap(e_candidate);
    q = q_new;
    if (move <= options.tol_scoring * ref) {
      out.converged = true;
      break;
    }
    if (options.single_step_scoring) break;
  }
  return out;
}

FitState initialize(const Design& design, const Eigen::VectorXd& y, const FitOptions& options) {
  check_shapes(design.z, y);
  const int d = static_cast<int>(design.cols());
  const auto rows = usable_rows(design, y, options.init_b_cutoff);
  if (static_cast<int>(rows.size()) < d + 1) {
    Eigen::Index zeros = 0;
    Eigen::Index above = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (!(y[i] > 0.0)) {
        ++zeros;
      } else if (design.b[i] > options.init_b_cutoff) {
        ++above;
      }
    }
    throw InitializationError("initialization needs at least " + std::to_string(d + 1) +
                              " rows with Y > 0 and b <= " + std::to_string(options.init_b_cutoff) +
                              ", found " + std::to_string(rows.size()) + " of " +
                              std::to_string(y.size()) + " (" + std::to_string(zeros) +
                              " zero magnitudes, " + std::to_string(above) + " above cutoff)");
  }
  LogLinearFit ls;
  LogLinearFit chosen;
  try {
    ls = log_linear_fit(design, y, rows);
    chosen = options.init_method == InitMethod::WLS ? wls_fit(design, y, rows, 1) : ls;
  } catch (const RankDeficientError& e) {
    throw InitializationError(std::string("initialization failed: ") + e.what());
  }

  FitState state;
  state.theta = TensorParams(design.order, chosen.theta);
  state.s0_sq = std::exp(2.0 * chosen.log_s0);
  const double gm_sq = std::exp(2.0 * ls.fitted_log.mean());
  double sigma_sq = delta_method_sigma_sq(ls, d + 1);
  if (!(sigma_sq > 1e-10 * gm_sq)) sigma_sq = 1e-10 * gm_sq;
  state.sigma_sq = sigma_sq;
  state.n_expect = Eigen::VectorXd::Zero(y.size());
  state.marginal_loglik = marginal_loglik(design.z, y, state.theta.theta, state.s0_sq, state.sigma_sq);
  return state;
}

// ---------------------------------------------------------------------------

namespace {

FitReport degenerate_report(const Design& design, const Eigen::VectorXd& y, const char* method) {
  FitReport r;
  r.method = method;
  r.theta = TensorParams(design.order, Eigen::VectorXd::Zero(design.cols()));
  r.s0_sq = kS0SqFloor;
  r.sigma_sq = std::numeric_limits<double>::min();
  r.degenerate = true;
  r.n_expect = Eigen::VectorXd::Zero(y.size());
  r.final_loglik = marginal_loglik(design.z, y, r.theta.theta, r.s0_sq, r.sigma_sq);
  r.objective_trace.push_back(r.final_loglik);
  return r;
}

class EmEngine {
 public:
  EmEngine(const Design& design, const Eigen::VectorXd& y, const FitOptions& options,
           const PriorSpec* prior)
      : design_(design), y_(y), options_(options), prior_(prior), alpha_(options.alpha) {}

  double objective(const FitState& s) const {
    double v = marginal_loglik(design_.z, y_, s.theta.theta, s.s0_sq, s.sigma_sq);
    if (prior_) v += prior_->log_density(s.theta.theta, s.s0_sq, s.sigma_sq);
    return v;
  }

  // One EM sweep: E-step, theta scoring, sigma^2, then S0^2.
  FitState sweep(const FitState& in, FitReport& report, bool with_objective = true) {
    const Eigen::MatrixXd& z = design_.z;
    FitState state = in;
    state.n_expect = e_step(state, z, y_);
    const bool annealing = alpha_ > 0.0;
    const double q_before = annealing ? surrogate(state) : 0.0;

    const ScoringResult sr = scoring_step(state, z, options_, alpha_, prior_);
    if (sr.failed) ++report.scoring_failures;
    state.theta.theta = sr.theta;
    if (options_.positivity_projection && design_.order == TensorOrder::Two) {
      state.theta = project_positive(state.theta, options_.eigenvalue_floor);
    }

    state.sigma_sq = prior_ ? m_step_sigma_map(state, z, y_) : m_step_sigma(state, z, y_);
    const S0Update s0 = prior_ ? m_step_s0_map(state, z, *prior_) : m_step_s0(state, z);
    state.s0_sq = s0.s0_sq;
    if (s0.degenerate) report.degenerate = true;

    if (annealing && surrogate(state) - q_before < options_.anneal_threshold) alpha_ = 0.0;
    state.marginal_loglik = with_objective ? objective(state) : std::numeric_limits<double>::quiet_NaN();
    return state;
  }

 private:
  double surrogate(const FitState& s) const {
    double v = augmented_surrogate(design_.z, y_, s.n_expect, s.theta.theta, s.s0_sq, s.sigma_sq);
    if (prior_) v += prior_->log_density(s.theta.theta, s.s0_sq, s.sigma_sq);
    return v;
  }

  const Design& design_;
  const Eigen::VectorXd& y_;
  const FitOptions& options_;
  const PriorSpec* prior_;
  double alpha_;
};

// Parameters stacked as (theta, log S0^2, log sigma^2) for extrapolation.
Eigen::VectorXd pack(const FitState& s) {
  const Eigen::Index d = s.theta.theta.size();
  Eigen::VectorXd x(d + 2);
  x.head(d) = s.theta.theta;
  x[d] = std::log(s.s0_sq);
  x[d + 1] = std::log(s.sigma_sq);
  return x;
}

FitState unpack(const Eigen::VectorXd& x, TensorOrder order) {
  const Eigen::Index d = x.size() - 2;
  FitState s;
  s.theta = TensorParams(order, x.head(d));
  s.s0_sq = std::exp(x[d]);
  s.sigma_sq = std::exp(x[d + 1]);
  return s;
}

FitReport run_em(const Design& design, const Eigen::VectorXd& y, const FitOptions& options,
                 const PriorSpec* prior) {
  options.validate();
  check_shapes(design.z, y);
  if (prior) prior->validate(static_cast<int>(design.cols()));
  const char* method = prior ? "map" : "mle";
  if ((y.array() == 0.0).all()) return degenerate_report(design, y, method);

  FitReport report;
  report.method = method;
  EmEngine engine(design, y, options, prior);
  FitState state = initialize(design, y, options);
  state.marginal_loglik = engine.objective(state);
  report.objective_trace.push_back(state.marginal_loglik);

  int sweeps = 0;
  auto converged = [&](const FitState& prev, const FitState& next) {
    const double move = (next.theta.theta - prev.theta.theta).norm();
    const double ref = std::max(prev.theta.theta.norm(), std::numeric_limits<double>::min());
    return move <= options.tol_theta * ref &&
           std::abs(next.marginal_loglik - prev.marginal_loglik) <= options.tol_loglik;
  };

  auto accept = [&](FitState next) {
    const bool done = converged(state, next);
    state = std::move(next);
    report.objective_trace.push_back(state.marginal_loglik);
    if (done) report.converged = true;
  };

  if (options.acceleration == Acceleration::None) {
    while (!report.converged && sweeps < options.max_em_iters) {
      accept(engine.sweep(state, report));
      ++sweeps;
    }
  } else {
    // Anderson mixing on the sweep map in coordinates where a theta change
    // is measured by its effect on the log signal. A mixed point is kept only
    // when the sweep from it does not lower the objective; otherwise the
    // history is dropped and a plain sweep is taken from the last accepted state.
    const Eigen::Index d = design.cols();
    Eigen::VectorXd scale = Eigen::VectorXd::Ones(d + 2);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double s = design.z.col(j).norm() / std::sqrt(static_cast<double>(design.rows()));
      if (s > 0.0) scale[j] = s;
    }
    auto to_coords = [&](const FitState& s) -> Eigen::VectorXd { return pack(s).cwiseProduct(scale); };
    auto from_coords = [&](const Eigen::VectorXd& x) { return unpack(x.cwiseQuotient(scale), design.order); };

    std::vector<Eigen::VectorXd> d_res;
    std::vector<Eigen::VectorXd> d_img;
    Eigen::VectorXd image;     // sweep image of the current iterate
    Eigen::VectorXd residual;  // image - iterate
    auto plain_sweep = [&] {
      d_res.clear();
      d_img.clear();
      const Eigen::VectorXd x = to_coords(state);
      FitState next = engine.sweep(state, report);
      ++sweeps;
      image = to_coords(next);
      residual = image - x;
      accept(std::move(next));
    };

    plain_sweep();
    while (!report.converged && sweeps < options.max_em_iters) {
      const auto mk = static_cast<Eigen::Index>(d_res.size());
      Eigen::VectorXd x = image;
      if (mk > 0) {
        Eigen::MatrixXd f(residual.size(), mk);
        Eigen::MatrixXd g(residual.size(), mk);
        for (Eigen::Index j = 0; j < mk; ++j) {
          f.col(j) = d_res[static_cast<std::size_t>(j)];
          g.col(j) = d_img[static_cast<std::size_t>(j)];
        }
        const Eigen::VectorXd gamma = f.colPivHouseholderQr().solve(residual);
        if (gamma.allFinite()) x = image - g * gamma;
      }
      FitState next;
      bool usable = x.allFinite();
      if (usable) {
        try {
          next = engine.sweep(from_coords(x), report);
        } catch (const std::exception&) {
          usable = false;
        }
      }
      ++sweeps;
      if (!usable || !std::isfinite(next.marginal_loglik) ||
          (mk > 0 && next.marginal_loglik < state.marginal_loglik)) {
        if (sweeps < options.max_em_iters) plain_sweep();
        continue;
      }
      const Eigen::VectorXd next_image = to_coords(next);
      const Eigen::VectorXd next_residual = next_image - x;
      d_res.push_back(next_residual - residual);
      d_img.push_back(next_image - image);
      if (static_cast<int>(d_res.size()) > options.anderson_memory) {
        d_res.erase(d_res.begin());
        d_img.erase(d_img.begin());
      }
      image = next_image;
      residual = next_residual;
      accept(std::move(next));
    }
  }

  report.theta = state.theta;
  report.s0_sq = state.s0_sq;
  report.sigma_sq = state.sigma_sq;
  report.iterations = sweeps;
  report.n_expect = e_step(state, design.z, y);
  report.final_loglik = marginal_loglik(design.z, y, state.theta.theta, state.s0_sq, state.sigma_sq);
  return report;
}

}  // namespace

FitReport fit_mle(const Design& design, const Eigen::VectorXd& y, const FitOptions& options) {
  return run_em(design, y, options, nullptr);
}

FitReport fit_map(const Design& design, const Eigen::VectorXd& y, const PriorSpec& prior,
                  const FitOptions& options) {
  return run_em(design, y, options, &prior);
}

FitReport fit_mle(const AcquisitionScheme& scheme, const Eigen::VectorXd& y, TensorOrder order,
                  const FitOptions& options) {
  return fit_mle(make_design(scheme, order), y, options);
}

FitReport fit_map(const AcquisitionScheme& scheme, const Eigen::VectorXd& y, TensorOrder order,
                  const PriorSpec& prior, const FitOptions& options) {
  return fit_map(make_design(scheme, order), y, prior, options);
}

}  // namespace riceem
