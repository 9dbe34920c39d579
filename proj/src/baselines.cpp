#include "riceem/baselines.hpp"

#include "riceem/loglinear.hpp"
#include "riceem/rician.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace riceem {

std::string_view to_string(BaselineMethod method) {
  switch (method) {
    case BaselineMethod::LS: return "ls";
    case BaselineMethod::WLS: return "wls";
    case BaselineMethod::LSTruncated: return "ls-trunc";
    case BaselineMethod::WLSTruncated: return "wls-trunc";
    case BaselineMethod::RicianDirect: return "rician-direct";
  }
  return "unknown";
}

namespace {

BaselineReport from_log_fit(const Design& design, const Eigen::VectorXd& y, const LogLinearFit& fit,
                            const LogLinearFit& ls, BaselineMethod method) {
  BaselineReport r;
  r.method = method;
  r.theta = TensorParams(design.order, fit.theta);
  r.s0_sq = std::exp(2.0 * fit.log_s0);
  const double gm_sq = std::exp(2.0 * ls.fitted_log.mean());
  r.sigma_sq = std::max(delta_method_sigma_sq(ls, static_cast<int>(design.cols()) + 1), 1e-10 * gm_sq);
  r.converged = true;
  r.iterations = 1;
  r.loglik = marginal_loglik(design.z, y, r.theta.theta, r.s0_sq, r.sigma_sq);
  return r;
}

void check_data(const Design& design, const Eigen::VectorXd& y) {
  if (design.rows() != y.size()) {
    throw std::invalid_argument("design has " + std::to_string(design.rows()) +
                                " rows but data has " + std::to_string(y.size()) + " magnitudes");
  }
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (!std::isfinite(y[i]) || y[i] < 0.0) {
      throw std::invalid_argument("magnitudes must be finite and >= 0 (row " + std::to_string(i) + ")");
    }
  }
}

double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b == -std::numeric_limits<double>::infinity()) return a;
  return a + std::log1p(std::exp(b - a));
}

// log P(Y <= c) for a Rician magnitude written through its Poisson-Gamma
// mixture, with t = S^2 / (2 sigma^2) and u = c^2 / (2 sigma^2):
//   P = exp(-t - u) sum_n W_n T_{n+1},  W_n = t^n / n!,  T_j = sum_{k >= j} u^k / k!.
struct CensoredTerms {
  double logp = 0.0;
  double d_t = 0.0;   // d log P / dt
  double d_u = 0.0;   // d log P / du
  double d_tt = 0.0;  // d^2 log P / dt^2
};

CensoredTerms censored_terms(double t, double u) {
  u = std::max(u, std::numeric_limits<double>::min());
  const double span = t + u;
  const int n_max = static_cast<int>(std::ceil(span + 12.0 * std::sqrt(span) + 40.0));
  const double log_t = std::log(t);
  const double log_u = std::log(u);
  auto log_w = [&](int n) { return n == 0 ? 0.0 : n * log_t - std::lgamma(n + 1.0); };
  auto log_h = [&](int k) { return k * log_u - std::lgamma(k + 1.0); };

  std::vector<double> log_tail(static_cast<std::size_t>(n_max) + 3);
  {
    const int j = n_max + 2;
    double sum = 1.0;
    double term = 1.0;
    for (int k = j + 1; k < j + 1000000; ++k) {
      term *= u / k;
      sum += term;
      if (term < 1e-17 * sum) break;
    }
    log_tail[static_cast<std::size_t>(j)] = log_h(j) + std::log(sum);
  }
  for (int j = n_max + 1; j >= 1; --j) {
    log_tail[static_cast<std::size_t>(j)] = log_add(log_tail[static_cast<std::size_t>(j) + 1], log_h(j));
  }

  const double neg_inf = -std::numeric_limits<double>::infinity();
  double log_p = neg_inf;
  for (int n = 0; n <= n_max; ++n) {
    if (t == 0.0 && n > 0) break;
    log_p = log_add(log_p, log_w(n) + log_tail[static_cast<std::size_t>(n) + 1]);
  }
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  for (int n = 0; n <= n_max; ++n) {
    if (t == 0.0 && n > 0) break;
    const double lw = log_w(n) - log_p;
    const double h1 = std::exp(lw + log_h(n + 1));
    a += h1;
    b += std::exp(lw + log_h(n));
    c += h1 * (1.0 - u / (n + 2.0));
  }
  CensoredTerms out;
  out.logp = -t - u + log_p;
  out.d_t = -a;
  out.d_u = b;
  out.d_tt = c - a * a;
  return out;
}

struct DirectEval {
  double loglik = 0.0;
  Eigen::VectorXd grad_theta;
  double grad_s0_sq = 0.0;
  double grad_sigma_sq = 0.0;
  Eigen::MatrixXd hess_theta;  // filled on request
};

DirectEval evaluate(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, const Eigen::VectorXd& theta,
                    double s0_sq, double sigma_sq, double y_min, bool want_hessian) {
  if (!(s0_sq >= 0.0) || !(sigma_sq > 0.0) || !std::isfinite(s0_sq) || !std::isfinite(sigma_sq)) {
    throw std::domain_error("direct likelihood needs s0_sq >= 0 and finite sigma_sq > 0");
  }
  const Eigen::Index m = y.size();
  const Eigen::VectorXd eta = z * theta;
  Eigen::VectorXd d_eta(m);
  Eigen::VectorXd d_eta2;
  if (want_hessian) d_eta2.resize(m);

  const double v = sigma_sq;
  const double log_v = std::log(v);
  const double u = y_min * y_min / (2.0 * v);
  double sum = 0.0;
  double comp = 0.0;
  auto add = [&](double x) {
    const double t = sum + x;
    comp += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  };
  double g_s = 0.0;
  double g_v = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double e = std::exp(2.0 * eta[i]);
    const double sig_sq = s0_sq * e;
    if (y[i] > 0.0) {
      const double kappa = y[i] * std::sqrt(sig_sq) / v;
      const double r = bessel_ratio_i1_i0(kappa);
      add(std::log(y[i]) - log_v - (y[i] * y[i] + sig_sq) / (2.0 * v) + log_bessel_i0(kappa));
      d_eta[i] = -sig_sq / v + r * kappa;
      if (want_hessian) {
        d_eta2[i] = -2.0 * sig_sq / v + kappa * r + kappa * kappa * bessel_ratio_derivative(kappa);
      }
      g_s += -e / (2.0 * v) + (s0_sq > 0.0 ? r * kappa / (2.0 * s0_sq) : 0.0);
      g_v += -1.0 / v + (y[i] * y[i] + sig_sq) / (2.0 * v * v) - r * kappa / v;
    } else {
      if (!(y_min > 0.0)) throw std::invalid_argument("zero magnitudes need a censoring floor y_min > 0");
      const double t = sig_sq / (2.0 * v);
      const CensoredTerms c = censored_terms(t, u);
      add(c.logp);
      d_eta[i] = 2.0 * t * c.d_t;
      if (want_hessian) d_eta2[i] = 4.0 * t * t * c.d_tt + 4.0 * t * c.d_t;
      g_s += c.d_t * e / (2.0 * v);
      g_v += -(t * c.d_t + u * c.d_u) / v;
    }
  }
  DirectEval out;
  out.loglik = sum + comp;
  out.grad_theta = z.transpose() * d_eta;
  out.grad_s0_sq = g_s;
  out.grad_sigma_sq = g_v;
  if (want_hessian) out.hess_theta = z.transpose() * d_eta2.asDiagonal() * z;
  return out;
}

}  // namespace

BaselineReport fit_ls(const Design& design, const Eigen::VectorXd& y, std::optional<double> b_cutoff) {
  check_data(design, y);
  const auto rows = usable_rows(design, y, b_cutoff);
  const LogLinearFit ls = log_linear_fit(design, y, rows);
  return from_log_fit(design, y, ls, ls, b_cutoff ? BaselineMethod::LSTruncated : BaselineMethod::LS);
}

BaselineReport fit_wls(const Design& design, const Eigen::VectorXd& y, std::optional<double> b_cutoff) {
  check_data(design, y);
  const auto rows = usable_rows(design, y, b_cutoff);
  const LogLinearFit ls = log_linear_fit(design, y, rows);
  const LogLinearFit wls = wls_fit(design, y, rows, 2);
  return from_log_fit(design, y, wls, ls, b_cutoff ? BaselineMethod::WLSTruncated : BaselineMethod::WLS);
}

double default_censor_floor(const Eigen::VectorXd& y) {
  double smallest = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] > 0.0) smallest = std::min(smallest, y[i]);
  }
  if (!std::isfinite(smallest)) throw std::invalid_argument("no positive magnitude to derive a censoring floor from");
  return 0.5 * smallest;
}

double rician_direct_loglik(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& theta, double s0_sq, double sigma_sq,
                            double y_min) {
  return evaluate(z, y, theta, s0_sq, sigma_sq, y_min, false).loglik;
}

DirectGradient rician_direct_gradient(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                      const Eigen::VectorXd& theta, double s0_sq,
                                      double sigma_sq, double y_min) {
  DirectEval ev = evaluate(z, y, theta, s0_sq, sigma_sq, y_min, false);
  return {std::move(ev.grad_theta), ev.grad_s0_sq, ev.grad_sigma_sq};
}

Eigen::MatrixXd rician_direct_hessian_theta(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                            const Eigen::VectorXd& theta, double s0_sq,
                                            double sigma_sq, double y_min) {
  return evaluate(z, y, theta, s0_sq, sigma_sq, y_min, true).hess_theta;
}

Eigen::MatrixXd rician_approx_fisher(const Eigen::MatrixXd& z, const Eigen::VectorXd& theta,
                                     double s0_sq, double sigma_sq) {
  const Eigen::VectorXd w = ((s0_sq / sigma_sq) * (2.0 * (z * theta).array()).exp() - 0.5).matrix();
  return z.transpose() * w.asDiagonal() * z;
}

// ---------------------------------------------------------------------------

namespace {

struct Point {
  Eigen::VectorXd theta;
  double log_s0_sq = 0.0;
  double log_sigma_sq = 0.0;

  double s0_sq() const { return std::exp(log_s0_sq); }
  double sigma_sq() const { return std::exp(log_sigma_sq); }
};

class DirectProblem {
 public:
  DirectProblem(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, double y_min)
      : z_(z), y_(y), y_min_(y_min) {}

  double value(const Point& p) const {
    return evaluate(z_, y_, p.theta, p.s0_sq(), p.sigma_sq(), y_min_, false).loglik;
  }
  DirectEval full(const Point& p, bool hessian) const {
    return evaluate(z_, y_, p.theta, p.s0_sq(), p.sigma_sq(), y_min_, hessian);
  }
  // Gradient in (log S0^2, log sigma^2).
  Eigen::Vector2d scale_gradient(const Point& p) const {
    const DirectEval ev = full(p, false);
    return {ev.grad_s0_sq * p.s0_sq(), ev.grad_sigma_sq * p.sigma_sq()};
  }
  // Curvature in (log S0^2, log sigma^2) by central differences of the analytic gradient.
  Eigen::Matrix2d scale_hessian(const Point& p) const {
    constexpr double h = 1e-5;
    Eigen::Matrix2d hess;
    for (int j = 0; j < 2; ++j) {
      Point up = p;
      Point dn = p;
      (j == 0 ? up.log_s0_sq : up.log_sigma_sq) += h;
      (j == 0 ? dn.log_s0_sq : dn.log_sigma_sq) -= h;
      hess.col(j) = (scale_gradient(up) - scale_gradient(dn)) / (2.0 * h);
    }
    return 0.5 * (hess + hess.transpose());
  }

  const Eigen::MatrixXd& z() const { return z_; }

 private:
  const Eigen::MatrixXd& z_;
  const Eigen::VectorXd& y_;
  double y_min_;
};

struct BlockStep {
  Eigen::VectorXd direction;
  double decrement = std::numeric_limits<double>::infinity();  // g' N^-1 g when N is positive definite
};

// Newton direction for ascent with negative Hessian `neg_h`; falls back to a
// gradient step scaled by the mean curvature magnitude when neg_h is not
// positive definite.
BlockStep newton_direction(const Eigen::MatrixXd& neg_h, const Eigen::VectorXd& g) {
  BlockStep out;
  Eigen::LLT<Eigen::MatrixXd> llt(neg_h);
  if (llt.info() == Eigen::Success) {
    out.direction = llt.solve(g);
    if (out.direction.allFinite()) {
      out.decrement = std::max(0.0, g.dot(out.direction));
      return out;
    }
  }
  const double scale = neg_h.diagonal().cwiseAbs().mean();
  out.direction = g / (scale > 0.0 ? scale : 1.0);
  return out;
}

template <class Apply>
bool line_search(const DirectProblem& problem, Point& p, double& f, Apply&& apply) {
  constexpr int kMaxHalvings = 40;
  double step = 1.0;
  for (int k = 0; k <= kMaxHalvings; ++k) {
    Point cand = apply(p, step);
    double f_new = -std::numeric_limits<double>::infinity();
    try {
      f_new = problem.value(cand);
    } catch (const std::domain_error&) {
    }
    if (std::isfinite(f_new) && f_new >= f) {
      const bool moved = f_new > f;
      p = std::move(cand);
      f = f_new;
      return moved;
    }
    step *= 0.5;
  }
  return false;
}

}  // namespace

BaselineReport fit_rician_direct(const Design& design, const Eigen::VectorXd& y, const DirectOptions& options) {
  check_data(design, y);
  if (options.max_iters < 1 || !(options.tol > 0.0)) {
    throw std::invalid_argument("DirectOptions: max_iters >= 1 and tol > 0 required");
  }
  BaselineReport report;
  report.method = BaselineMethod::RicianDirect;
  if ((y.array() == 0.0).all()) {
    report.theta = TensorParams(design.order, Eigen::VectorXd::Zero(design.cols()));
    report.s0_sq = kS0SqFloor;
    report.sigma_sq = std::numeric_limits<double>::min();
    report.degenerate = true;
    return report;
  }
  const bool has_zeros = (y.array() == 0.0).any();
  const double y_min = has_zeros ? options.y_min.value_or(default_censor_floor(y)) : 0.0;
  if (has_zeros && !(y_min > 0.0)) throw std::invalid_argument("DirectOptions: y_min must be > 0");

  const FitState init = initialize(design, y, options.init);
  DirectProblem problem(design.z, y, y_min);
  Point p{init.theta.theta, std::log(init.s0_sq), std::log(init.sigma_sq)};
  double f = problem.value(p);
  const Eigen::Index d = design.cols();

  int iter = 0;
  for (iter = 1; iter <= options.max_iters; ++iter) {
    const DirectEval ev = problem.full(p, !options.use_approx_fisher);
    Eigen::MatrixXd neg_h;
    if (options.use_approx_fisher) {
      const Eigen::VectorXd w = ((p.s0_sq() / p.sigma_sq()) * (2.0 * (design.z * p.theta).array()).exp() - 0.5)
                                    .max(0.0)
                                    .matrix();
      neg_h = design.z.transpose() * w.asDiagonal() * design.z;
      neg_h.diagonal().array() += 1e-10 * std::max(neg_h.trace(), 1.0) / static_cast<double>(d);
    } else {
      neg_h = -ev.hess_theta;
    }
    const BlockStep theta_step = newton_direction(neg_h, ev.grad_theta);
    const Eigen::Vector2d g_scale(ev.grad_s0_sq * p.s0_sq(), ev.grad_sigma_sq * p.sigma_sq());
    BlockStep scale_step = newton_direction(-problem.scale_hessian(p), g_scale);

    const double decrement = theta_step.decrement + scale_step.decrement;
    if (std::sqrt(decrement) < options.tol) {
      report.converged = true;
      break;
    }

    const bool moved_theta = line_search(problem, p, f, [&](const Point& q, double step) {
      Point c = q;
      c.theta += step * theta_step.direction;
      return c;
    });

    const Eigen::Vector2d g2 = problem.scale_gradient(p);
    scale_step = newton_direction(-problem.scale_hessian(p), g2);
    // Keep a single scale step within a factor of e.
    const double cap = scale_step.direction.cwiseAbs().maxCoeff();
    if (cap > 1.0) scale_step.direction /= cap;
    const bool moved_scale = line_search(problem, p, f, [&](const Point& q, double step) {
      Point c = q;
      c.log_s0_sq += step * scale_step.direction[0];
      c.log_sigma_sq += step * scale_step.direction[1];
      return c;
    });

    if (!moved_theta && !moved_scale) {
      // No representable ascent left along either block.
      report.converged = std::sqrt(decrement) < 1e-4;
      break;
    }
  }

  report.theta = TensorParams(design.order, p.theta);
  report.s0_sq = p.s0_sq();
  report.sigma_sq = p.sigma_sq();
  report.iterations = std::min(iter, options.max_iters);
  report.loglik = f;
  return report;
}

}  // namespace riceem
