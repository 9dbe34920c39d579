#include "riceem/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace riceem {

namespace {

// Sum that does not depend on the order of the inputs.
double ordered_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum;
}

std::size_t knot_index(const AcquisitionScheme& scheme, double b) {
  const auto& knots = scheme.knots();
  for (std::size_t k = 0; k < knots.size(); ++k) {
    if (std::abs(knots[k] - b) <= 1e-9 * std::max(1.0, std::abs(knots[k]))) return k;
  }
  std::ostringstream msg;
  msg << "b = " << b << " is not a knot of the scheme; knots are";
  for (double k : knots) msg << ' ' << k;
  throw std::invalid_argument(msg.str());
}

Eigen::VectorXd fitted_at_knot(const Estimate& est, const AcquisitionScheme& scheme, std::size_t k) {
  const auto& dirs = scheme.directions();
  const double b = scheme.knots()[k];
  const double s0 = std::sqrt(est.s0_sq);
  Eigen::VectorXd out(static_cast<Eigen::Index>(dirs.size()));
  for (std::size_t j = 0; j < dirs.size(); ++j) {
    const Eigen::VectorXd z = design_row(GradientControl{b, dirs[j]}, est.theta.order);
    out[static_cast<Eigen::Index>(j)] = s0 * std::exp(z.dot(est.theta.theta));
  }
  return out;
}

}  // namespace

SnrCurve snr_curve(const Estimate& estimate, const AcquisitionScheme& scheme) {
  if (!(estimate.sigma_sq > 0.0)) throw std::invalid_argument("snr_curve: sigma_sq must be > 0");
  SnrCurve out;
  out.knots = scheme.knots();
  const double sigma = std::sqrt(estimate.sigma_sq);
  for (std::size_t k = 0; k < out.knots.size(); ++k) {
    out.snr.push_back(fitted_at_knot(estimate, scheme, k).mean() / sigma);
  }
  return out;
}

SnrCurve raw_snr_curve(const AcquisitionScheme& scheme, const Eigen::VectorXd& y) {
  if (static_cast<std::size_t>(y.size()) != scheme.size()) {
    throw std::invalid_argument("raw_snr_curve: data length does not match the scheme");
  }
  SnrCurve out;
  out.knots = scheme.knots();
  const std::size_t nk = out.knots.size();
  std::vector<std::vector<double>> by_knot(nk);
  for (std::size_t i = 0; i < scheme.size(); ++i) by_knot[scheme.knot_of_row(i)].push_back(y[static_cast<Eigen::Index>(i)]);
  for (const auto& values : by_knot) {
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    out.snr.push_back(sd > 0.0 ? mean / sd : std::numeric_limits<double>::infinity());
  }
  return out;
}

std::vector<double> signal_curve(const Estimate& estimate, const AcquisitionScheme& scheme, double b) {
  const Eigen::VectorXd s = fitted_at_knot(estimate, scheme, knot_index(scheme, b));
  return {s.data(), s.data() + s.size()};
}

const MethodMse* MseTable::find(const std::string& method) const {
  for (const auto& m : methods) {
    if (m.method == method) return &m;
  }
  return nullptr;
}

MseTable mse_report(const std::vector<FitRecord>& records, const AcquisitionScheme& scheme) {
  MseTable table;
  table.knots = scheme.knots();
  if (records.empty()) return table;
  const GroundTruth& truth = records.front().truth;
  for (const auto& r : records) {
    if (!r.truth.same_parameters(truth)) {
      throw std::invalid_argument("mse_report: records reference different ground truths (method " +
                                  r.method + ")");
    }
    if (r.estimate.theta.order != truth.theta.order) {
      throw std::invalid_argument("mse_report: estimate order differs from the truth order (method " +
                                  r.method + ")");
    }
  }

  const Estimate true_est = Estimate::from(truth);
  const std::size_t nk = table.knots.size();
  std::vector<Eigen::VectorXd> true_signal(nk);
  for (std::size_t k = 0; k < nk; ++k) true_signal[k] = fitted_at_knot(true_est, scheme, k);
  const Eigen::Index d = truth.theta.theta.size();

  std::map<std::string, std::vector<const FitRecord*>> by_method;
  for (const auto& r : records) by_method[r.method].push_back(&r);

  for (const auto& [method, group] : by_method) {
    MethodMse row;
    row.method = method;
    row.count = static_cast<int>(group.size());
    const double n = static_cast<double>(group.size());

    row.theta_mse.resize(d);
    for (Eigen::Index c = 0; c < d; ++c) {
      std::vector<double> sq;
      for (const auto* r : group) {
        const double e = r->estimate.theta.theta[c] - truth.theta.theta[c];
        sq.push_back(e * e);
      }
      row.theta_mse[c] = ordered_sum(std::move(sq)) / n;
    }
    row.theta_mse_mean = ordered_sum({row.theta_mse.data(), row.theta_mse.data() + d}) / static_cast<double>(d);

    std::vector<double> sq;
    for (const auto* r : group) {
      const double e = r->estimate.sigma_sq - truth.sigma_sq;
      sq.push_back(e * e);
    }
    row.sigma_sq_mse = ordered_sum(std::move(sq)) / n;

    for (std::size_t k = 0; k < nk; ++k) {
      std::vector<double> terms;
      for (const auto* r : group) {
        const Eigen::VectorXd s = fitted_at_knot(r->estimate, scheme, k);
        terms.push_back((s - true_signal[k]).squaredNorm());
      }
      row.signal_mse.push_back(ordered_sum(std::move(terms)) / (n * static_cast<double>(true_signal[k].size())));
    }
    table.methods.push_back(std::move(row));
  }
  return table;
}

std::optional<double> sigma_mse_ratio(const MseTable& table, const std::string& numerator,
                                      const std::string& denominator) {
  const MethodMse* a = table.find(numerator);
  const MethodMse* b = table.find(denominator);
  if (!a || !b || !(b->sigma_sq_mse > 0.0)) return std::nullopt;
  return a->sigma_sq_mse / b->sigma_sq_mse;
}

}  // namespace riceem
