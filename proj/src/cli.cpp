#include "riceem/cli.hpp"

#include "riceem/baselines.hpp"
#include "riceem/batch.hpp"
#include "riceem/loglinear.hpp"
#include "riceem/metrics.hpp"
#include "riceem/synth.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace riceem {

namespace fs = std::filesystem;

namespace {

CliError config_error(const std::string& msg) { return CliError("config", msg, exit_code::kConfig); }
CliError usage_error(const std::string& msg) { return CliError("usage", msg, exit_code::kUsage); }

unsigned resolve_workers(unsigned requested) { return requested > 0 ? requested : default_worker_count(); }

TensorOrder order_from_int(std::int64_t v, const std::string& field) {
  if (v != 2 && v != 4) throw config_error("field '" + field + "' must be 2 or 4, got " + std::to_string(v));
  return v == 2 ? TensorOrder::Two : TensorOrder::Four;
}

const std::set<std::string> kMethods = {"mle", "map", "ls", "ls-trunc", "wls", "wls-trunc", "rician-direct"};

}  // namespace

// ---------------------------------------------------------------------------
// simulate

SimulateOptions simulate_options(const Config& c) {
  c.require_known({"out", "seed", "order", "noise", "s0", "sigma_sq", "directions", "knots", "repetitions",
                   "ensemble", "voxels", "zero_threshold", "artifact_voxels", "artifact_sigma_sq", "workers"});
  SimulateOptions o;
  if (auto v = c.get("out")) o.out = *v;
  if (auto v = c.get_int("seed")) {
    if (*v < 0) throw config_error("field 'seed' must be >= 0");
    o.seed = static_cast<std::uint64_t>(*v);
  }
  if (auto v = c.get_int("order")) o.order = order_from_int(*v, "order");
  if (auto v = c.get("noise")) {
    if (*v == "high") {
      o.sigma_sq = kHighNoiseSigmaSq;
    } else if (*v == "low") {
      o.sigma_sq = kLowNoiseSigmaSq;
    } else {
      throw config_error("field 'noise' must be 'high' or 'low', got '" + *v + "'");
    }
  }
  if (auto v = c.get_double("s0")) o.s0 = *v;
  if (auto v = c.get_double("sigma_sq")) o.sigma_sq = *v;
  if (auto v = c.get_int("directions")) o.directions = static_cast<int>(*v);
  if (auto v = c.get_list("knots")) o.knots = *v;
  if (auto v = c.get_int("repetitions")) o.repetitions = static_cast<int>(*v);
  if (auto v = c.get_int("ensemble")) o.ensemble = static_cast<int>(*v);
  if (auto v = c.get_int("voxels")) o.voxels = static_cast<int>(*v);
  if (auto v = c.get_double("zero_threshold")) o.zero_threshold = *v;
  if (auto v = c.get_list("artifact_voxels")) {
    for (double id : *v) {
      if (id < 0 || id != std::floor(id)) throw config_error("field 'artifact_voxels' must list voxel ids");
      o.artifact_voxels.push_back(static_cast<std::int64_t>(id));
    }
  }
  if (auto v = c.get_double("artifact_sigma_sq")) o.artifact_sigma_sq = *v;
  if (auto v = c.get_int("workers")) o.workers = static_cast<unsigned>(std::max<std::int64_t>(0, *v));
  return o;
}

SimulateSummary run_simulate(const SimulateOptions& o) {
  if (!(o.s0 > 0.0)) throw config_error("field 's0' must be > 0");
  if (!(o.sigma_sq >= 0.0)) throw config_error("field 'sigma_sq' must be >= 0");
  if (o.directions < 1) throw config_error("field 'directions' must be >= 1");
  if (o.repetitions < 1) throw config_error("field 'repetitions' must be >= 1");
  if (o.ensemble < 1) throw config_error("field 'ensemble' must be >= 1");
  if (o.voxels < 1) throw config_error("field 'voxels' must be >= 1");
  if (!(o.zero_threshold >= 0.0)) throw config_error("field 'zero_threshold' must be >= 0");
  if (!o.artifact_voxels.empty() && !(o.artifact_sigma_sq > 0.0)) {
    throw config_error("field 'artifact_sigma_sq' must be > 0 when artifact_voxels is set");
  }

  AcquisitionScheme scheme;
  try {
    scheme = make_scheme(o.directions, o.knots.empty() ? default_knots() : o.knots, o.repetitions);
  } catch (const std::invalid_argument& e) {
    throw config_error(std::string("invalid scheme: ") + e.what());
  }
  GroundTruth truth = fixture_truth(o.order, NoiseLevel::High, o.seed);
  truth.s0 = o.s0;
  truth.sigma_sq = o.sigma_sq;
  if (o.sigma_sq == kLowNoiseSigmaSq) {
    truth.label = fixture_truth(o.order, NoiseLevel::Low, o.seed).label;
  } else if (o.sigma_sq != kHighNoiseSigmaSq || o.s0 != kFixtureS0) {
    truth.label = "custom-order" + std::to_string(static_cast<int>(o.order));
  }
  const std::map<std::int64_t, double> overrides = [&] {
    std::map<std::int64_t, double> m;
    for (auto id : o.artifact_voxels) m[id] = o.artifact_sigma_sq;
    return m;
  }();

  SimulateSummary summary;
  summary.rows_per_voxel = scheme.size();
  summary.knots = scheme.knots().size();
  summary.voxels = o.voxels;
  summary.snr_b0 = o.sigma_sq > 0.0 ? o.s0 / std::sqrt(o.sigma_sq) : std::numeric_limits<double>::infinity();

  const std::size_t n_files = static_cast<std::size_t>(o.ensemble);
  const std::size_t n_vox = static_cast<std::size_t>(o.voxels);
  std::vector<DatasetFile> files(n_files);
  for (std::size_t f = 0; f < n_files; ++f) {
    files[f].scheme = scheme;
    files[f].seed = n_files == 1 ? o.seed : derive_seed(o.seed, f);
    files[f].truth = truth;
    files[f].truth->seed = files[f].seed;
    files[f].sigma_sq_overrides = overrides;
    files[f].voxels.resize(n_vox);
  }
  const SynthOptions synth{o.zero_threshold};
  parallel_for(n_files * n_vox, resolve_workers(o.workers), [&](std::size_t k) {
    const std::size_t f = k / n_vox;
    const std::size_t v = k % n_vox;
    DatasetFile& file = files[f];
    GroundTruth t = *file.truth_for(static_cast<std::int64_t>(v));
    t.seed = n_vox == 1 ? file.seed : derive_seed(file.seed, v);
    file.voxels[v] = {static_cast<std::int64_t>(v), synthesize(scheme, t, synth)};
  });

  for (std::size_t f = 0; f < n_files; ++f) {
    fs::path path = o.out;
    if (n_files > 1) {
      char name[32];
      std::snprintf(name, sizeof name, "dataset_%03zu.csv", f);
      path = o.out / name;
    }
    write_dataset(path, files[f]);
    summary.files.push_back(path);
  }
  return summary;
}

// ---------------------------------------------------------------------------
// fit

void apply_fit_config(const Config& c, FitCommand& cmd) {
  c.require_known({"method", "order", "out", "alpha", "anneal_threshold", "max_em_iters", "max_scoring_iters",
                   "tol_scoring", "tol_theta", "tol_loglik", "init_b_cutoff", "init_method", "single_step_scoring",
                   "positivity_projection", "eigenvalue_floor", "acceleration", "anderson_memory", "omega_scale", "c1", "c2", "y_min",
                   "use_approx_fisher", "workers"});
  if (auto v = c.get("method")) cmd.method = *v;
  if (auto v = c.get_int("order")) cmd.order = order_from_int(*v, "order");
  if (auto v = c.get("out")) cmd.out = *v;
  if (auto v = c.get_double("alpha")) cmd.fit.alpha = *v;
  if (auto v = c.get_double("anneal_threshold")) cmd.fit.anneal_threshold = *v;
  if (auto v = c.get_int("max_em_iters")) cmd.fit.max_em_iters = static_cast<int>(*v);
  if (auto v = c.get_int("max_scoring_iters")) cmd.fit.max_scoring_iters = static_cast<int>(*v);
  if (auto v = c.get_double("tol_scoring")) cmd.fit.tol_scoring = *v;
  if (auto v = c.get_double("tol_theta")) cmd.fit.tol_theta = *v;
  if (auto v = c.get_double("tol_loglik")) cmd.fit.tol_loglik = *v;
  if (auto v = c.get_double("init_b_cutoff")) cmd.fit.init_b_cutoff = *v;
  if (auto v = c.get("init_method")) {
    if (*v == "ls") {
      cmd.fit.init_method = InitMethod::LS;
    } else if (*v == "wls") {
      cmd.fit.init_method = InitMethod::WLS;
    } else {
      throw config_error("field 'init_method' must be 'ls' or 'wls', got '" + *v + "'");
    }
  }
  if (auto v = c.get_bool("single_step_scoring")) cmd.fit.single_step_scoring = *v;
  if (auto v = c.get_bool("positivity_projection")) cmd.fit.positivity_projection = *v;
  if (auto v = c.get_double("eigenvalue_floor")) cmd.fit.eigenvalue_floor = *v;
  if (auto v = c.get("acceleration")) {
    if (*v == "none") {
      cmd.fit.acceleration = Acceleration::None;
    } else if (*v == "anderson") {
      cmd.fit.acceleration = Acceleration::Anderson;
    } else {
      throw config_error("field 'acceleration' must be 'none' or 'anderson', got '" + *v + "'");
    }
  }
  if (auto v = c.get_int("anderson_memory")) cmd.fit.anderson_memory = static_cast<int>(*v);
  if (auto v = c.get_double("omega_scale")) cmd.omega_scale = *v;
  if (auto v = c.get_double("c1")) cmd.c1 = *v;
  if (auto v = c.get_double("c2")) cmd.c2 = *v;
  if (auto v = c.get_double("y_min")) cmd.y_min = *v;
  if (auto v = c.get_bool("use_approx_fisher")) cmd.use_approx_fisher = *v;
  if (auto v = c.get_int("workers")) cmd.workers = static_cast<unsigned>(std::max<std::int64_t>(0, *v));
}

fs::path timing_path(const fs::path& out) {
  fs::path p = out;
  p.replace_extension(".timing.csv");
  return p;
}

namespace {

Json fit_options_json(const FitCommand& cmd) {
  Json j;
  if (cmd.method == "mle" || cmd.method == "map" || cmd.method == "rician-direct") {
    j["alpha"] = cmd.fit.alpha;
    j["anneal_threshold"] = cmd.fit.anneal_threshold;
    j["max_em_iters"] = cmd.fit.max_em_iters;
    j["max_scoring_iters"] = cmd.fit.max_scoring_iters;
    j["tol_scoring"] = cmd.fit.tol_scoring;
    j["tol_theta"] = cmd.fit.tol_theta;
    j["tol_loglik"] = cmd.fit.tol_loglik;
    j["init_b_cutoff"] = cmd.fit.init_b_cutoff;
    j["init_method"] = cmd.fit.init_method == InitMethod::LS ? "ls" : "wls";
    j["single_step_scoring"] = cmd.fit.single_step_scoring;
    j["positivity_projection"] = cmd.fit.positivity_projection;
    j["eigenvalue_floor"] = cmd.fit.eigenvalue_floor;
    j["acceleration"] = cmd.fit.acceleration == Acceleration::None ? "none" : "anderson";
    if (cmd.fit.acceleration == Acceleration::Anderson) j["anderson_memory"] = cmd.fit.anderson_memory;
  }
  if (cmd.method == "map") {
    j["omega_scale"] = cmd.omega_scale;
    j["c1"] = cmd.c1;
    j["c2"] = cmd.c2;
  }
  if (cmd.method == "rician-direct") {
    if (cmd.y_min) j["y_min"] = *cmd.y_min;
    j["use_approx_fisher"] = cmd.use_approx_fisher;
  }
  if (cmd.method == "ls-trunc" || cmd.method == "wls-trunc") j["b_cutoff"] = cmd.fit.init_b_cutoff;
  return j;
}

void finish_row(ResultRow& row, const TensorParams& theta, bool degenerate) {
  row.theta = theta.theta;
  if (degenerate) {
    row.flags.push_back("degenerate");
  } else {
    if (!positivity_check(theta).pass) row.flags.push_back("positivity-fail");
    if (theta.order == TensorOrder::Two) {
      try {
        row.fa = fractional_anisotropy(eigen_2nd_order(theta));
      } catch (const std::domain_error&) {
      }
    }
  }
  row.md = mean_diffusivity(theta);
  if (!row.converged && !degenerate) row.flags.insert(row.flags.begin(), "non-converged");
}

ResultRow fit_voxel(const FitCommand& cmd, const Design& design, const VoxelData& voxel) {
  ResultRow row;
  row.voxel_id = voxel.id;
  row.method = cmd.method;
  row.order = static_cast<int>(cmd.order);
  const Eigen::VectorXd& y = voxel.magnitudes;
  try {
    if (cmd.method == "mle" || cmd.method == "map") {
      const FitReport r = cmd.method == "mle"
                              ? fit_mle(design, y, cmd.fit)
                              : fit_map(design, y, PriorSpec::isotropic(static_cast<int>(design.cols()), cmd.omega_scale, cmd.c1, cmd.c2),
                                        cmd.fit);
      row.converged = r.converged;
      row.iterations = r.iterations;
      row.loglik = r.final_loglik;
      row.s0_sq = r.s0_sq;
      row.sigma_sq = r.sigma_sq;
      finish_row(row, r.theta, r.degenerate);
      if (r.scoring_failures > 0) row.flags.push_back("scoring-failure");
    } else if (cmd.method == "rician-direct") {
      DirectOptions d;
      d.y_min = cmd.y_min;
      d.use_approx_fisher = cmd.use_approx_fisher;
      d.max_iters = cmd.fit.max_em_iters;
      d.init = cmd.fit;
      const BaselineReport r = fit_rician_direct(design, y, d);
      row.converged = r.converged;
      row.iterations = r.iterations;
      row.loglik = r.loglik;
      row.s0_sq = r.s0_sq;
      row.sigma_sq = r.sigma_sq;
      finish_row(row, r.theta, r.degenerate);
    } else {
      const bool trunc = cmd.method == "ls-trunc" || cmd.method == "wls-trunc";
      const std::optional<double> cutoff = trunc ? std::optional<double>(cmd.fit.init_b_cutoff) : std::nullopt;
      const BaselineReport r = (cmd.method == "ls" || cmd.method == "ls-trunc") ? fit_ls(design, y, cutoff)
                                                                                : fit_wls(design, y, cutoff);
      row.converged = r.converged;
      row.iterations = r.iterations;
      row.loglik = r.loglik;
      row.s0_sq = r.s0_sq;
      row.sigma_sq = r.sigma_sq;
      finish_row(row, r.theta, false);
    }
  } catch (const InitializationError&) {
    row = ResultRow{};
  } catch (const RankDeficientError&) {
    row = ResultRow{};
  }
  if (row.theta.size() == 0) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    row.voxel_id = voxel.id;
    row.method = cmd.method;
    row.order = static_cast<int>(cmd.order);
    row.loglik = row.s0_sq = row.sigma_sq = nan;
    row.theta = Eigen::VectorXd::Constant(design.cols(), nan);
    row.flags = {"init-failed"};
  }
  return row;
}

}  // namespace

FitSummary run_fit(const FitCommand& cmd) {
  if (!kMethods.count(cmd.method)) {
    throw usage_error("unknown method '" + cmd.method + "' (expected mle, map, ls, ls-trunc, wls, wls-trunc, rician-direct)");
  }
  try {
    cmd.fit.validate();
  } catch (const std::invalid_argument& e) {
    throw config_error(e.what());
  }
  if (cmd.method == "map" && !(cmd.omega_scale >= 0.0 && cmd.c1 > 0.0 && cmd.c2 > 0.0)) {
    throw config_error("map needs omega_scale >= 0 and c1, c2 > 0");
  }
  const DatasetFile data = read_dataset(cmd.dataset);
  const Design design = make_design(data.scheme, cmd.order);

  std::vector<ResultRow> rows(data.voxels.size());
  std::vector<double> seconds(data.voxels.size());
  parallel_for(data.voxels.size(), resolve_workers(cmd.workers), [&](std::size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    rows[i] = fit_voxel(cmd, design, data.voxels[i]);
    seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });

  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return rows[a].voxel_id < rows[b].voxel_id; });

  ResultFile results;
  results.method = cmd.method;
  results.order = static_cast<int>(cmd.order);
  results.dataset = cmd.dataset.filename().string();
  results.dataset_seed = data.seed;
  results.options = fit_options_json(cmd);
  FitSummary summary;
  summary.voxels = rows.size();
  std::string timing = "voxel_id,seconds\n";
  for (auto i : order) {
    const ResultRow& r = rows[i];
    const bool degenerate = std::find(r.flags.begin(), r.flags.end(), "degenerate") != r.flags.end();
    if (degenerate) {
      ++summary.degenerate;
    } else if (r.converged) {
      ++summary.converged;
    } else {
      ++summary.failed;
    }
    timing += std::to_string(r.voxel_id) + "," + format_number(seconds[i]) + "\n";
    results.rows.push_back(r);
  }
  write_results(cmd.out, results);
  write_text(timing_path(cmd.out), timing);
  return summary;
}

// ---------------------------------------------------------------------------
// metrics

namespace {

double sorted_mean(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
}

bool has_flag(const ResultRow& r, const std::string& flag) {
  return std::find(r.flags.begin(), r.flags.end(), flag) != r.flags.end();
}

}  // namespace

std::vector<std::string> run_metrics(const MetricsCommand& cmd) {
  if (cmd.results.empty()) throw usage_error("metrics needs at least one result file");
  if (cmd.datasets.empty()) throw usage_error("metrics needs at least one dataset file");
  std::vector<std::string> warnings;

  std::map<std::string, DatasetFile> datasets;
  for (const auto& p : cmd.datasets) {
    const std::string name = p.filename().string();
    if (datasets.count(name)) throw usage_error("two dataset files share the name '" + name + "'");
    datasets.emplace(name, read_dataset(p));
  }
  const AcquisitionScheme& scheme = datasets.begin()->second.scheme;
  for (const auto& [name, d] : datasets) {
    if (!(d.scheme == scheme)) throw CliError("data", "dataset '" + name + "' uses a different scheme", exit_code::kRuntime);
  }

  struct Entry {
    std::string method;
    Estimate estimate;
    std::optional<GroundTruth> truth;
  };
  std::vector<Entry> entries;
  std::set<std::string> used_datasets;
  for (const auto& p : cmd.results) {
    const ResultFile rf = read_results(p);
    const auto it = datasets.find(rf.dataset);
    if (it == datasets.end()) {
      throw usage_error("result file '" + p.string() + "' refers to dataset '" + rf.dataset + "', which was not given");
    }
    used_datasets.insert(rf.dataset);
    const TensorOrder order = tensor_order_from_int(rf.order);
    for (const auto& r : rf.rows) {
      if (has_flag(r, "init-failed") || has_flag(r, "degenerate")) {
        warnings.push_back("skipped voxel " + std::to_string(r.voxel_id) + " of '" + p.filename().string() +
                           "' (" + (has_flag(r, "degenerate") ? "degenerate" : "init-failed") + ")");
        continue;
      }
      entries.push_back({r.method, Estimate{TensorParams(order, r.theta), r.s0_sq, r.sigma_sq}, it->second.truth_for(r.voxel_id)});
      if (it->second.sigma_sq_overrides.count(r.voxel_id)) entries.back().truth.reset();
    }
  }

  // MSE over voxels that share the base truth.
  std::optional<GroundTruth> base_truth;
  for (const auto& [name, d] : datasets) {
    if (d.truth) {
      base_truth = d.truth;
      break;
    }
  }
  std::vector<FitRecord> records;
  std::size_t without_truth = 0;
  for (const auto& e : entries) {
    if (e.truth) {
      records.push_back({e.method, e.estimate, *e.truth});
    } else {
      ++without_truth;
    }
  }
  if (without_truth > 0) {
    warnings.push_back(std::to_string(without_truth) + " voxel fit(s) have no shared ground truth; left out of the MSE table");
  }

  std::string mse_csv;
  std::string signal_mse_csv;
  Json summary;
  if (records.empty()) {
    warnings.push_back("no ground truth available; MSE table omitted");
  } else {
    MseTable table;
    try {
      table = mse_report(records, scheme);
    } catch (const std::invalid_argument& e) {
      throw CliError("data", e.what(), exit_code::kRuntime);
    }
    const Eigen::Index d = table.methods.front().theta_mse.size();
    mse_csv = "method,count,theta_mse_mean,sigma_sq_mse";
    for (Eigen::Index k = 1; k <= d; ++k) mse_csv += ",theta_mse_" + std::to_string(k);
    mse_csv += "\n";
    signal_mse_csv = "method,b,signal_mse\n";
    Json counts = Json::object();
    for (const auto& m : table.methods) {
      mse_csv += m.method + "," + std::to_string(m.count) + "," + format_number(m.theta_mse_mean) + "," +
                 format_number(m.sigma_sq_mse);
      for (Eigen::Index k = 0; k < d; ++k) mse_csv += "," + format_number(m.theta_mse[k]);
      mse_csv += "\n";
      for (std::size_t k = 0; k < table.knots.size(); ++k) {
        signal_mse_csv += m.method + "," + format_number(table.knots[k]) + "," + format_number(m.signal_mse[k]) + "\n";
      }
      Json row;
      row["count"] = m.count;
      row["theta_mse_mean"] = m.theta_mse_mean;
      row["sigma_sq_mse"] = m.sigma_sq_mse;
      counts[m.method] = row;
    }
    summary["mse"] = counts;
    if (auto ratio = sigma_mse_ratio(table, "wls-trunc", "mle")) summary["sigma_sq_mse_ratio_wls_trunc_over_mle"] = *ratio;
  }

  // Fitted SNR and signal curves, averaged over voxels per method.
  std::map<std::string, std::vector<const Entry*>> by_method;
  for (const auto& e : entries) by_method[e.method].push_back(&e);
  const auto& knots = scheme.knots();
  const auto& dirs = scheme.directions();
  std::string snr_csv = "method,b,snr\n";
  std::string signal_csv = "method,b,direction,gx,gy,gz,signal\n";
  auto emit_curves = [&](const std::string& method, const std::vector<Estimate>& ests) {
    std::vector<std::vector<double>> snr(knots.size());
    std::vector<std::vector<std::vector<double>>> sig(knots.size(), std::vector<std::vector<double>>(dirs.size()));
    for (const auto& est : ests) {
      if (!(est.sigma_sq > 0.0)) continue;
      const SnrCurve c = snr_curve(est, scheme);
      for (std::size_t k = 0; k < knots.size(); ++k) {
        snr[k].push_back(c.snr[k]);
        const auto s = signal_curve(est, scheme, knots[k]);
        for (std::size_t j = 0; j < dirs.size(); ++j) sig[k][j].push_back(s[j]);
      }
    }
    for (std::size_t k = 0; k < knots.size(); ++k) {
      snr_csv += method + "," + format_number(knots[k]) + "," + format_number(sorted_mean(snr[k])) + "\n";
      for (std::size_t j = 0; j < dirs.size(); ++j) {
        signal_csv += method + "," + format_number(knots[k]) + "," + std::to_string(j) + "," + format_number(dirs[j].x()) +
                      "," + format_number(dirs[j].y()) + "," + format_number(dirs[j].z()) + "," +
                      format_number(sorted_mean(sig[k][j])) + "\n";
      }
    }
  };
  for (const auto& [method, group] : by_method) {
    std::vector<Estimate> ests;
    for (const auto* e : group) ests.push_back(e->estimate);
    emit_curves(method, ests);
  }
  if (base_truth && base_truth->sigma_sq > 0.0) emit_curves("truth", {Estimate::from(*base_truth)});

  std::string raw_csv = "b,raw_snr\n";
  {
    std::vector<std::vector<double>> raw(knots.size());
    for (const auto& name : used_datasets) {
      for (const auto& v : datasets.at(name).voxels) {
        const SnrCurve c = raw_snr_curve(scheme, v.magnitudes);
        for (std::size_t k = 0; k < knots.size(); ++k) raw[k].push_back(c.snr[k]);
      }
    }
    for (std::size_t k = 0; k < knots.size(); ++k) raw_csv += format_number(knots[k]) + "," + format_number(sorted_mean(raw[k])) + "\n";
  }

  Json methods = Json::object();
  for (const auto& [method, group] : by_method) methods[method] = group.size();
  summary["voxels_per_method"] = methods;
  summary["warnings"] = warnings;

  if (!mse_csv.empty()) {
    write_text(cmd.out / "mse.csv", mse_csv);
    write_text(cmd.out / "signal_mse.csv", signal_mse_csv);
  }
  write_text(cmd.out / "snr.csv", snr_csv);
  write_text(cmd.out / "raw_snr.csv", raw_csv);
  write_text(cmd.out / "signal.csv", signal_csv);
  write_text(cmd.out / "summary.json", summary.dump(2) + "\n");
  return warnings;
}

// ---------------------------------------------------------------------------
// maps

std::pair<int, int> parse_geometry(const std::string& text) {
  const auto x = text.find('x');
  auto bad = [&] { return usage_error("geometry must be WIDTHxHEIGHT, got '" + text + "'"); };
  if (x == std::string::npos) throw bad();
  int w = 0;
  int h = 0;
  try {
    std::size_t used = 0;
    w = std::stoi(text.substr(0, x), &used);
    if (used != x) throw bad();
    h = std::stoi(text.substr(x + 1), &used);
    if (used != text.size() - x - 1) throw bad();
  } catch (const std::logic_error&) {
    throw bad();
  }
  if (w < 1 || h < 1) throw bad();
  return {w, h};
}

void run_maps(const MapsCommand& cmd) {
  if (cmd.width < 1 || cmd.height < 1) throw usage_error("geometry must be positive");
  const ResultFile rf = read_results(cmd.results);
  const std::size_t cells = static_cast<std::size_t>(cmd.width) * static_cast<std::size_t>(cmd.height);

  std::vector<const ResultRow*> grid(cells, nullptr);
  std::vector<std::int64_t> outside;
  for (const auto& r : rf.rows) {
    if (r.voxel_id < 0 || static_cast<std::size_t>(r.voxel_id) >= cells) {
      outside.push_back(r.voxel_id);
      continue;
    }
    grid[static_cast<std::size_t>(r.voxel_id)] = &r;
  }
  auto id_list = [](const std::vector<std::int64_t>& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size() && i < 20; ++i) s += (i ? " " : "") + std::to_string(ids[i]);
    if (ids.size() > 20) s += " ... (" + std::to_string(ids.size()) + " total)";
    return s;
  };
  if (!outside.empty()) {
    throw CliError("geometry", "voxel ids outside a " + std::to_string(cmd.width) + "x" + std::to_string(cmd.height) +
                                   " grid: " + id_list(outside), exit_code::kUsage);
  }
  std::vector<std::int64_t> missing;
  for (std::size_t i = 0; i < cells; ++i) {
    if (!grid[i]) missing.push_back(static_cast<std::int64_t>(i));
  }
  if (!missing.empty()) throw CliError("geometry", "grid cells without a result, missing voxel ids: " + id_list(missing), exit_code::kUsage);

  Json side;
  side["width"] = cmd.width;
  side["height"] = cmd.height;
  side["layout"] = "voxel_id = row * width + column";
  side["source"] = cmd.results.filename().string();
  Json ranges = Json::object();

  auto emit = [&](const std::string& name, auto&& value_of) {
    std::vector<std::optional<double>> vals(cells);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cells; ++i) {
      const ResultRow& r = *grid[i];
      if (has_flag(r, "degenerate") || has_flag(r, "init-failed")) continue;
      const std::optional<double> v = value_of(r);
      if (!v || !std::isfinite(*v)) continue;
      vals[i] = v;
      lo = std::min(lo, *v);
      hi = std::max(hi, *v);
    }
    std::string csv;
    std::string pgm = "P5\n" + std::to_string(cmd.width) + " " + std::to_string(cmd.height) + "\n255\n";
    for (int row = 0; row < cmd.height; ++row) {
      for (int col = 0; col < cmd.width; ++col) {
        const auto& v = vals[static_cast<std::size_t>(row) * static_cast<std::size_t>(cmd.width) + static_cast<std::size_t>(col)];
        csv += (col ? "," : "") + format_number(v ? *v : 0.0);
        double level = 0.0;
        if (v && hi > lo) level = std::round(255.0 * (*v - lo) / (hi - lo));
        pgm.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(level, 0.0, 255.0))));
      }
      csv += "\n";
    }
    Json range;
    if (lo <= hi) {
      range["min"] = lo;
      range["max"] = hi;
    } else {
      range["min"] = nullptr;
      range["max"] = nullptr;
    }
    ranges[name] = range;
    write_text(cmd.out / (name + ".csv"), csv);
    write_text(cmd.out / (name + ".pgm"), pgm);
  };
  emit("fa", [](const ResultRow& r) { return r.fa; });
  emit("md", [](const ResultRow& r) { return r.md; });
  emit("sigma", [](const ResultRow& r) { return std::optional<double>(std::sqrt(r.sigma_sq)); });
  side["ranges"] = ranges;
  if (rf.order != 2) side["note"] = "fa is defined for order-2 fits only; the fa map is all zero";

  Json flagged = Json::object();
  std::vector<std::int64_t> degenerate;
  for (std::size_t i = 0; i < cells; ++i) {
    const ResultRow& r = *grid[i];
    if (!r.flags.empty()) flagged[std::to_string(r.voxel_id)] = r.flags;
    if (has_flag(r, "degenerate")) degenerate.push_back(r.voxel_id);
  }
  side["degenerate"] = degenerate;
  side["flags"] = flagged;
  write_text(cmd.out / "maps.json", side.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// command line

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Rician diffusion-tensor estimation via Poisson-augmented EM", "riceem"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "riceem 1.0.0");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Write synthetic datasets with embedded ground truth");
  std::string sim_config;
  std::uint64_t sim_seed = 0;
  std::string sim_out;
  int sim_order = 0;
  int sim_ensemble = 0;
  int sim_voxels = 0;
  unsigned sim_workers = 0;
  sim->add_option("--config", sim_config, "Flat key=value config file");
  auto* o_seed = sim->add_option("--seed", sim_seed, "Master seed");
  auto* o_sim_out = sim->add_option("--out", sim_out, "Output file, or directory when ensemble > 1");
  auto* o_sim_order = sim->add_option("--order", sim_order, "Tensor order of the truth (2 or 4)")->check(CLI::IsMember({2, 4}));
  auto* o_ensemble = sim->add_option("--ensemble", sim_ensemble, "Number of dataset files");
  auto* o_voxels = sim->add_option("--voxels", sim_voxels, "Voxels per dataset file");
  auto* o_sim_workers = sim->add_option("--workers", sim_workers, "Worker threads (default: RICE_EM_WORKERS or all cores)");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit every voxel of a dataset");
  FitCommand fc;
  std::string fit_dataset;
  std::string fit_config;
  std::string fit_out;
  std::string fit_method;
  int fit_order = 0;
  double fit_alpha = 0.0;
  double fit_cutoff = 0.0;
  unsigned fit_workers = 0;
  double fit_omega = 0.0;
  double fit_c1 = 0.0;
  double fit_c2 = 0.0;
  std::uint64_t fit_seed = 0;
  std::string fit_accel;
  fit->add_option("dataset", fit_dataset, "Dataset file")->required();
  fit->add_option("--config", fit_config, "Flat key=value config file");
  auto* o_method = fit->add_option("--method", fit_method, "mle|map|ls|ls-trunc|wls|wls-trunc|rician-direct");
  auto* o_order = fit->add_option("--order", fit_order, "Tensor order (2 or 4)")->check(CLI::IsMember({2, 4}));
  auto* o_alpha = fit->add_option("--alpha", fit_alpha, "Fisher-scoring stabilizer in [0, 1]");
  auto* o_cutoff = fit->add_option("--b-cutoff", fit_cutoff, "b-value cutoff for initialization and truncated fits");
  auto* o_workers = fit->add_option("--workers", fit_workers, "Worker threads (default: RICE_EM_WORKERS or all cores)");
  fit->add_option("--seed", fit_seed, "Accepted for symmetry with simulate; fits are deterministic");
  auto* o_omega = fit->add_option("--omega-scale", fit_omega, "MAP: prior precision omega = scale * I");
  auto* o_c1 = fit->add_option("--c1", fit_c1, "MAP: Gamma shape for S0^2");
  auto* o_c2 = fit->add_option("--c2", fit_c2, "MAP: Gamma rate for S0^2");
  auto* o_proj = fit->add_flag("--positivity-project", "Project order-2 tensors onto positive eigenvalues each sweep");
  auto* o_accel = fit->add_option("--acceleration", fit_accel, "none|anderson");
  auto* o_fit_out = fit->add_option("--out", fit_out, "Result file");

  // metrics
  auto* met = app.add_subcommand("metrics", "SNR curves, MSE table and signal curves");
  MetricsCommand mc;
  std::vector<std::string> met_results;
  std::vector<std::string> met_datasets;
  std::string met_out = "metrics";
  met->add_option("--results", met_results, "Result files")->required();
  met->add_option("--datasets", met_datasets, "Dataset files")->required();
  met->add_option("--out", met_out, "Output directory");

  // maps
  auto* maps = app.add_subcommand("maps", "FA, MD and sigma maps on a voxel grid");
  std::string maps_results;
  std::string maps_geometry;
  std::string maps_out = "maps";
  maps->add_option("results", maps_results, "Result file")->required();
  maps->add_option("--geometry", maps_geometry, "WIDTHxHEIGHT; voxel_id = row * WIDTH + column")->required();
  maps->add_option("--out", maps_out, "Output directory");

  auto report = [&](const std::string& kind, const std::string& msg, int code) {
    std::string line = msg;
    std::replace(line.begin(), line.end(), '\n', ' ');
    err << "riceem: error[" << kind << "]: " << line << "\n";
    return code;
  };

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return exit_code::kOk;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return exit_code::kOk;
    } catch (const CLI::CallForVersion&) {
      out << app.version() << "\n";
      return exit_code::kOk;
    } catch (const CLI::ParseError& e) {
      return report("usage", e.what(), exit_code::kUsage);
    }

    if (sim->parsed()) {
      Config cfg = sim_config.empty() ? Config{} : Config::load(sim_config);
      SimulateOptions so = simulate_options(cfg);
      if (o_seed->count()) so.seed = sim_seed;
      if (o_sim_out->count()) so.out = sim_out;
      if (o_sim_order->count()) so.order = order_from_int(sim_order, "--order");
      if (o_ensemble->count()) so.ensemble = sim_ensemble;
      if (o_voxels->count()) so.voxels = sim_voxels;
      if (o_sim_workers->count()) so.workers = sim_workers;
      const SimulateSummary s = run_simulate(so);
      out << "wrote " << s.files.size() << " dataset file(s): " << s.voxels << " voxel(s) x " << s.rows_per_voxel
          << " rows, " << s.knots << " knots, SNR at b=0 " << format_number(s.snr_b0) << "\n";
      return exit_code::kOk;
    }

    if (fit->parsed()) {
      if (!fit_config.empty()) apply_fit_config(Config::load(fit_config), fc);
      fc.dataset = fit_dataset;
      if (o_method->count()) fc.method = fit_method;
      if (o_order->count()) fc.order = order_from_int(fit_order, "--order");
      if (o_alpha->count()) fc.fit.alpha = fit_alpha;
      if (o_cutoff->count()) fc.fit.init_b_cutoff = fit_cutoff;
      if (o_workers->count()) fc.workers = fit_workers;
      if (o_omega->count()) fc.omega_scale = fit_omega;
      if (o_c1->count()) fc.c1 = fit_c1;
      if (o_c2->count()) fc.c2 = fit_c2;
      if (o_proj->count()) fc.fit.positivity_projection = true;
      if (o_accel->count()) {
        if (fit_accel == "none") {
          fc.fit.acceleration = Acceleration::None;
        } else if (fit_accel == "anderson") {
          fc.fit.acceleration = Acceleration::Anderson;
        } else {
          return report("usage", "--acceleration must be none or anderson", exit_code::kUsage);
        }
      }
      if (o_fit_out->count()) fc.out = fit_out;
      const FitSummary s = run_fit(fc);
      out << "fitted " << s.voxels << " voxel(s) with " << fc.method << ": " << s.converged << " converged, "
          << s.degenerate << " degenerate, " << s.failed << " not converged\n";
      if (s.failed > 0) {
        return report("nonconverged", std::to_string(s.failed) + " of " + std::to_string(s.voxels) +
                                          " voxel(s) did not converge; see flags in " + fc.out.string(),
                      exit_code::kNonConverged);
      }
      return exit_code::kOk;
    }

    if (met->parsed()) {
      for (const auto& r : met_results) mc.results.emplace_back(r);
      for (const auto& d : met_datasets) mc.datasets.emplace_back(d);
      mc.out = met_out;
      for (const auto& w : run_metrics(mc)) err << "riceem: warning: " << w << "\n";
      out << "wrote metrics to " << mc.out.string() << "\n";
      return exit_code::kOk;
    }

    if (maps->parsed()) {
      MapsCommand cmd;
      cmd.results = maps_results;
      std::tie(cmd.width, cmd.height) = parse_geometry(maps_geometry);
      cmd.out = maps_out;
      run_maps(cmd);
      out << "wrote maps to " << cmd.out.string() << "\n";
      return exit_code::kOk;
    }
    return report("usage", "no subcommand", exit_code::kUsage);
  } catch (const CliError& e) {
    return report(e.kind(), e.what(), e.exit_code());
  } catch (const ParseError& e) {
    return report("parse", e.what(), exit_code::kParse);
  } catch (const IoError& e) {
    return report("io", e.what(), exit_code::kIo);
  } catch (const ConfigError& e) {
    return report("config", e.what(), exit_code::kConfig);
  } catch (const std::exception& e) {
    return report("runtime", e.what(), exit_code::kRuntime);
  }
}

}  // namespace riceem
