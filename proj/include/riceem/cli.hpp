// The riceem command-line surface: simulate, fit, metrics, maps.
#pragma once

#include "riceem/em.hpp"
#include "riceem/io.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace riceem {

/// Error surfaced by the CLI as "riceem: error[<kind>]: <message>".
class CliError : public std::runtime_error {
 public:
  CliError(std::string kind, const std::string& message, int exit_code)
      : std::runtime_error(message), kind_(std::move(kind)), exit_code_(exit_code) {}
  const std::string& kind() const { return kind_; }
  int exit_code() const { return exit_code_; }

 private:
  std::string kind_;
  int exit_code_;
};

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kRuntime = 1;
inline constexpr int kUsage = 2;
inline constexpr int kNonConverged = 3;
inline constexpr int kParse = 4;
inline constexpr int kIo = 5;
inline constexpr int kConfig = 6;
}  // namespace exit_code

struct SimulateOptions {
  std::filesystem::path out = "dataset.csv";
  std::uint64_t seed = 1;
  TensorOrder order = TensorOrder::Four;
  double s0 = 250.0;
  double sigma_sq = 93.0405;
  int directions = 32;
  std::vector<double> knots;  // empty: the default 15 knots
  int repetitions = 3;
  int ensemble = 1;           // > 1: `out` is a directory of dataset_NNN.csv files
  int voxels = 1;
  double zero_threshold = 0.0;
  std::vector<std::int64_t> artifact_voxels;
  double artifact_sigma_sq = 0.0;
  unsigned workers = 0;       // 0: default_worker_count()
};

/// Reads simulate fields from a config; unknown keys are errors.
SimulateOptions simulate_options(const Config& config);

struct SimulateSummary {
  std::vector<std::filesystem::path> files;
  std::size_t rows_per_voxel = 0;
  std::size_t knots = 0;
  int voxels = 0;
  double snr_b0 = 0.0;
};

SimulateSummary run_simulate(const SimulateOptions& options);

struct FitCommand {
  std::filesystem::path dataset;
  std::filesystem::path out = "results.csv";
  std::string method = "mle";
  TensorOrder order = TensorOrder::Two;
  FitOptions fit;
  double omega_scale = 0.0;
  double c1 = 1e-6;
  double c2 = 1e-6;
  std::optional<double> y_min;
  bool use_approx_fisher = false;
  unsigned workers = 0;
};

/// Reads fit fields (FitOptions and prior names) from a config into `cmd`.
void apply_fit_config(const Config& config, FitCommand& cmd);

struct FitSummary {
  std::size_t voxels = 0;
  std::size_t converged = 0;
  std::size_t degenerate = 0;
  std::size_t failed = 0;  // not converged, or fit could not start
};

FitSummary run_fit(const FitCommand& cmd);

/// Result file name for the per-voxel timing sidecar of `out`.
std::filesystem::path timing_path(const std::filesystem::path& out);

struct MetricsCommand {
  std::vector<std::filesystem::path> results;
  std::vector<std::filesystem::path> datasets;
  std::filesystem::path out = "metrics";
};

/// Writes mse.csv, signal_mse.csv, snr.csv, raw_snr.csv, signal.csv and
/// summary.json under `out`. Returns the warnings that were emitted.
std::vector<std::string> run_metrics(const MetricsCommand& cmd);

struct MapsCommand {
  std::filesystem::path results;
  int width = 0;
  int height = 0;
  std::filesystem::path out = "maps";
};

/// Parses "WxH".
std::pair<int, int> parse_geometry(const std::string& text);

/// Writes {fa,md,sigma}.csv, {fa,md,sigma}.pgm and maps.json under `out`.
void run_maps(const MapsCommand& cmd);

/// Full command-line entry point. Never throws; returns the exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace riceem
