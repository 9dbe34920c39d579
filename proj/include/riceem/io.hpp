// File formats: UTF-8 CSV with a JSON header carried in leading "# " comment
// lines, and flat key=value configuration files.
#pragma once

#include "riceem/scheme.hpp"
#include "riceem/synth.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace riceem {

using Json = nlohmann::ordered_json;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest decimal text that parses back to the same double.
std::string format_number(double value);

/// Strict decimal parse of the whole field; "nan"/"inf" accepted. With
/// `decimal_comma`, a single ',' is read as the decimal point.
double parse_number(std::string_view text, bool decimal_comma = false);

Json scheme_to_json(const AcquisitionScheme& scheme);
AcquisitionScheme scheme_from_json(const Json& j);
Json truth_to_json(const GroundTruth& truth);
GroundTruth truth_from_json(const Json& j);

struct VoxelData {
  std::int64_t id = 0;
  Eigen::VectorXd magnitudes;  // indexed by acquisition
};

struct DatasetFile {
  AcquisitionScheme scheme;
  std::optional<GroundTruth> truth;
  std::map<std::int64_t, double> sigma_sq_overrides;  // per-voxel noise variance
  std::uint64_t seed = 0;
  std::vector<VoxelData> voxels;

  /// Truth of one voxel (the shared truth with any sigma^2 override applied).
  std::optional<GroundTruth> truth_for(std::int64_t voxel_id) const;
};

void write_dataset(const std::filesystem::path& path, const DatasetFile& data);
DatasetFile read_dataset(const std::filesystem::path& path);

struct ResultRow {
  std::int64_t voxel_id = 0;
  std::string method;
  int order = 2;
  bool converged = false;
  int iterations = 0;
  double loglik = 0.0;
  double s0_sq = 0.0;
  double sigma_sq = 0.0;
  std::optional<double> fa;  // order-2 fits only
  std::optional<double> md;
  std::vector<std::string> flags;
  Eigen::VectorXd theta;
};

struct ResultFile {
  std::string method;
  int order = 2;
  std::string dataset;  // file name of the fitted dataset
  std::uint64_t dataset_seed = 0;
  Json options = Json::object();
  std::vector<ResultRow> rows;
};

void write_results(const std::filesystem::path& path, const ResultFile& results);
ResultFile read_results(const std::filesystem::path& path);

/// Writes `text` to `path`, creating parent directories.
void write_text(const std::filesystem::path& path, std::string_view text);

/// Flat key=value configuration. '#' starts a comment; keys are unique.
class Config {
 public:
  static Config parse(std::string_view text, const std::string& source = "<config>");
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  /// Typed accessors; ConfigError names the field on malformed values.
  std::optional<double> get_double(const std::string& key) const;
  std::optional<std::int64_t> get_int(const std::string& key) const;
  std::optional<bool> get_bool(const std::string& key) const;
  /// Values separated by whitespace or ';'.
  std::optional<std::vector<double>> get_list(const std::string& key) const;

  /// ConfigError naming the first key not in `known`.
  void require_known(const std::set<std::string>& known) const;

 private:
  std::map<std::string, std::string> values_;
  std::string source_;
};

}  // namespace riceem
