#include "riceem/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace riceem {

namespace fs = std::filesystem;

ParseError::ParseError(const std::string& source, std::size_t line, const std::string& what)
    : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

double parse_number(std::string_view text, bool decimal_comma) {
  std::string s(text);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t start = 0;
  while (start < s.size() && std::isspace(static_cast<unsigned char>(s[start]))) ++start;
  s = s.substr(start);
  if (decimal_comma && std::count(s.begin(), s.end(), ',') == 1 && s.find('.') == std::string::npos) {
    std::replace(s.begin(), s.end(), ',', '.');
  }
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  const char* first = s.data();
  if (!s.empty() && s[0] == '+') ++first;
  double value = 0.0;
  const auto res = std::from_chars(first, s.data() + s.size(), value);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("not a number: '" + std::string(text) + "'");
  }
  return value;
}

// ---------------------------------------------------------------------------
// JSON pieces

Json scheme_to_json(const AcquisitionScheme& scheme) {
  Json dirs = Json::array();
  for (const auto& g : scheme.directions()) dirs.push_back({g.x(), g.y(), g.z()});
  Json j;
  j["directions"] = std::move(dirs);
  j["knots"] = scheme.knots();
  j["repetitions"] = scheme.repetitions();
  return j;
}

AcquisitionScheme scheme_from_json(const Json& j) {
  std::vector<Vec3> dirs;
  for (const auto& d : j.at("directions")) {
    if (!d.is_array() || d.size() != 3) throw std::invalid_argument("scheme.directions entries must be [x, y, z]");
    dirs.emplace_back(d[0].get<double>(), d[1].get<double>(), d[2].get<double>());
  }
  return AcquisitionScheme(std::move(dirs), j.at("knots").get<std::vector<double>>(),
                           j.at("repetitions").get<int>());
}

Json truth_to_json(const GroundTruth& truth) {
  Json j;
  j["order"] = static_cast<int>(truth.theta.order);
  j["theta"] = std::vector<double>(truth.theta.theta.data(), truth.theta.theta.data() + truth.theta.theta.size());
  j["s0"] = truth.s0;
  j["sigma_sq"] = truth.sigma_sq;
  j["seed"] = truth.seed;
  j["label"] = truth.label;
  return j;
}

GroundTruth truth_from_json(const Json& j) {
  GroundTruth t;
  const TensorOrder order = tensor_order_from_int(j.at("order").get<int>());
  const auto theta = j.at("theta").get<std::vector<double>>();
  t.theta = TensorParams(order, Eigen::Map<const Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size())));
  t.s0 = j.at("s0").get<double>();
  t.sigma_sq = j.at("sigma_sq").get<double>();
  t.seed = j.value("seed", std::uint64_t{0});
  t.label = j.value("label", std::string{});
  return t;
}

std::optional<GroundTruth> DatasetFile::truth_for(std::int64_t voxel_id) const {
  if (!truth) return std::nullopt;
  GroundTruth t = *truth;
  if (auto it = sigma_sq_overrides.find(voxel_id); it != sigma_sq_overrides.end()) t.sigma_sq = it->second;
  return t;
}

// ---------------------------------------------------------------------------
// Commented-header CSV

namespace {

std::string header_block(const Json& header) {
  std::istringstream lines(header.dump(2));
  std::string out;
  for (std::string line; std::getline(lines, line);) out += "# " + line + "\n";
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  out.push_back(std::move(field));
  return out;
}

struct CsvDocument {
  Json header;
  std::vector<std::string> columns;
  std::size_t columns_line = 0;
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;  // (line number, fields)
};

CsvDocument read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  const std::string source = path.string();
  CsvDocument doc;
  std::string json_text;
  std::string line;
  std::size_t n = 0;
  bool in_header = true;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (in_header && !line.empty() && line[0] == '#') {
      json_text += line.substr(line.size() > 1 && line[1] == ' ' ? 2 : 1);
      json_text += '\n';
      continue;
    }
    if (in_header) {
      in_header = false;
      try {
        doc.header = json_text.empty() ? Json::object() : Json::parse(json_text);
      } catch (const Json::parse_error& e) {
        throw ParseError(source, 1, std::string("malformed JSON header: ") + e.what());
      }
      doc.columns = split_csv(line);
      doc.columns_line = n;
      continue;
    }
    if (line.empty()) continue;
    doc.rows.emplace_back(n, split_csv(line));
  }
  if (in_header) throw ParseError(source, n, "missing column header line");
  return doc;
}

void expect_columns(const CsvDocument& doc, const std::vector<std::string>& expected, const std::string& source,
                    bool allow_extra) {
  const bool ok = allow_extra ? doc.columns.size() >= expected.size() &&
                                    std::equal(expected.begin(), expected.end(), doc.columns.begin())
                              : doc.columns == expected;
  if (!ok) {
    std::string want;
    for (const auto& c : expected) want += (want.empty() ? "" : ",") + c;
    throw ParseError(source, doc.columns_line, "expected columns " + want);
  }
}

void expect_format(const Json& header, const std::string& format, const std::string& source) {
  if (!header.is_object() || header.value("format", std::string{}) != format) {
    throw ParseError(source, 1, "header format is not '" + format + "'");
  }
  if (header.value("version", 0) != 1) throw ParseError(source, 1, "unsupported format version");
}

template <class T>
T parse_int_field(const std::string& text, const std::string& what, const std::string& source, std::size_t line) {
  T value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ParseError(source, line, what + " is not an integer: '" + text + "'");
  }
  return value;
}

double parse_double_field(const std::string& text, const std::string& what, const std::string& source,
                          std::size_t line) {
  try {
    return parse_number(text);
  } catch (const std::invalid_argument&) {
    throw ParseError(source, line, what + " is not a number: '" + text + "'");
  }
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace

void write_text(const fs::path& path, std::string_view text) {
  std::ofstream out = open_out(path);
  out << text;
  finish(out, path);
}

void write_dataset(const fs::path& path, const DatasetFile& data) {
  Json header;
  header["format"] = "riceem-dataset";
  header["version"] = 1;
  header["seed"] = data.seed;
  header["scheme"] = scheme_to_json(data.scheme);
  if (data.truth) {
    Json t = truth_to_json(*data.truth);
    if (!data.sigma_sq_overrides.empty()) {
      Json o = Json::object();
      for (const auto& [id, s2] : data.sigma_sq_overrides) o[std::to_string(id)] = s2;
      t["sigma_sq_overrides"] = std::move(o);
    }
    header["truth"] = std::move(t);
  }
  header["voxels"] = data.voxels.size();

  std::string body = header_block(header);
  body += "voxel_id,acquisition_index,magnitude\n";
  for (const auto& v : data.voxels) {
    if (static_cast<std::size_t>(v.magnitudes.size()) != data.scheme.size()) {
      throw std::invalid_argument("voxel " + std::to_string(v.id) + " has " +
                                  std::to_string(v.magnitudes.size()) + " magnitudes for a scheme of " +
                                  std::to_string(data.scheme.size()) + " rows");
    }
    const std::string id = std::to_string(v.id);
    for (Eigen::Index i = 0; i < v.magnitudes.size(); ++i) {
      body += id;
      body += ',';
      body += std::to_string(i);
      body += ',';
      body += format_number(v.magnitudes[i]);
      body += '\n';
    }
  }
  write_text(path, body);
}

DatasetFile read_dataset(const fs::path& path) {
  const std::string source = path.string();
  const CsvDocument doc = read_csv(path);
  expect_format(doc.header, "riceem-dataset", source);
  expect_columns(doc, {"voxel_id", "acquisition_index", "magnitude"}, source, false);

  DatasetFile data;
  try {
    data.scheme = scheme_from_json(doc.header.at("scheme"));
    data.seed = doc.header.value("seed", std::uint64_t{0});
    if (doc.header.contains("truth")) {
      const Json& t = doc.header.at("truth");
      data.truth = truth_from_json(t);
      if (t.contains("sigma_sq_overrides")) {
        for (const auto& [id, s2] : t.at("sigma_sq_overrides").items()) {
          data.sigma_sq_overrides[std::stoll(id)] = s2.get<double>();
        }
      }
    }
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(source, 1, std::string("invalid header: ") + e.what());
  }

  const std::size_t m = data.scheme.size();
  std::vector<bool> seen;
  for (const auto& [line, f] : doc.rows) {
    if (f.size() != 3) throw ParseError(source, line, "expected 3 fields, got " + std::to_string(f.size()));
    const auto id = parse_int_field<std::int64_t>(f[0], "voxel_id", source, line);
    const auto idx = parse_int_field<std::int64_t>(f[1], "acquisition_index", source, line);
    const double y = parse_double_field(f[2], "magnitude", source, line);
    if (data.voxels.empty() || data.voxels.back().id != id) {
      if (!data.voxels.empty() && std::find(seen.begin(), seen.end(), false) != seen.end()) {
        throw ParseError(source, line, "voxel " + std::to_string(data.voxels.back().id) +
                                           " is missing acquisitions before voxel " + std::to_string(id) + " starts");
      }
      for (const auto& v : data.voxels) {
        if (v.id == id) throw ParseError(source, line, "voxel " + std::to_string(id) + " block is not contiguous");
      }
      data.voxels.push_back({id, Eigen::VectorXd::Constant(static_cast<Eigen::Index>(m), std::numeric_limits<double>::quiet_NaN())});
      seen.assign(m, false);
    }
    if (idx < 0 || static_cast<std::size_t>(idx) >= m) {
      throw ParseError(source, line, "acquisition_index " + std::to_string(idx) + " outside the scheme (0.." +
                                         std::to_string(m - 1) + ")");
    }
    if (seen[static_cast<std::size_t>(idx)]) {
      throw ParseError(source, line, "duplicate acquisition_index " + std::to_string(idx));
    }
    if (!std::isfinite(y) || y < 0.0) throw ParseError(source, line, "magnitude must be finite and >= 0");
    seen[static_cast<std::size_t>(idx)] = true;
    data.voxels.back().magnitudes[idx] = y;
  }
  if (!data.voxels.empty() && std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw ParseError(source, doc.rows.back().first,
                     "voxel " + std::to_string(data.voxels.back().id) + " is missing acquisitions");
  }
  return data;
}

// ---------------------------------------------------------------------------
// Results

namespace {

const std::vector<std::string> kResultColumns = {"voxel_id", "method",  "order", "converged", "iterations", "loglik",
                                                 "s0_sq",    "sigma_sq", "fa",   "md",        "flags"};

}  // namespace

void write_results(const fs::path& path, const ResultFile& results) {
  Json header;
  header["format"] = "riceem-results";
  header["version"] = 1;
  header["method"] = results.method;
  header["order"] = results.order;
  header["dataset"] = results.dataset;
  header["dataset_seed"] = results.dataset_seed;
  header["options"] = results.options;

  const int d = coefficient_count(tensor_order_from_int(results.order));
  std::string body = header_block(header);
  for (const auto& c : kResultColumns) body += c + ",";
  for (int k = 1; k <= d; ++k) body += "theta_" + std::to_string(k) + (k < d ? "," : "\n");

  for (const auto& r : results.rows) {
    if (r.theta.size() != d) throw std::invalid_argument("result row theta length does not match the order");
    std::string flags;
    for (const auto& f : r.flags) flags += (flags.empty() ? "" : ";") + f;
    body += std::to_string(r.voxel_id) + "," + r.method + "," + std::to_string(r.order) + "," +
            (r.converged ? "1" : "0") + "," + std::to_string(r.iterations) + "," + format_number(r.loglik) +
            "," + format_number(r.s0_sq) + "," + format_number(r.sigma_sq) + "," +
            (r.fa ? format_number(*r.fa) : "") + "," + (r.md ? format_number(*r.md) : "") + "," +
            (flags.empty() ? "none" : flags);
    for (Eigen::Index k = 0; k < d; ++k) body += "," + format_number(r.theta[k]);
    body += '\n';
  }
  write_text(path, body);
}

ResultFile read_results(const fs::path& path) {
  const std::string source = path.string();
  const CsvDocument doc = read_csv(path);
  expect_format(doc.header, "riceem-results", source);
  expect_columns(doc, kResultColumns, source, true);

  ResultFile res;
  try {
    res.method = doc.header.at("method").get<std::string>();
    res.order = doc.header.at("order").get<int>();
    res.dataset = doc.header.value("dataset", std::string{});
    res.dataset_seed = doc.header.value("dataset_seed", std::uint64_t{0});
    res.options = doc.header.value("options", Json::object());
  } catch (const std::exception& e) {
    throw ParseError(source, 1, std::string("invalid header: ") + e.what());
  }
  const int d = coefficient_count(tensor_order_from_int(res.order));
  const std::size_t width = kResultColumns.size() + static_cast<std::size_t>(d);
  if (doc.columns.size() != width) {
    throw ParseError(source, doc.columns_line, "expected " + std::to_string(width) + " columns for order " +
                                                   std::to_string(res.order));
  }
  for (const auto& [line, f] : doc.rows) {
    if (f.size() != width) {
      throw ParseError(source, line, "expected " + std::to_string(width) + " fields, got " + std::to_string(f.size()));
    }
    ResultRow r;
    r.voxel_id = parse_int_field<std::int64_t>(f[0], "voxel_id", source, line);
    r.method = f[1];
    r.order = parse_int_field<int>(f[2], "order", source, line);
    if (f[3] != "0" && f[3] != "1") throw ParseError(source, line, "converged must be 0 or 1");
    r.converged = f[3] == "1";
    r.iterations = parse_int_field<int>(f[4], "iterations", source, line);
    r.loglik = parse_double_field(f[5], "loglik", source, line);
    r.s0_sq = parse_double_field(f[6], "s0_sq", source, line);
    r.sigma_sq = parse_double_field(f[7], "sigma_sq", source, line);
    if (!f[8].empty()) r.fa = parse_double_field(f[8], "fa", source, line);
    if (!f[9].empty()) r.md = parse_double_field(f[9], "md", source, line);
    if (f[10] != "none") {
      std::string flag;
      std::istringstream ss(f[10]);
      while (std::getline(ss, flag, ';')) r.flags.push_back(flag);
    }
    r.theta.resize(d);
    for (int k = 0; k < d; ++k) {
      r.theta[k] = parse_double_field(f[kResultColumns.size() + static_cast<std::size_t>(k)],
                                      "theta_" + std::to_string(k + 1), source, line);
    }
    res.rows.push_back(std::move(r));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Config

Config Config::parse(std::string_view text, const std::string& source) {
  Config cfg;
  cfg.source_ = source;
  std::istringstream in{std::string(text)};
  std::size_t n = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string{};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  for (std::string line; std::getline(in, line);) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(source, n, "expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(source, n, "empty key");
    if (cfg.values_.count(key)) throw ParseError(source, n, "duplicate key '" + key + "'");
    cfg.values_[key] = value;
  }
  return cfg;
}

Config Config::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::optional<std::string> Config::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::optional<double> Config::get_double(const std::string& key) const {
  const auto v = get(key);
  if (!v) return std::nullopt;
  try {
    return parse_number(*v, true);
  } catch (const std::invalid_argument&) {
    throw ConfigError(source_ + ": field '" + key + "' is not a number: '" + *v + "'");
  }
}

std::optional<std::int64_t> Config::get_int(const std::string& key) const {
  const auto v = get(key);
  if (!v) return std::nullopt;
  std::int64_t value = 0;
  const auto res = std::from_chars(v->data(), v->data() + v->size(), value);
  if (v->empty() || res.ec != std::errc() || res.ptr != v->data() + v->size()) {
    throw ConfigError(source_ + ": field '" + key + "' is not an integer: '" + *v + "'");
  }
  return value;
}

std::optional<bool> Config::get_bool(const std::string& key) const {
  const auto v = get(key);
  if (!v) return std::nullopt;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  throw ConfigError(source_ + ": field '" + key + "' is not a boolean: '" + *v + "'");
}

std::optional<std::vector<double>> Config::get_list(const std::string& key) const {
  const auto v = get(key);
  if (!v) return std::nullopt;
  std::string text = *v;
  std::replace(text.begin(), text.end(), ';', ' ');
  std::istringstream ss(text);
  std::vector<double> out;
  for (std::string item; ss >> item;) {
    try {
      out.push_back(parse_number(item, true));
    } catch (const std::invalid_argument&) {
      throw ConfigError(source_ + ": field '" + key + "' has a non-numeric entry '" + item + "'");
    }
  }
  return out;
}

void Config::require_known(const std::set<std::string>& known) const {
  for (const auto& [key, value] : values_) {
    if (!known.count(key)) throw ConfigError(source_ + ": unknown field '" + key + "'");
  }
}

}  // namespace riceem
