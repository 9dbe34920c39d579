#include "riceem/cli.hpp"
#include "riceem/io.hpp"

#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace riceem;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::vector<const char*> argv{"riceem"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "riceem_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string pgm_pixels(const fs::path& p) {
  const std::string s = slurp(p);
  // Header is three lines: magic, size, max value.
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) pos = s.find('\n', pos) + 1;
  return s.substr(pos);
}

}  // namespace

TEST_CASE("default simulate writes 1440 records") {
  const fs::path dir = fresh_dir("default");
  const Run r = cli({"simulate", "--out", (dir / "ds.csv").string(), "--seed", "3"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("1440 rows") != std::string::npos);
  const DatasetFile d = read_dataset(dir / "ds.csv");
  CHECK(d.voxels.size() == 1);
  CHECK(d.voxels[0].magnitudes.size() == 1440);
  CHECK(d.seed == 3);
  CHECK(d.truth.has_value());

  const Run again = cli({"simulate", "--out", (dir / "ds2.csv").string(), "--seed", "3"});
  REQUIRE(again.code == 0);
  CHECK(slurp(dir / "ds.csv") == slurp(dir / "ds2.csv"));
}

TEST_CASE("ensemble simulate writes files with derived seeds") {
  const fs::path dir = fresh_dir("ensemble");
  const Run r = cli({"simulate", "--out", (dir / "ens").string(), "--ensemble", "4", "--seed", "9"});
  REQUIRE(r.code == 0);
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < 4; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "dataset_%03d.csv", i);
    const DatasetFile d = read_dataset(dir / "ens" / name);
    seeds.push_back(d.seed);
    CHECK(d.seed == derive_seed(9, static_cast<std::uint64_t>(i)));
  }
  CHECK(seeds[0] != seeds[1]);
}

TEST_CASE("fit, metrics and maps round trip") {
  const fs::path dir = fresh_dir("roundtrip");
  write_text(dir / "sim.cfg", "order = 2\ndirections = 16\nknots = 0 500 1000 2000\nrepetitions = 1\nvoxels = 4\n"
                              "sigma_sq = 12,8821\n");
  REQUIRE(cli({"simulate", "--config", (dir / "sim.cfg").string(), "--out", (dir / "ds.csv").string()}).code == 0);

  Run r = cli({"fit", (dir / "ds.csv").string(), "--method", "mle", "--order", "2", "--out",
               (dir / "mle.csv").string(), "--workers", "2"});
  REQUIRE(r.code == 0);
  const ResultFile res = read_results(dir / "mle.csv");
  REQUIRE(res.rows.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(res.rows[i].voxel_id == static_cast<std::int64_t>(i));
    CHECK(res.rows[i].converged);
    CHECK(res.rows[i].fa.has_value());
    CHECK(res.rows[i].md.has_value());
  }
  CHECK(fs::exists(timing_path(dir / "mle.csv")));

  REQUIRE(cli({"fit", (dir / "ds.csv").string(), "--method", "ls-trunc", "--out", (dir / "lst.csv").string()}).code ==
          0);
  CHECK(read_results(dir / "lst.csv").options.at("b_cutoff") == 1000.0);
  REQUIRE(cli({"fit", (dir / "ds.csv").string(), "--method", "map", "--out", (dir / "map.csv").string()}).code == 0);
  const ResultFile map = read_results(dir / "map.csv");
  const double m = static_cast<double>(read_dataset(dir / "ds.csv").scheme.size());
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK((map.rows[i].theta - res.rows[i].theta).norm() < 1e-3 * res.rows[i].theta.norm());
    // The scale prior pulls sigma^2 down by roughly 1/m to 2/m.
    const double shrink = 1.0 - map.rows[i].sigma_sq / res.rows[i].sigma_sq;
    CHECK(shrink > 0.5 / m);
    CHECK(shrink < 2.5 / m);
  }

  r = cli({"metrics", "--results", (dir / "mle.csv").string(), (dir / "lst.csv").string(), "--datasets",
           (dir / "ds.csv").string(), "--out", (dir / "metrics").string()});
  REQUIRE(r.code == 0);
  for (const char* f : {"mse.csv", "signal_mse.csv", "snr.csv", "raw_snr.csv", "signal.csv", "summary.json"}) {
    CHECK(fs::exists(dir / "metrics" / f));
  }
  const std::string mse = slurp(dir / "metrics" / "mse.csv");
  CHECK(mse.find("ls-trunc,4,") != std::string::npos);
  CHECK(mse.find("mle,4,") != std::string::npos);

  r = cli({"maps", (dir / "mle.csv").string(), "--geometry", "2x2", "--out", (dir / "maps").string()});
  REQUIRE(r.code == 0);
  CHECK(pgm_pixels(dir / "maps" / "sigma.pgm").size() == 4);
  CHECK(slurp(dir / "maps" / "sigma.pgm").rfind("P5\n2 2\n255\n", 0) == 0);
  const Json side = Json::parse(slurp(dir / "maps" / "maps.json"));
  CHECK(side.at("ranges").at("sigma").at("min") <= side.at("ranges").at("sigma").at("max"));

  r = cli({"maps", (dir / "mle.csv").string(), "--geometry", "3x1", "--out", (dir / "maps2").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("riceem: error[geometry]") == 0);
  CHECK(r.err.find("3") != std::string::npos);
  r = cli({"maps", (dir / "mle.csv").string(), "--geometry", "5x1", "--out", (dir / "maps2").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("missing voxel ids: 4") != std::string::npos);
}

TEST_CASE("metrics without truth omits MSE with a warning") {
  const fs::path dir = fresh_dir("notruth");
  DatasetFile d;
  d.scheme = make_scheme(8, {0.0, 500.0, 1000.0}, 1);
  GroundTruth t = fixture_truth(TensorOrder::Two, NoiseLevel::Low, 2);
  d.voxels.push_back({0, synthesize(d.scheme, t)});
  write_dataset(dir / "ds.csv", d);
  REQUIRE(cli({"fit", (dir / "ds.csv").string(), "--out", (dir / "r.csv").string()}).code == 0);
  const Run r = cli({"metrics", "--results", (dir / "r.csv").string(), "--datasets", (dir / "ds.csv").string(),
                     "--out", (dir / "m").string()});
  CHECK(r.code == 0);
  CHECK(r.err.find("riceem: warning:") != std::string::npos);
  CHECK(fs::exists(dir / "m" / "snr.csv"));
  CHECK_FALSE(fs::exists(dir / "m" / "mse.csv"));
}

TEST_CASE("maps: uniform grid is constant, degenerate voxel is zero and flagged") {
  const fs::path dir = fresh_dir("maps");
  ResultFile rf;
  rf.method = "mle";
  rf.order = 2;
  for (std::int64_t id = 0; id < 4; ++id) {
    ResultRow row;
    row.voxel_id = id;
    row.method = "mle";
    row.converged = true;
    row.s0_sq = 62500.0;
    row.sigma_sq = 100.0;
    row.fa = 0.5;
    row.md = 1e-3;
    row.theta = Eigen::VectorXd::Constant(6, 1e-4);
    rf.rows.push_back(row);
  }
  write_results(dir / "uniform.csv", rf);
  REQUIRE(cli({"maps", (dir / "uniform.csv").string(), "--geometry", "2x2", "--out", (dir / "u").string()}).code == 0);
  CHECK(slurp(dir / "u" / "sigma.csv") == "10,10\n10,10\n");
  const std::string px = pgm_pixels(dir / "u" / "md.pgm");
  CHECK(px == std::string(4, px[0]));

  rf.rows[3].flags = {"degenerate"};
  rf.rows[3].fa.reset();
  rf.rows[1].sigma_sq = 400.0;
  write_results(dir / "degen.csv", rf);
  REQUIRE(cli({"maps", (dir / "degen.csv").string(), "--geometry", "2x2", "--out", (dir / "d").string()}).code == 0);
  CHECK(slurp(dir / "d" / "sigma.csv") == "10,20\n10,0\n");
  const std::string sp = pgm_pixels(dir / "d" / "sigma.pgm");
  CHECK(static_cast<unsigned char>(sp[1]) == 255);
  CHECK(static_cast<unsigned char>(sp[3]) == 0);
  const Json side = Json::parse(slurp(dir / "d" / "maps.json"));
  CHECK(side.at("degenerate") == Json::array({3}));
  CHECK(side.at("flags").at("3") == Json::array({"degenerate"}));
}

TEST_CASE("sigma map highlights injected high-noise voxels") {
  const fs::path dir = fresh_dir("artifact");
  write_text(dir / "sim.cfg",
             "order = 2\ndirections = 12\nknots = 0 500 1000 1500\nrepetitions = 1\nvoxels = 9\n"
             "sigma_sq = 12.8821\nartifact_voxels = 4\nartifact_sigma_sq = 400\n");
  REQUIRE(cli({"simulate", "--config", (dir / "sim.cfg").string(), "--out", (dir / "ds.csv").string()}).code == 0);
  REQUIRE(cli({"fit", (dir / "ds.csv").string(), "--method", "wls-trunc", "--out", (dir / "r.csv").string()}).code ==
          0);
  REQUIRE(cli({"maps", (dir / "r.csv").string(), "--geometry", "3x3", "--out", (dir / "m").string()}).code == 0);
  const std::string px = pgm_pixels(dir / "m" / "sigma.pgm");
  REQUIRE(px.size() == 9);
  CHECK(static_cast<unsigned char>(px[4]) == 255);
  for (int i = 0; i < 9; ++i)
    if (i != 4) CHECK(static_cast<unsigned char>(px[i]) < 128);
}

TEST_CASE("error paths exit nonzero with a single prefixed line") {
  const fs::path dir = fresh_dir("errors");
  auto one_line = [](const std::string& s) { return s.find('\n') == s.size() - 1; };

  Run r = cli({"fit", (dir / "missing.csv").string()});
  CHECK(r.code == 5);
  CHECK(r.err.rfind("riceem: error[io]:", 0) == 0);
  CHECK(one_line(r.err));

  REQUIRE(cli({"simulate", "--out", (dir / "ds.csv").string(), "--order", "2"}).code == 0);
  r = cli({"fit", (dir / "ds.csv").string(), "--method", "nelder-mead"});
  CHECK(r.code == 2);
  CHECK(r.err.rfind("riceem: error[usage]:", 0) == 0);
  r = cli({"fit", (dir / "ds.csv").string(), "--order", "3"});
  CHECK(r.code == 2);
  r = cli({"fit", (dir / "ds.csv").string(), "--acceleration", "warp"});
  CHECK(r.code == 2);
  r = cli({"frobnicate"});
  CHECK(r.code == 2);

  const std::string good = slurp(dir / "ds.csv");
  const auto bad_line = std::count(good.begin(), good.end(), '\n') + 1;
  write_text(dir / "bad.csv", good + "0,5,1.0\n");
  r = cli({"fit", (dir / "bad.csv").string(), "--out", (dir / "x.csv").string()});
  CHECK(r.code == 4);
  CHECK(r.err.rfind("riceem: error[parse]:", 0) == 0);
  CHECK(r.err.find(":" + std::to_string(bad_line) + ":") != std::string::npos);

  write_text(dir / "bad.cfg", "alpha = 2\n");
  r = cli({"fit", (dir / "ds.csv").string(), "--config", (dir / "bad.cfg").string()});
  CHECK(r.code == 6);
  CHECK(r.err.rfind("riceem: error[config]:", 0) == 0);
  write_text(dir / "bad2.cfg", "colour = red\n");
  r = cli({"simulate", "--config", (dir / "bad2.cfg").string()});
  CHECK(r.code == 6);
  CHECK(r.err.find("colour") != std::string::npos);

  r = cli({"simulate", "--out", "/proc/definitely/not/writable/ds.csv"});
  CHECK(r.code == 5);

  r = cli({"--help"});
  CHECK(r.code == 0);
  CHECK(r.out.find("simulate") != std::string::npos);
}

TEST_CASE("fit reports non-convergence with exit code 3") {
  const fs::path dir = fresh_dir("nonconv");
  REQUIRE(cli({"simulate", "--out", (dir / "ds.csv").string(), "--order", "2"}).code == 0);
  write_text(dir / "fit.cfg", "max_em_iters = 1\nacceleration = none\n");
  const Run r = cli({"fit", (dir / "ds.csv").string(), "--config", (dir / "fit.cfg").string(), "--out",
                     (dir / "r.csv").string()});
  CHECK(r.code == 3);
  CHECK(r.err.rfind("riceem: error[nonconverged]:", 0) == 0);
  const ResultFile res = read_results(dir / "r.csv");
  CHECK(res.rows[0].flags.front() == "non-converged");
}
