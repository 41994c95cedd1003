// End-to-end tests of the ctraj command-line tool (spawned as a subprocess).

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ctraj/manifold.hpp"

#ifndef CTRAJ_CLI
#error "CTRAJ_CLI must name the ctraj executable"
#endif

namespace fs = std::filesystem;

namespace ctraj {
namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

fs::path scratch() {
  static const fs::path root = [] {
    fs::path p = fs::temp_directory_path() / ("ctraj_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  static const struct Cleanup {
    fs::path p;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
  } cleanup{root};
  return root;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void spit(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

Result ctraj(const std::string& args) {
  const fs::path err = scratch() / "stderr.txt";
  const std::string cmd = std::string(CTRAJ_CLI) + " " + args + " 2>" + err.string();
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed");
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err);
  return r;
}

/// Strict CSV reader: the header must match exactly.
std::vector<std::vector<std::string>> csv(const std::string& text, const std::string& header) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != header) throw std::runtime_error("unexpected header '" + line + "'");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::size_t start = 0, pos;
    while ((pos = line.find(',', start)) != std::string::npos) {
      cells.push_back(line.substr(start, pos - start));
      start = pos + 1;
    }
    cells.push_back(line.substr(start));
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::vector<std::vector<std::string>> csv_file(const fs::path& p, const std::string& header) {
  return csv(slurp(p), header);
}

const std::string kEstimate = "t,x,y,theta,sxx,sxy,syy,stt";
const std::string kVariables = "index,t,x,y,theta,vx,vy,omega,ax,ay,alpha";

std::string write_config(const std::string& name, const std::string& body) {
  const fs::path p = scratch() / name;
  spit(p, body);
  return p.string();
}

/// One short noisy scenario shared by most tests.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const auto cfg = write_config("short.json", R"({"seed": 17, "duration": 10.0})");
    ASSERT_EQ(ctraj("simulate --config " + cfg + " --out " + dir("sc")).code, 0);
  }
  static std::string dir(const std::string& name) { return (scratch() / name).string(); }
  static Result estimate(const std::string& out, const std::string& flags) {
    return ctraj("estimate --scenario " + dir("sc") + " --out " + dir(out) + " " + flags);
  }
};

TEST_F(Cli, SimulateWritesFourFilesWithExactHeaders) {
  for (const char* f : {"measurements.csv", "truth.csv", "landmarks.csv", "manifest.json"})
    EXPECT_TRUE(fs::exists(scratch() / "sc" / f)) << f;
  auto ms = csv_file(scratch() / "sc" / "measurements.csv", "type,t,v0,v1,landmark_id");
  auto truth = csv_file(scratch() / "sc" / "truth.csv", "t,x,y,theta,vx,vy,omega");
  auto lms = csv_file(scratch() / "sc" / "landmarks.csv", "id,x,y");
  EXPECT_EQ(lms.size(), 20u);
  EXPECT_EQ(truth.size(), 1001u);
  std::size_t gyro = 0;
  for (const auto& r : ms) {
    ASSERT_EQ(r.size(), 5u);
    if (r[0] == "gyro") ++gyro;
    EXPECT_EQ(r[4].empty(), r[0] != "rb");
  }
  EXPECT_EQ(gyro, 2001u);
  EXPECT_NE(slurp(scratch() / "sc" / "manifest.json").find("\"seed\": 17"), std::string::npos);
}

TEST_F(Cli, SimulateIsByteIdenticalAcrossRuns) {
  const auto cfg = write_config("short2.json", R"({"seed": 17, "duration": 10.0})");
  ASSERT_EQ(ctraj("simulate --config " + cfg + " --out " + dir("sc_again")).code, 0);
  for (const char* f : {"measurements.csv", "truth.csv", "landmarks.csv"})
    EXPECT_EQ(slurp(scratch() / "sc" / f), slurp(scratch() / "sc_again" / f)) << f;
}

TEST_F(Cli, SimulateConfigErrorsExitTwoNamingTheField) {
  auto r = ctraj("simulate --config " + write_config("zero.json", R"({"seed": 1, "duration": 0})") + " --out " +
                 dir("bad"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("duration"), std::string::npos) << r.err;
  r = ctraj("simulate --config " + write_config("noseed.json", R"({"duration": 10})") + " --out " + dir("bad"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("seed"), std::string::npos) << r.err;
  r = ctraj("simulate --config " + write_config("typo.json", R"({"seed": 1, "sigma_gyr": 0.1})") + " --out " +
            dir("bad"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("sigma_gyr"), std::string::npos) << r.err;
  EXPECT_EQ(ctraj("simulate --config " + dir("missing.json") + " --out " + dir("bad")).code, 2);
  EXPECT_EQ(ctraj("simulate --out " + dir("bad")).code, 2);
}

TEST_F(Cli, GpEstimatePopulatesCovarianceAndInterpolatesSupportStatesExactly) {
  ASSERT_EQ(estimate("gp", "--backend gp --prior wnoj").code, 0);
  auto rows = csv_file(scratch() / "gp" / "estimate.csv", kEstimate);
  ASSERT_EQ(rows.size(), 1001u);
  for (const auto& r : rows)
    for (std::size_t c = 4; c < 8; ++c) ASSERT_FALSE(r[c].empty());
  auto vars = csv_file(scratch() / "gp" / "variables.csv", kVariables);
  ASSERT_EQ(vars.size(), 21u);
  auto r = ctraj("interpolate --estimate " + dir("gp") + " --times " + vars[7][1] + "," + vars[20][1]);
  ASSERT_EQ(r.code, 0) << r.err;
  auto out = csv(kEstimate + "\n" + r.out, kEstimate);
  ASSERT_EQ(out.size(), 2u);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(out[0][c], vars[7][c + 1]);
    EXPECT_EQ(out[1][c], vars[20][c + 1]);
  }
}

TEST_F(Cli, InterpolateReproducesEstimateRows) {
  ASSERT_EQ(estimate("gp_rows", "--backend gp").code, 0);
  auto text = slurp(scratch() / "gp_rows" / "estimate.csv");
  auto rows = csv(text, kEstimate);
  std::string times, expect;
  std::istringstream lines(text);
  std::string line;
  std::getline(lines, line);
  for (std::size_t i = 0; std::getline(lines, line); ++i) {
    if (i % 97 != 3) continue;
    times += (times.empty() ? "" : ",") + rows[i][0];
    expect += line + "\n";
  }
  auto r = ctraj("interpolate --estimate " + dir("gp_rows") + " --times " + times);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, expect);
}

TEST_F(Cli, InterpolateRejectsOutOfDomainTimes) {
  ASSERT_EQ(estimate("li_dom", "--backend li").code, 0);
  auto r = ctraj("interpolate --estimate " + dir("li_dom") + " --times 1,-0.5,10.25");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("-0.5"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("10.25"), std::string::npos) << r.err;
  EXPECT_TRUE(r.out.empty());
}

TEST_F(Cli, SplineInterpolationIsContinuousAcrossKnots) {
  ASSERT_EQ(estimate("sp", "--backend spline --order 4 --knot-hz 2").code, 0);
  auto rows = csv_file(scratch() / "sp" / "estimate.csv", kEstimate);
  for (std::size_t c = 4; c < 8; ++c) EXPECT_TRUE(rows[10][c].empty());
  // Knots of the centred grid: t_start + j / 2 with t_start = (10 - 21 / 2) / 2 = -0.25.
  for (double knot : {1.75, 4.25, 7.75}) {
    const double h = 1e-7;
    auto r = ctraj("interpolate --estimate " + dir("sp") + " --times " + num(knot - h) + "," + num(knot) + "," +
                   num(knot + h));
    ASSERT_EQ(r.code, 0) << r.err;
    auto out = csv(kEstimate + "\n" + r.out, kEstimate);
    for (std::size_t c = 1; c < 4; ++c) {
      EXPECT_NEAR(std::stod(out[0][c]), std::stod(out[1][c]), 1e-5);
      EXPECT_NEAR(std::stod(out[2][c]), std::stod(out[1][c]), 1e-5);
    }
  }
}

TEST_F(Cli, LinearInterpolationBackendIsGlerpOfItsVariables) {
  ASSERT_EQ(estimate("li", "--backend li --state-hz 2").code, 0);
  auto vars = csv_file(scratch() / "li" / "variables.csv", kVariables);
  auto rows = csv_file(scratch() / "li" / "estimate.csv", kEstimate);
  const GroupDescriptor se2 = GroupDescriptor::se2();
  auto pose = [&](const std::vector<std::string>& r, std::size_t c0) {
    return ManifoldElement(se2, Eigen::Vector3d(std::stod(r[c0]), std::stod(r[c0 + 1]), std::stod(r[c0 + 2])));
  };
  std::size_t seg = 0;
  for (const auto& r : rows) {
    const double t = std::stod(r[0]);
    while (seg + 2 < vars.size() && t >= std::stod(vars[seg + 1][1])) ++seg;
    const double t0 = std::stod(vars[seg][1]), t1 = std::stod(vars[seg + 1][1]);
    const ManifoldElement expect = glerp(pose(vars[seg], 2), pose(vars[seg + 1], 2), (t - t0) / (t1 - t0));
    const ManifoldElement got = pose(r, 1);
    EXPECT_LT(boxminus(got, expect).data().norm(), 1e-12) << t;
  }
}

TEST_F(Cli, EstimateFlagErrorsExitTwo) {
  EXPECT_EQ(estimate("x", "--backend ekf").code, 2);
  EXPECT_EQ(estimate("x", "--backend spline --prior wnoj").code, 2);
  EXPECT_EQ(estimate("x", "--backend gp --order 4").code, 2);
  EXPECT_EQ(estimate("x", "--backend gp --qc 1,2").code, 2);
  EXPECT_EQ(estimate("x", "--backend gp --state-hz -1").code, 2);
  EXPECT_EQ(estimate("x", "--backend spline --threads 0").code, 2);
  EXPECT_EQ(ctraj("estimate --scenario " + dir("nowhere") + " --out " + dir("x")).code, 2);
  auto r = estimate("x", "--backend gp --prior wnoa");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("unsupported"), std::string::npos) << r.err;
}

TEST_F(Cli, NoConvergenceExitsThreeAndStillWritesTheReport) {
  auto r = estimate("nc", "--backend spline --max-iterations 1");
  EXPECT_EQ(r.code, 3);
  const std::string m = slurp(scratch() / "nc" / "manifest.json");
  EXPECT_NE(m.find("\"status\": \"no_convergence\""), std::string::npos);
  EXPECT_NE(m.find("\"solve_report\""), std::string::npos);
}

TEST_F(Cli, EstimateFilesAreIndependentOfThreadCount) {
  for (const char* backend : {"spline", "gp"}) {
    const std::string a = std::string(backend) + "_t1", b = std::string(backend) + "_t3";
    ASSERT_EQ(estimate(a, std::string("--backend ") + backend + " --threads 1").code, 0);
    ASSERT_EQ(estimate(b, std::string("--backend ") + backend + " --threads 3").code, 0);
    for (const char* f : {"estimate.csv", "variables.csv", "segment_covariance.csv"}) {
      if (!fs::exists(scratch() / a / f)) continue;
      EXPECT_EQ(slurp(scratch() / a / f), slurp(scratch() / b / f)) << backend << " " << f;
    }
  }
}

TEST_F(Cli, EvaluateOfTruthReplayIsZeroAndStable) {
  // Estimate directory replaying truth.csv poses without covariance.
  fs::create_directories(scratch() / "replay");
  std::string text = kEstimate + "\n";
  for (const auto& r : csv_file(scratch() / "sc" / "truth.csv", "t,x,y,theta,vx,vy,omega"))
    text += r[0] + "," + r[1] + "," + r[2] + "," + r[3] + ",,,,\n";
  spit(scratch() / "replay" / "estimate.csv", text);
  spit(scratch() / "replay" / "manifest.json", R"({"domain": [0, 10]})");
  auto r = ctraj("evaluate --scenario " + dir("sc") + " --estimate " + dir("replay"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "{\"position_rmse\":0.0,\"heading_rmse\":0.0,\"mean_nees\":null,\"runtime_s\":null}\n");

  ASSERT_EQ(estimate("gp_eval", "--backend gp").code, 0);
  auto first = ctraj("evaluate --scenario " + dir("sc") + " --estimate " + dir("gp_eval"));
  auto second = ctraj("evaluate --scenario " + dir("sc") + " --estimate " + dir("gp_eval"));
  ASSERT_EQ(first.code, 0) << first.err;
  EXPECT_EQ(first.out, second.out);
  EXPECT_NE(first.out.find("\"mean_nees\":"), std::string::npos);
  EXPECT_EQ(first.out.find("\"mean_nees\":null"), std::string::npos);
}

TEST_F(Cli, EvaluateRejectsMissingFilesAndDomainMismatch) {
  EXPECT_EQ(ctraj("evaluate --scenario " + dir("sc") + " --estimate " + dir("nowhere")).code, 2);
  fs::create_directories(scratch() / "short_domain");
  spit(scratch() / "short_domain" / "estimate.csv", kEstimate + "\n0,0,0,0,,,,\n");
  spit(scratch() / "short_domain" / "manifest.json", R"({"domain": [0, 4]})");
  auto r = ctraj("evaluate --scenario " + dir("sc") + " --estimate " + dir("short_domain"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("(4, 10]"), std::string::npos) << r.err;
  fs::remove(scratch() / "short_domain" / "estimate.csv");
  spit(scratch() / "short_domain" / "manifest.json", R"({"domain": [0, 10]})");
  EXPECT_EQ(ctraj("evaluate --scenario " + dir("sc") + " --estimate " + dir("short_domain")).code, 2);
}

TEST_F(Cli, ParsersRejectHeaderDeviations) {
  EXPECT_THROW(csv("t,x,y,theta,sxx,sxy,syy,stt \n", kEstimate), std::runtime_error);
  EXPECT_THROW(csv("T,x,y,theta,sxx,sxy,syy,stt\n", kEstimate), std::runtime_error);

  fs::copy(scratch() / "sc", scratch() / "sc_bad", fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  std::string m = slurp(scratch() / "sc_bad" / "measurements.csv");
  m.replace(0, std::string("type,t,v0,v1,landmark_id").size(), "type,time,v0,v1,landmark_id");
  spit(scratch() / "sc_bad" / "measurements.csv", m);
  auto r = ctraj("estimate --scenario " + dir("sc_bad") + " --out " + dir("x") + " --backend li");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("header"), std::string::npos) << r.err;
}

TEST(CliZeroNoise, SplineWithTruthExpressivenessReachesZeroCost) {
  const auto cfg = write_config("zero_noise.json", R"({"seed": 3, "duration": 8.0,
      "sigma_gyro": 0, "sigma_accel": 0, "sigma_range": 0, "sigma_bearing": 0})");
  const std::string sc = (scratch() / "zn").string(), est = (scratch() / "zn_est").string();
  ASSERT_EQ(ctraj("simulate --config " + cfg + " --out " + sc).code, 0);
  auto r = ctraj("estimate --scenario " + sc + " --out " + est + " --backend spline --order 6 --knot-hz 1");
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string m = slurp(fs::path(est) / "manifest.json");
  const auto pos = m.find("\"final_cost\": ");
  ASSERT_NE(pos, std::string::npos);
  EXPECT_LT(std::stod(m.substr(pos + 14)), 1e-8);
  auto e = ctraj("evaluate --scenario " + sc + " --estimate " + est);
  ASSERT_EQ(e.code, 0);
  const auto rm = e.out.find("\"position_rmse\":");
  EXPECT_LT(std::stod(e.out.substr(rm + 16)), 1e-6) << e.out;
}

TEST(CliUsage, MissingSubcommandAndHelp) {
  EXPECT_EQ(ctraj("").code, 2);
  EXPECT_EQ(ctraj("frobnicate").code, 2);
  auto h = ctraj("--help");
  EXPECT_EQ(h.code, 0);
  EXPECT_NE(h.out.find("estimate"), std::string::npos);
}

}  // namespace
}  // namespace ctraj
