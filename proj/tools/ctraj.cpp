// ctraj: simulate planar scenarios, estimate continuous-time trajectories (li / spline / gp),
// evaluate them against truth and interpolate saved estimates.
//
// Exit codes: 0 success, 2 usage / config / input error, 3 numerical failure.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "ctraj/estimator.hpp"

#ifndef CTRAJ_VERSION
#define CTRAJ_VERSION "0.0.0-unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace ctraj::cli {
namespace {

/// Bad flags, unreadable or malformed input files: exit 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

const char* const kMeasurementsHeader = "type,t,v0,v1,landmark_id";
const char* const kTruthHeader = "t,x,y,theta,vx,vy,omega";
const char* const kLandmarksHeader = "id,x,y";
const char* const kEstimateHeader = "t,x,y,theta,sxx,sxy,syy,stt";
const char* const kVariablesHeader = "index,t,x,y,theta,vx,vy,omega,ax,ay,alpha";
const char* const kSegmentCovHeader = "segment,row,col,value";

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---- text I/O ---------------------------------------------------------------------------

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + p.string());
  out << content;
  if (!out.flush()) throw UsageError("failed writing " + p.string());
}

/// Write-then-rename so a reader never sees a partial manifest.
void write_atomic(const fs::path& p, const std::string& content) {
  fs::path tmp = p;
  tmp += ".tmp";
  write_file(tmp, content);
  fs::rename(tmp, p);
}

struct CsvTable {
  std::string name;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;  // 1-based source line per row
};

std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Reads a CSV whose first line must equal `header` exactly.
CsvTable read_csv(const fs::path& p, const std::string& header) {
  std::istringstream in(read_file(p));
  CsvTable t;
  t.name = p.filename().string();
  std::string line;
  if (!std::getline(in, line) || line != header)
    throw UsageError(t.name + ": header must be exactly '" + header + "', got '" + line + "'");
  const std::size_t cols = split(header).size();
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != cols)
      throw UsageError(t.name + ":" + std::to_string(n) + ": expected " + std::to_string(cols) + " fields");
    t.rows.push_back(std::move(cells));
    t.lines.push_back(n);
  }
  return t;
}

double parse_double(const std::string& s, const std::string& where) {
  if (s.empty()) throw UsageError(where + ": missing number");
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v))
    throw UsageError(where + ": not a finite number: '" + s + "'");
  return v;
}

long parse_int(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const long v = s.empty() ? 0 : std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size()) throw UsageError(where + ": not an integer: '" + s + "'");
  return v;
}

std::string where(const CsvTable& t, std::size_t r, const char* column) {
  return t.name + ":" + std::to_string(t.lines[r]) + " " + column;
}

// ---- config JSON ------------------------------------------------------------------------

json to_json(const sim::EstimatorConfig& e) {
  return {{"backend", e.backend},   {"spline_order", e.spline_order},
          {"state_hz", e.state_hz}, {"gp_prior", e.gp_prior},
          {"qc", {e.qc[0], e.qc[1], e.qc[2]}}, {"query_hz", e.query_hz}};
}

json to_json(const sim::ScenarioConfig& c) {
  json j;
  j["duration"] = c.duration;
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  j["landmark_count"] = c.landmark_count;
  j["field_extent"] = c.field_extent;
  j["max_range"] = c.max_range;
  j["gyro_rate"] = c.gyro_rate;
  j["accel_rate"] = c.accel_rate;
  j["rb_rate"] = c.rb_rate;
  j["sigma_gyro"] = c.sigma_gyro;
  j["sigma_accel"] = c.sigma_accel;
  j["sigma_range"] = c.sigma_range;
  j["sigma_bearing"] = c.sigma_bearing;
  j["truth_spline_order"] = c.truth_spline_order;
  j["truth_knot_hz"] = c.truth_knot_hz;
  j["estimator"] = to_json(c.estimator);
  return j;
}

double number_field(const json& j, const std::string& field) {
  if (!j.is_number()) throw ConfigError(field, "expected a number");
  return j.get<double>();
}

int int_field(const json& j, const std::string& field) {
  if (!j.is_number_integer()) throw ConfigError(field, "expected an integer");
  return j.get<int>();
}

std::string string_field(const json& j, const std::string& field) {
  if (!j.is_string()) throw ConfigError(field, "expected a string");
  return j.get<std::string>();
}

void read_estimator(const json& j, sim::EstimatorConfig& e) {
  if (!j.is_object()) throw ConfigError("estimator", "expected an object");
  for (const auto& [key, v] : j.items()) {
    const std::string f = "estimator." + key;
    if (key == "backend") e.backend = string_field(v, f);
    else if (key == "spline_order") e.spline_order = int_field(v, f);
    else if (key == "state_hz") e.state_hz = number_field(v, f);
    else if (key == "gp_prior") e.gp_prior = string_field(v, f);
    else if (key == "query_hz") e.query_hz = number_field(v, f);
    else if (key == "qc") {
      if (v.is_number()) {
        e.qc.setConstant(v.get<double>());
      } else if (v.is_array() && v.size() == 3) {
        for (int i = 0; i < 3; ++i) e.qc[i] = number_field(v[static_cast<std::size_t>(i)], f);
      } else {
        throw ConfigError(f, "expected a number or an array of 3 numbers");
      }
    } else {
      throw ConfigError(f, "unknown field");
    }
  }
}

/// Parses and validates a scenario config; unknown keys are errors.
sim::ScenarioConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config", "expected a JSON object");
  sim::ScenarioConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "duration") c.duration = number_field(v, key);
    else if (key == "seed") {
      if (v.is_null()) continue;
      if (!v.is_number_unsigned()) throw ConfigError(key, "expected a non-negative 64-bit integer");
      c.seed = v.get<std::uint64_t>();
    } else if (key == "landmark_count") c.landmark_count = int_field(v, key);
    else if (key == "field_extent") c.field_extent = number_field(v, key);
    else if (key == "max_range") c.max_range = number_field(v, key);
    else if (key == "gyro_rate") c.gyro_rate = number_field(v, key);
    else if (key == "accel_rate") c.accel_rate = number_field(v, key);
    else if (key == "rb_rate") c.rb_rate = number_field(v, key);
    else if (key == "sigma_gyro") c.sigma_gyro = number_field(v, key);
    else if (key == "sigma_accel") c.sigma_accel = number_field(v, key);
    else if (key == "sigma_range") c.sigma_range = number_field(v, key);
    else if (key == "sigma_bearing") c.sigma_bearing = number_field(v, key);
    else if (key == "truth_spline_order") c.truth_spline_order = int_field(v, key);
    else if (key == "truth_knot_hz") c.truth_knot_hz = number_field(v, key);
    else if (key == "estimator") read_estimator(v, c.estimator);
    else throw ConfigError(key, "unknown field");
  }
  c.validate();
  return c;
}

json parse_json_file(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw UsageError(p.string() + ": invalid JSON: " + e.what());
  }
}

json vec(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::Vector3d vec3(const json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 3) throw UsageError("manifest: " + field + " must be an array of 3 numbers");
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) throw UsageError("manifest: " + field + " must hold numbers");
    v[i] = j[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

const json& member(const json& j, const std::string& key, const std::string& file) {
  if (!j.is_object() || !j.contains(key)) throw UsageError(file + ": missing '" + key + "'");
  return j.at(key);
}

json base_manifest(const char* command) {
  json m;
  m["tool"] = "ctraj";
  m["version"] = CTRAJ_VERSION;
  m["command"] = command;
  return m;
}

json report_json(const SolveReport& r) {
  return {{"iterations", r.iterations},   {"initial_cost", r.initial_cost}, {"final_cost", r.final_cost},
          {"termination", r.termination}, {"cost_trace", r.cost_trace},     {"wall_time_s", r.wall_time_s}};
}

json metrics_json(const sim::Metrics& m) {
  return {{"position_rmse", m.position_rmse},
          {"heading_rmse", m.heading_rmse},
          {"mean_nees", m.mean_nees ? json(*m.mean_nees) : json(nullptr)}};
}

// ---- scenario files ---------------------------------------------------------------------

std::string measurement_row(const sim::Measurement& m) {
  std::string s = std::string(sim::to_string(m.type)) + "," + fmt(m.t) + "," + fmt(m.value[0]) + ",";
  if (m.type != sim::MeasurementType::kGyro) s += fmt(m.value[1]);
  s += ",";
  if (m.type == sim::MeasurementType::kRangeBearing) s += std::to_string(m.landmark_id);
  return s + "\n";
}

std::vector<sim::Measurement> read_measurements(const fs::path& p) {
  const CsvTable t = read_csv(p, kMeasurementsHeader);
  std::vector<sim::Measurement> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& c = t.rows[r];
    sim::Measurement m;
    if (c[0] == "gyro") m.type = sim::MeasurementType::kGyro;
    else if (c[0] == "accel") m.type = sim::MeasurementType::kAccel;
    else if (c[0] == "rb") m.type = sim::MeasurementType::kRangeBearing;
    else throw UsageError(where(t, r, "type") + ": unknown measurement type '" + c[0] + "'");
    m.t = parse_double(c[1], where(t, r, "t"));
    m.value[0] = parse_double(c[2], where(t, r, "v0"));
    if (m.type == sim::MeasurementType::kGyro) {
      if (!c[3].empty()) throw UsageError(where(t, r, "v1") + ": must be empty for gyro");
    } else {
      m.value[1] = parse_double(c[3], where(t, r, "v1"));
    }
    if (m.type == sim::MeasurementType::kRangeBearing) {
      m.landmark_id = static_cast<int>(parse_int(c[4], where(t, r, "landmark_id")));
    } else if (!c[4].empty()) {
      throw UsageError(where(t, r, "landmark_id") + ": must be empty for " + c[0]);
    }
    if (!out.empty() && m.t < out.back().t) throw UsageError(where(t, r, "t") + ": stream is not time ordered");
    out.push_back(m);
  }
  return out;
}

std::map<int, Eigen::Vector2d> read_landmarks(const fs::path& p) {
  const CsvTable t = read_csv(p, kLandmarksHeader);
  std::map<int, Eigen::Vector2d> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const int id = static_cast<int>(parse_int(t.rows[r][0], where(t, r, "id")));
    if (!out.emplace(id, Eigen::Vector2d(parse_double(t.rows[r][1], where(t, r, "x")),
                                         parse_double(t.rows[r][2], where(t, r, "y"))))
             .second)
      throw UsageError(where(t, r, "id") + ": duplicate landmark id");
  }
  return out;
}

struct Scenario {
  sim::ScenarioConfig config;
  json manifest;
};

Scenario read_scenario_manifest(const fs::path& dir) {
  const fs::path p = dir / "manifest.json";
  if (!fs::exists(p)) throw UsageError("scenario directory has no manifest.json: " + dir.string());
  Scenario s;
  s.manifest = parse_json_file(p);
  if (!s.manifest.is_object() || s.manifest.value("command", "") != "simulate")
    throw UsageError(p.string() + ": not a scenario manifest");
  s.config = config_from_json(member(s.manifest, "config", p.string()));
  return s;
}

int cmd_simulate(const fs::path& config_path, const fs::path& out) {
  const auto t0 = Clock::now();
  const sim::ScenarioConfig cfg = config_from_json(parse_json_file(config_path));
  const sim::GroundTruth truth = sim::generate_scenario(cfg);
  const auto ms = sim::sample_measurements(truth, cfg);
  fs::create_directories(out);

  std::string text = std::string(kMeasurementsHeader) + "\n";
  std::map<std::string, int> counts{{"gyro", 0}, {"accel", 0}, {"rb", 0}};
  for (const auto& m : ms) {
    text += measurement_row(m);
    ++counts[sim::to_string(m.type)];
  }
  write_file(out / "measurements.csv", text);

  text = std::string(kTruthHeader) + "\n";
  for (double t : sim::query_times(cfg.duration, cfg.estimator.query_hz)) {
    const sim::TruthState s = truth.at(t);
    const Eigen::Vector2d v = s.world_velocity();
    text += fmt(t) + "," + fmt(s.pose[0]) + "," + fmt(s.pose[1]) + "," + fmt(s.pose[2]) + "," + fmt(v.x()) + "," +
            fmt(v.y()) + "," + fmt(s.velocity[2]) + "\n";
  }
  write_file(out / "truth.csv", text);

  text = std::string(kLandmarksHeader) + "\n";
  for (const auto& l : truth.landmarks)
    text += std::to_string(l.id) + "," + fmt(l.position.x()) + "," + fmt(l.position.y()) + "\n";
  write_file(out / "landmarks.csv", text);

  const sim::TruthState s0 = truth.at(0.0);
  json m = base_manifest("simulate");
  m["config"] = to_json(cfg);
  m["seed"] = *cfg.seed;
  m["initial_state"] = {{"pose", vec(s0.pose.data())},
                        {"velocity", vec(s0.velocity)},
                        {"acceleration", vec(s0.acceleration)}};
  m["counts"] = counts;
  m["timings"] = {{"total_s", seconds_since(t0)}};
  write_atomic(out / "manifest.json", m.dump(2) + "\n");
  return 0;
}

// ---- estimate files ---------------------------------------------------------------------

std::string estimate_row(const sim::EstimateSample& s) {
  std::string row = fmt(s.t) + "," + fmt(s.pose[0]) + "," + fmt(s.pose[1]) + "," + fmt(s.pose[2]) + ",";
  if (s.position_cov) {
    const auto& P = *s.position_cov;
    row += fmt(P(0, 0)) + "," + fmt(0.5 * (P(0, 1) + P(1, 0))) + "," + fmt(P(1, 1)) + ",";
  } else {
    row += ",,,";
  }
  if (s.heading_var) row += fmt(*s.heading_var);
  return row + "\n";
}

std::string variables_csv(const TrajectoryEstimate& e) {
  std::string text = std::string(kVariablesHeader) + "\n";
  if (e.spline) {
    const auto& pts = e.spline->control_points();
    for (std::size_t j = 0; j < pts.size(); ++j)
      text += std::to_string(j) + ",," + fmt(pts[j][0]) + "," + fmt(pts[j][1]) + "," + fmt(pts[j][2]) + ",,,,,,\n";
    return text;
  }
  for (std::size_t i = 0; i < e.states.size(); ++i) {
    const Eigen::VectorXd d = e.states[i].data();
    text += std::to_string(i) + "," + fmt(e.times[i]);
    for (Eigen::Index c = 0; c < 9; ++c) text += "," + (c < d.size() ? fmt(d[c]) : std::string());
    text += "\n";
  }
  return text;
}

std::string segment_covariance_csv(const TrajectoryEstimate& e) {
  std::string text = std::string(kSegmentCovHeader) + "\n";
  for (std::size_t i = 0; i < e.segment_covariance.size(); ++i) {
    const auto& P = e.segment_covariance[i];
    for (Eigen::Index r = 0; r < P.rows(); ++r)
      for (Eigen::Index c = 0; c < P.cols(); ++c)
        text += std::to_string(i) + "," + std::to_string(r) + "," + std::to_string(c) + "," + fmt(P(r, c)) + "\n";
  }
  return text;
}

EstimationInput read_input(const fs::path& dir, const Scenario& s) {
  EstimationInput in;
  in.duration = s.config.duration;
  in.measurements = read_measurements(dir / "measurements.csv");
  in.landmarks = read_landmarks(dir / "landmarks.csv");
  const auto& c = s.config;
  in.noise = {c.sigma_gyro, c.sigma_accel, c.sigma_range, c.sigma_bearing};
  const std::string file = (dir / "manifest.json").string();
  const json& init = member(s.manifest, "initial_state", file);
  in.initial_pose = ManifoldElement(GroupDescriptor::se2(), vec3(member(init, "pose", file), "initial_state.pose"));
  in.initial_velocity = vec3(member(init, "velocity", file), "initial_state.velocity");
  in.initial_acceleration = vec3(member(init, "acceleration", file), "initial_state.acceleration");
  return in;
}

struct EstimateFlags {
  std::string backend;
  std::optional<int> order;
  std::optional<double> knot_hz;
  std::optional<std::string> prior;
  std::optional<double> state_hz;
  std::optional<std::string> qc;
  std::optional<double> query_hz;
  int threads = 1;
  int max_iterations = 50;
};

/// Scenario estimator section overridden by the command-line flags.
sim::EstimatorConfig apply_flags(sim::EstimatorConfig e, const EstimateFlags& f) {
  if (!f.backend.empty()) e.backend = f.backend;
  auto only = [&](bool given, const char* flag, const char* backend) {
    if (given && e.backend != backend)
      throw UsageError(std::string("--") + flag + " applies only to --backend " + backend);
  };
  only(f.order.has_value(), "order", "spline");
  only(f.knot_hz.has_value(), "knot-hz", "spline");
  only(f.prior.has_value(), "prior", "gp");
  only(f.qc.has_value(), "qc", "gp");
  if (f.state_hz && e.backend == "spline") throw UsageError("--state-hz applies to --backend li|gp; use --knot-hz");
  if (f.order) e.spline_order = *f.order;
  if (f.knot_hz) e.state_hz = *f.knot_hz;
  if (f.state_hz) e.state_hz = *f.state_hz;
  if (f.prior) e.gp_prior = *f.prior;
  if (f.query_hz) e.query_hz = *f.query_hz;
  if (f.qc) {
    auto parts = split(*f.qc);
    if (parts.size() == 1) {
      e.qc.setConstant(parse_double(parts[0], "--qc"));
    } else if (parts.size() == 3) {
      for (int i = 0; i < 3; ++i) e.qc[i] = parse_double(parts[static_cast<std::size_t>(i)], "--qc");
    } else {
      throw UsageError("--qc expects one value or three comma-separated values");
    }
  }
  return e;
}

std::vector<sim::EstimateSample> sample_estimate(const TrajectoryEstimate& e, double duration, double rate) {
  std::vector<sim::EstimateSample> out;
  for (double t : sim::query_times(duration, rate)) out.push_back(e.query(t));
  return out;
}

int cmd_estimate(const fs::path& scenario_dir, const fs::path& out, const EstimateFlags& flags) {
  const auto t0 = Clock::now();
  if (flags.threads < 1) throw UsageError("--threads must be at least 1");
  if (flags.max_iterations < 1) throw UsageError("--max-iterations must be at least 1");
  Scenario s = read_scenario_manifest(scenario_dir);
  sim::ScenarioConfig cfg = s.config;
  cfg.estimator = apply_flags(cfg.estimator, flags);
  cfg.validate();
  const EstimationInput in = read_input(scenario_dir, s);

  json m = base_manifest("estimate");
  m["scenario"] = scenario_dir.string();
  m["config"] = to_json(cfg);
  m["seed"] = *cfg.seed;
  m["backend"] = cfg.estimator.backend;
  m["threads"] = flags.threads;
  m["max_iterations"] = flags.max_iterations;
  fs::create_directories(out);

  SolverOptions opt;
  opt.threads = flags.threads;
  opt.max_iterations = flags.max_iterations;
  const auto t_solve = Clock::now();
  auto no_convergence = [&](const std::string& what, const SolveReport& report) {
    m["status"] = "no_convergence";
    m["error"] = what;
    m["solve_report"] = report_json(report);
    m["timings"] = {{"estimate_s", seconds_since(t_solve)}, {"total_s", seconds_since(t0)}};
    write_atomic(out / "manifest.json", m.dump(2) + "\n");
    std::cerr << "ctraj estimate: " << what << "\n";
    return 3;
  };
  TrajectoryEstimate e;
  try {
    e = estimate_trajectory(in, cfg.estimator, opt);
  } catch (const NoConvergence& err) {
    return no_convergence(err.what(), err.report());
  }
  if (e.report.termination == "max_iterations")
    return no_convergence("no convergence within " + std::to_string(opt.max_iterations) + " iterations", e.report);
  const auto samples = sample_estimate(e, cfg.duration, cfg.estimator.query_hz);
  const double estimate_s = seconds_since(t_solve);

  std::string text = std::string(kEstimateHeader) + "\n";
  for (const auto& q : samples) text += estimate_row(q);
  write_file(out / "estimate.csv", text);
  write_file(out / "variables.csv", variables_csv(e));
  if (e.has_covariance()) write_file(out / "segment_covariance.csv", segment_covariance_csv(e));

  m["status"] = "converged";
  m["domain"] = {e.t_min(), e.t_max()};
  if (e.spline) {
    const sim::KnotGrid g = sim::centered_grid(cfg.duration, cfg.estimator.state_hz);
    m["spline"] = {{"order", e.spline->order()}, {"t_start", g.t_start}, {"dt", g.dt}, {"segments", g.segments}};
  }
  m["solve_report"] = report_json(e.report);
  m["metrics"] = metrics_json(sim::evaluate(samples, sim::generate_scenario(cfg)));
  m["timings"] = {{"estimate_s", estimate_s}, {"total_s", seconds_since(t0)}};
  write_atomic(out / "manifest.json", m.dump(2) + "\n");
  return 0;
}

/// Rebuilds a queryable estimate from its directory.
TrajectoryEstimate load_estimate(const fs::path& dir) {
  const fs::path mp = dir / "manifest.json";
  if (!fs::exists(mp)) throw UsageError("estimate directory has no manifest.json: " + dir.string());
  const json m = parse_json_file(mp);
  if (m.value("status", "") != "converged") throw UsageError(mp.string() + ": not a converged estimate");
  const sim::ScenarioConfig cfg = config_from_json(member(m, "config", mp.string()));

  TrajectoryEstimate e;
  e.backend = cfg.estimator.backend;
  e.config = cfg.estimator;
  const CsvTable t = read_csv(dir / "variables.csv", kVariablesHeader);
  const GroupDescriptor se2 = GroupDescriptor::se2();
  auto pose_of = [&](std::size_t r) {
    return Eigen::Vector3d(parse_double(t.rows[r][2], where(t, r, "x")), parse_double(t.rows[r][3], where(t, r, "y")),
                           parse_double(t.rows[r][4], where(t, r, "theta")));
  };
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    if (parse_int(t.rows[r][0], where(t, r, "index")) != static_cast<long>(r))
      throw UsageError(where(t, r, "index") + ": indices must be 0, 1, 2, ...");

  if (e.backend == "spline") {
    const sim::KnotGrid g = sim::centered_grid(cfg.duration, cfg.estimator.state_hz);
    std::vector<ManifoldElement> pts;
    for (std::size_t r = 0; r < t.rows.size(); ++r) pts.emplace_back(se2, pose_of(r));
    if (static_cast<int>(pts.size()) != g.control_points(cfg.estimator.spline_order))
      throw UsageError("variables.csv: control point count does not match the estimator config");
    e.spline.emplace(SplineTrajectory::uniform(se2, cfg.estimator.spline_order, g.t_start, g.dt, std::move(pts)));
    return e;
  }
  if (t.rows.size() < 2) throw UsageError("variables.csv: need at least two states");
  const int blocks = e.backend == "gp" ? e.gp_prior().blocks() : 1;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    e.times.push_back(parse_double(t.rows[r][1], where(t, r, "t")));
    if (r > 0 && !(e.times[r] > e.times[r - 1])) throw UsageError(where(t, r, "t") + ": times must increase");
    if (blocks == 1) {
      e.states.emplace_back(se2, pose_of(r));
      continue;
    }
    SupportState st{e.times[r], ManifoldElement(se2, pose_of(r)), {}};
    static const char* const names[] = {"vx", "vy", "omega", "ax", "ay", "alpha"};
    for (int b = 1; b < blocks; ++b) {
      Eigen::Vector3d d;
      for (int i = 0; i < 3; ++i) {
        const int c = 3 * (b - 1) + i;
        d[i] = parse_double(t.rows[r][static_cast<std::size_t>(5 + c)], where(t, r, names[c]));
      }
      st.derivatives.emplace_back(se2, d);
    }
    e.states.push_back(to_variable(st));
  }
  if (e.backend == "gp") {
    const Eigen::Index n = 2 * 3 * blocks;
    const CsvTable c = read_csv(dir / "segment_covariance.csv", kSegmentCovHeader);
    if (c.rows.size() != (e.times.size() - 1) * static_cast<std::size_t>(n * n))
      throw UsageError("segment_covariance.csv: expected " + std::to_string(n) + "x" + std::to_string(n) +
                       " entries for each of " + std::to_string(e.times.size() - 1) + " segments");
    e.segment_covariance.assign(e.times.size() - 1, Eigen::MatrixXd::Zero(n, n));
    for (std::size_t r = 0; r < c.rows.size(); ++r) {
      const long seg = parse_int(c.rows[r][0], where(c, r, "segment"));
      const long row = parse_int(c.rows[r][1], where(c, r, "row"));
      const long col = parse_int(c.rows[r][2], where(c, r, "col"));
      if (seg < 0 || row < 0 || col < 0 || static_cast<std::size_t>(seg) >= e.segment_covariance.size() || row >= n ||
          col >= n)
        throw UsageError(where(c, r, "segment") + ": index out of range");
      e.segment_covariance[static_cast<std::size_t>(seg)](row, col) = parse_double(c.rows[r][3], where(c, r, "value"));
    }
  }
  e.finalize();
  return e;
}

int cmd_interpolate(const fs::path& dir, const std::string& times_arg) {
  const TrajectoryEstimate e = load_estimate(dir);
  std::vector<double> times;
  for (const auto& s : split(times_arg)) times.push_back(parse_double(s, "--times"));
  std::vector<std::string> bad;
  for (double t : times) {
    const bool inside = e.spline ? (t >= e.t_min() && t < e.t_max()) : (t >= e.t_min() && t <= e.t_max());
    if (!inside) bad.push_back(fmt(t));
  }
  if (!bad.empty()) {
    std::string list;
    for (const auto& b : bad) list += (list.empty() ? "" : ",") + b;
    throw UsageError("times outside the estimate domain [" + fmt(e.t_min()) + ", " + fmt(e.t_max()) +
                     (e.spline ? ")" : "]") + ": " + list);
  }
  std::string text;
  for (double t : times) text += estimate_row(e.query(t));
  std::cout << text;
  return 0;
}

int cmd_evaluate(const fs::path& scenario_dir, const fs::path& estimate_dir) {
  const Scenario s = read_scenario_manifest(scenario_dir);
  const fs::path mp = estimate_dir / "manifest.json";
  if (!fs::exists(mp)) throw UsageError("estimate directory has no manifest.json: " + estimate_dir.string());
  const json m = parse_json_file(mp);
  const json& domain = member(m, "domain", mp.string());
  if (!domain.is_array() || domain.size() != 2 || !domain[0].is_number() || !domain[1].is_number())
    throw UsageError(mp.string() + ": domain must be [t_min, t_max]");
  const double lo = domain[0].get<double>(), hi = domain[1].get<double>();
  const double d = s.config.duration;
  if (lo > 0.0 || hi < d)
    throw UsageError("estimate domain [" + fmt(lo) + ", " + fmt(hi) + "] does not cover the scenario interval [0, " +
                     fmt(d) + "]; uncovered: " + (lo > 0.0 ? "[0, " + fmt(lo) + ")" : "(" + fmt(hi) + ", " + fmt(d) + "]"));

  const CsvTable t = read_csv(estimate_dir / "estimate.csv", kEstimateHeader);
  if (t.rows.empty()) throw UsageError("estimate.csv has no rows");
  std::vector<sim::EstimateSample> samples;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& c = t.rows[r];
    sim::EstimateSample q;
    q.t = parse_double(c[0], where(t, r, "t"));
    if (!(q.t >= 0.0 && q.t <= d))
      throw UsageError(where(t, r, "t") + ": " + fmt(q.t) + " outside the scenario interval [0, " + fmt(d) + "]");
    q.pose = Eigen::Vector3d(parse_double(c[1], where(t, r, "x")), parse_double(c[2], where(t, r, "y")),
                             parse_double(c[3], where(t, r, "theta")));
    const bool any_cov = !c[4].empty() || !c[5].empty() || !c[6].empty();
    if (any_cov) {
      Eigen::Matrix2d P;
      const double sxy = parse_double(c[5], where(t, r, "sxy"));
      P << parse_double(c[4], where(t, r, "sxx")), sxy, sxy, parse_double(c[6], where(t, r, "syy"));
      q.position_cov = P;
    }
    if (!c[7].empty()) q.heading_var = parse_double(c[7], where(t, r, "stt"));
    samples.push_back(q);
  }
  const sim::Metrics metrics = sim::evaluate(samples, sim::generate_scenario(s.config));
  json out = metrics_json(metrics);
  const json* timings = m.contains("timings") ? &m.at("timings") : nullptr;
  out["runtime_s"] = timings && timings->contains("estimate_s") ? timings->at("estimate_s") : json(nullptr);
  std::cout << out.dump() << "\n";
  return 0;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Continuous-time trajectory estimation: simulate, estimate, evaluate, interpolate"};
  app.set_version_flag("--version", std::string("ctraj ") + CTRAJ_VERSION);
  app.require_subcommand(1);

  fs::path config, sim_out;
  auto* simulate = app.add_subcommand("simulate", "Generate a scenario and its measurement stream");
  simulate->add_option("--config", config, "Scenario config (JSON)")->required();
  simulate->add_option("--out", sim_out, "Output directory")->required();

  fs::path scenario, est_out;
  EstimateFlags flags;
  auto* estimate = app.add_subcommand("estimate", "Estimate the trajectory of a simulated scenario");
  estimate->add_option("--scenario", scenario, "Scenario directory")->required();
  estimate->add_option("--out", est_out, "Output directory")->required();
  estimate->add_option("--backend", flags.backend, "li | spline | gp (default: scenario config)")
      ->check(CLI::IsMember({"li", "spline", "gp"}));
  estimate->add_option("--order", flags.order, "Spline order k");
  estimate->add_option("--knot-hz", flags.knot_hz, "Spline knot frequency");
  estimate->add_option("--prior", flags.prior, "GP prior: wnoa | wnoj")->check(CLI::IsMember({"wnoa", "wnoj"}));
  estimate->add_option("--state-hz", flags.state_hz, "Support / pose state frequency (li, gp)");
  estimate->add_option("--qc", flags.qc, "GP power spectral density: v or v1,v2,v3");
  estimate->add_option("--query-hz", flags.query_hz, "estimate.csv sampling rate (default 100)");
  estimate->add_option("--threads", flags.threads, "Solver threads (default 1)");
  estimate->add_option("--max-iterations", flags.max_iterations, "Solver iteration limit (default 50)");

  fs::path eval_scenario, eval_estimate;
  auto* evaluate = app.add_subcommand("evaluate", "Print error metrics of an estimate as JSON");
  evaluate->add_option("--scenario", eval_scenario, "Scenario directory")->required();
  evaluate->add_option("--estimate", eval_estimate, "Estimate directory")->required();

  fs::path interp_dir;
  std::string times;
  auto* interpolate = app.add_subcommand("interpolate", "Query a saved estimate at arbitrary times");
  interpolate->add_option("--estimate", interp_dir, "Estimate directory")->required();
  interpolate->add_option("--times", times, "Comma-separated query times")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*simulate) return cmd_simulate(config, sim_out);
    if (*estimate) return cmd_estimate(scenario, est_out, flags);
    if (*evaluate) return cmd_evaluate(eval_scenario, eval_estimate);
    if (*interpolate) return cmd_interpolate(interp_dir, times);
  } catch (const ConfigError& e) {
    std::cerr << "ctraj: config error: " << e.what() << "\n";
    return 2;
  } catch (const Unsupported& e) {
    std::cerr << "ctraj: unsupported factor: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "ctraj: " << e.what() << "\n";
    return 2;
  } catch (const OutOfDomain& e) {
    std::cerr << "ctraj: " << e.what() << "\n";
    return 2;
  } catch (const InvalidArgument& e) {
    std::cerr << "ctraj: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "ctraj: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "ctraj: numerical failure: " << e.what() << "\n";
    return 3;
  }
  return 2;
}

}  // namespace ctraj::cli

int main(int argc, char** argv) { return ctraj::cli::run(argc, argv); }
