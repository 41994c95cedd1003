#pragma once
// Deterministic planar scenarios: a smooth SE(2) truth spline, a landmark field, and
// noisy gyro / accelerometer / range-bearing streams sampled from it.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ctraj/errors.hpp"
#include "ctraj/manifold.hpp"
#include "ctraj/spline.hpp"

namespace ctraj::sim {

/// Estimator section of a scenario. `state_hz` is the knot rate for splines and the
/// support-state rate for GP / linear-interpolation backends.
struct EstimatorConfig {
  std::string backend = "spline";  // li | spline | gp
  int spline_order = 4;
  double state_hz = 2.0;
  std::string gp_prior = "wnoj";  // wnoa | wnoj
  Eigen::Vector3d qc = Eigen::Vector3d(1.0, 1.0, 1.0);
  double query_hz = 100.0;
};

struct ScenarioConfig {
  double duration = 60.0;
  std::optional<std::uint64_t> seed;  // mandatory; there is no entropy source
  int landmark_count = 20;
  double field_extent = 40.0;  // landmarks uniform over [-extent/2, extent/2]^2
  double max_range = 30.0;
  double gyro_rate = 200.0;
  double accel_rate = 200.0;
  double rb_rate = 10.0;
  double sigma_gyro = 0.01;
  double sigma_accel = 0.05;
  double sigma_range = 0.1;
  double sigma_bearing = 0.01;
  int truth_spline_order = 6;
  double truth_knot_hz = 1.0;
  EstimatorConfig estimator;

  void validate() const {
    auto positive = [](double v, const char* field) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(field, "must be positive and finite");
    };
    auto non_negative = [](double v, const char* field) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(field, "must be non-negative and finite");
    };
    if (!seed) throw ConfigError("seed", "is required");
    positive(duration, "duration");
    positive(field_extent, "field_extent");
    positive(max_range, "max_range");
    positive(gyro_rate, "gyro_rate");
    positive(accel_rate, "accel_rate");
    positive(rb_rate, "rb_rate");
    non_negative(sigma_gyro, "sigma_gyro");
    non_negative(sigma_accel, "sigma_accel");
    non_negative(sigma_range, "sigma_range");
    non_negative(sigma_bearing, "sigma_bearing");
    positive(truth_knot_hz, "truth_knot_hz");
    if (landmark_count < 0) throw ConfigError("landmark_count", "must be non-negative");
    if (truth_spline_order < 2) throw ConfigError("truth_spline_order", "must be at least 2");
    const auto& e = estimator;
    if (e.backend != "li" && e.backend != "spline" && e.backend != "gp")
      throw ConfigError("estimator.backend", "must be one of li, spline, gp");
    if (e.gp_prior != "wnoa" && e.gp_prior != "wnoj") throw ConfigError("estimator.gp_prior", "must be wnoa or wnoj");
    if (e.spline_order < 2) throw ConfigError("estimator.spline_order", "must be at least 2");
    positive(e.state_hz, "estimator.state_hz");
    positive(e.query_hz, "estimator.query_hz");
    for (int i = 0; i < 3; ++i) positive(e.qc[i], "estimator.qc");
    if (!(duration > 2.0 / truth_knot_hz)) throw ConfigError("duration", "must exceed two truth knot intervals");
    if (!(duration > 2.0 / e.state_hz)) throw ConfigError("duration", "must exceed two estimator knot intervals");
  }
};

struct Landmark {
  int id = 0;
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
};

enum class MeasurementType { kGyro, kAccel, kRangeBearing };

inline const char* to_string(MeasurementType t) {
  switch (t) {
    case MeasurementType::kGyro: return "gyro";
    case MeasurementType::kAccel: return "accel";
    case MeasurementType::kRangeBearing: return "rb";
  }
  return "unknown";
}

/// gyro: value[0] = omega; accel: body-frame (ax, ay); rb: (range, bearing).
struct Measurement {
  MeasurementType type = MeasurementType::kGyro;
  double t = 0.0;
  Eigen::Vector2d value = Eigen::Vector2d::Zero();
  int landmark_id = -1;
};

/// Pose, body-frame twist (vx, vy, omega) and its time derivative at one instant.
struct TruthState {
  ManifoldElement pose;
  Eigen::Vector3d velocity;
  Eigen::Vector3d acceleration;

  Eigen::Vector2d world_velocity() const {
    const double c = std::cos(pose[2]), s = std::sin(pose[2]);
    return {c * velocity[0] - s * velocity[1], s * velocity[0] + c * velocity[1]};
  }
  /// Specific force in the body frame: R^T p'' for a planar rigid body.
  Eigen::Vector2d body_acceleration() const {
    return {acceleration[0] - velocity[2] * velocity[1], acceleration[1] + velocity[2] * velocity[0]};
  }
};

struct GroundTruth {
  SplineTrajectory spline;
  std::vector<Landmark> landmarks;
  double duration = 0.0;

  TruthState at(double t) const {
    LieEvaluation e = eval_lie(spline, t, 2);
    return {std::move(e.value), e.velocity->data(), e.acceleration->data()};
  }
};

namespace detail {

// Independent streams per purpose so e.g. changing landmark_count leaves the truth intact.
inline std::mt19937_64 stream(std::uint64_t seed, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), purpose};
  return std::mt19937_64(seq);
}

// Sample times n / rate for n = 0 .. floor(duration * rate).
inline std::vector<double> sample_times(double duration, double rate) {
  const auto n = static_cast<long>(std::floor(duration * rate + 1e-9));
  std::vector<double> t(static_cast<std::size_t>(n + 1));
  for (long i = 0; i <= n; ++i) t[static_cast<std::size_t>(i)] = static_cast<double>(i) / rate;
  return t;
}

}  // namespace detail

/// Uniform knot grid covering [0, duration] with half the slack before 0 and half after,
/// so every segment, including the last, holds sample times in its interior.
struct KnotGrid {
  double t_start = 0.0;
  double dt = 1.0;
  int segments = 0;
  int control_points(int order) const { return segments + order - 1; }
};

inline KnotGrid centered_grid(double duration, double hz) {
  KnotGrid g;
  g.dt = 1.0 / hz;
  g.segments = static_cast<int>(std::ceil(duration * hz - 1e-9)) + 1;
  g.t_start = 0.5 * (duration - g.segments * g.dt);
  return g;
}

/// Truth control points from a bounded random walk; the spline covers [0, duration].
inline GroundTruth generate_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  const GroupDescriptor se2 = GroupDescriptor::se2();
  const int k = cfg.truth_spline_order;
  const KnotGrid grid = centered_grid(cfg.duration, cfg.truth_knot_hz);
  const int count = grid.control_points(k);

  auto rng = detail::stream(*cfg.seed, 1);
  std::uniform_real_distribution<double> turn(-0.3, 0.3), step(0.3, 1.0), heading(-std::numbers::pi, std::numbers::pi);
  const double radius = 12.0;
  Eigen::Vector2d p = Eigen::Vector2d::Zero();
  double theta = heading(rng);
  std::vector<ManifoldElement> pts;
  pts.reserve(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) {
    if (j > 0) {
      double dtheta = turn(rng);
      if (p.norm() > radius) {
        // Steer back toward the centre, still within the per-knot heading bound.
        double to_centre = wrap_angle(std::atan2(-p.y(), -p.x()) - theta);
        dtheta = std::clamp(to_centre, -0.3, 0.3);
      }
      theta += dtheta;
      p += step(rng) * Eigen::Vector2d(std::cos(theta), std::sin(theta));
    }
    pts.emplace_back(se2, Eigen::Vector3d(p.x(), p.y(), theta));
  }

  auto lrng = detail::stream(*cfg.seed, 2);
  std::uniform_real_distribution<double> coord(-0.5 * cfg.field_extent, 0.5 * cfg.field_extent);
  std::vector<Landmark> landmarks;
  for (int i = 0; i < cfg.landmark_count; ++i) {
    const double x = coord(lrng);
    landmarks.push_back({i, Eigen::Vector2d(x, coord(lrng))});
  }
  return {SplineTrajectory::uniform(se2, k, grid.t_start, grid.dt, std::move(pts)), std::move(landmarks), cfg.duration};
}

/// Time-ordered stream (ties broken gyro, accel, rb). Each rb sample observes one random
/// landmark within max_range; samples with no visible landmark are dropped.
inline std::vector<Measurement> sample_measurements(const GroundTruth& truth, const ScenarioConfig& cfg) {
  cfg.validate();
  auto rng = detail::stream(*cfg.seed, 3);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<Measurement> out;
  for (double t : detail::sample_times(cfg.duration, cfg.gyro_rate)) {
    TruthState s = truth.at(t);
    out.push_back({MeasurementType::kGyro, t, Eigen::Vector2d(s.velocity[2] + cfg.sigma_gyro * n01(rng), 0.0), -1});
  }
  for (double t : detail::sample_times(cfg.duration, cfg.accel_rate)) {
    Eigen::Vector2d a = truth.at(t).body_acceleration();
    const double nx = n01(rng);
    const double ny = n01(rng);
    out.push_back({MeasurementType::kAccel, t, a + cfg.sigma_accel * Eigen::Vector2d(nx, ny), -1});
  }
  std::vector<const Landmark*> visible;
  for (double t : detail::sample_times(cfg.duration, cfg.rb_rate)) {
    const ManifoldElement pose = eval_lie(truth.spline, t, 0).value;
    const Eigen::Vector2d p(pose[0], pose[1]);
    visible.clear();
    for (const auto& l : truth.landmarks) {
      const double r = (l.position - p).norm();
      if (r < cfg.max_range && r > 1e-3) visible.push_back(&l);
    }
    if (visible.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, visible.size() - 1);
    const Landmark& l = *visible[pick(rng)];
    const Eigen::Vector2d d = l.position - p;
    const double nr = n01(rng);
    const double nb = n01(rng);
    const double range = d.norm() + cfg.sigma_range * nr;
    const double bearing = wrap_angle(std::atan2(d.y(), d.x()) - pose[2] + cfg.sigma_bearing * nb);
    out.push_back({MeasurementType::kRangeBearing, t, Eigen::Vector2d(range, bearing), l.id});
  }
  std::stable_sort(out.begin(), out.end(), [](const Measurement& a, const Measurement& b) {
    return a.t < b.t || (a.t == b.t && a.type < b.type);
  });
  return out;
}

/// One estimate query: pose and (when available) world-frame position covariance.
struct EstimateSample {
  double t = 0.0;
  Eigen::Vector3d pose = Eigen::Vector3d::Zero();  // x, y, theta
  std::optional<Eigen::Matrix2d> position_cov;
  std::optional<double> heading_var;
};

struct Metrics {
  double position_rmse = 0.0;
  double heading_rmse = 0.0;
  std::optional<double> mean_nees;  // over the 2-dof world position
  std::size_t samples = 0;
};

/// Uniform query times n / rate over [0, duration].
inline std::vector<double> query_times(double duration, double rate) { return detail::sample_times(duration, rate); }

inline Metrics evaluate(const std::vector<EstimateSample>& estimate, const GroundTruth& truth) {
  if (estimate.empty()) throw InvalidArgument("evaluate: estimate has no samples");
  Metrics m;
  double se_p = 0.0, se_h = 0.0, nees = 0.0;
  std::size_t n_nees = 0;
  const double lo = truth.spline.t_min(), hi = truth.spline.t_max();
  for (const auto& s : estimate) {
    if (!(s.t >= lo && s.t < hi)) throw OutOfDomain("evaluate: truth", s.t, lo, hi);
    const ManifoldElement x = eval_lie(truth.spline, s.t, 0).value;
    const Eigen::Vector2d e(s.pose[0] - x[0], s.pose[1] - x[1]);
    const double eh = wrap_angle(s.pose[2] - x[2]);
    se_p += e.squaredNorm();
    se_h += eh * eh;
    if (s.position_cov) {
      nees += e.dot(s.position_cov->ldlt().solve(e));
      ++n_nees;
    }
  }
  m.samples = estimate.size();
  m.position_rmse = std::sqrt(se_p / static_cast<double>(m.samples));
  m.heading_rmse = std::sqrt(se_h / static_cast<double>(m.samples));
  if (n_nees > 0) m.mean_nees = nees / static_cast<double>(n_nees);
  return m;
}

/// Queries `estimate` at uniform times over [0, duration]; the estimate must cover them all.
inline Metrics evaluate(const std::function<EstimateSample(double)>& estimate, double domain_lo, double domain_hi,
                        const GroundTruth& truth, double query_rate) {
  if (domain_lo > 0.0 || domain_hi < truth.duration)
    throw OutOfDomain("evaluate: estimate does not cover [0, duration]", domain_lo > 0.0 ? 0.0 : truth.duration,
                      domain_lo, domain_hi);
  std::vector<EstimateSample> samples;
  for (double t : query_times(truth.duration, query_rate)) samples.push_back(estimate(t));
  return evaluate(samples, truth);
}

}  // namespace ctraj::sim
