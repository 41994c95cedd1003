#pragma once
// Batch estimation of a planar trajectory from a measurement stream with one of three
// backends: discrete poses with linear interpolation (li), a cumulative B-spline, or a
// GP motion prior over support states.

#include <Eigen/Core>
#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ctraj/errors.hpp"
#include "ctraj/factors.hpp"
#include "ctraj/gp.hpp"
#include "ctraj/manifold.hpp"
#include "ctraj/sim.hpp"
#include "ctraj/solver.hpp"
#include "ctraj/spline.hpp"

namespace ctraj {

struct SensorNoise {
  double gyro = 0.01;
  double accel = 0.05;
  double range = 0.1;
  double bearing = 0.01;
};

/// Everything the estimator consumes: the stream, the landmark map, sensor std devs and
/// the known initial state (pose, body twist) with its prior std devs.
struct EstimationInput {
  double duration = 0.0;
  std::vector<sim::Measurement> measurements;
  std::map<int, Eigen::Vector2d> landmarks;
  SensorNoise noise;
  ManifoldElement initial_pose = ManifoldElement::identity(GroupDescriptor::se2());
  Eigen::Vector3d initial_velocity = Eigen::Vector3d::Zero();
  Eigen::Vector3d initial_acceleration = Eigen::Vector3d::Zero();
  Eigen::Vector3d initial_pose_sigma = Eigen::Vector3d(0.01, 0.01, 0.01);
  Eigen::Vector3d initial_velocity_sigma = Eigen::Vector3d(0.05, 0.05, 0.05);
  Eigen::Vector3d initial_acceleration_sigma = Eigen::Vector3d(0.5, 0.5, 0.5);
};

/// Weights use max(sigma, kSigmaFloor) so noise-free streams stay well posed.
inline constexpr double kSigmaFloor = 1e-3;

/// Dead reckoning from the initial state by integrating gyro and accelerometer readings.
class DeadReckoning {
 public:
  DeadReckoning(const EstimationInput& in) {
    ManifoldElement x = in.initial_pose;
    Eigen::Vector2d v = in.initial_velocity.head<2>();
    double w = in.initial_velocity[2];
    Eigen::Vector2d a = Eigen::Vector2d::Zero();
    double t = 0.0;
    push(t, x, v, w, a);
    for (const auto& m : in.measurements) {
      if (m.type == sim::MeasurementType::kRangeBearing) continue;
      if (m.t > t) {
        const double h = m.t - t;
        x = boxplus(x, TangentVector(x.descriptor(), Eigen::Vector3d(v.x() * h, v.y() * h, w * h)));
        // Body-frame velocity: v' = a - w x v.
        v += h * Eigen::Vector2d(a.x() + w * v.y(), a.y() - w * v.x());
        t = m.t;
      }
      if (m.type == sim::MeasurementType::kGyro) w = m.value[0];
      if (m.type == sim::MeasurementType::kAccel) a = m.value;
      push(t, x, v, w, a);
    }
  }

  struct Sample {
    double t;
    ManifoldElement pose;
    Eigen::Vector3d velocity;
    Eigen::Vector3d acceleration;
  };

  Sample at(double t) const {
    auto it = std::upper_bound(samples_.begin(), samples_.end(), t, [](double v, const Sample& s) { return v < s.t; });
    if (it == samples_.begin()) return samples_.front();
    if (it == samples_.end()) return samples_.back();
    const Sample& lo = *(it - 1);
    const Sample& hi = *it;
    const double alpha = (t - lo.t) / (hi.t - lo.t);
    return {t, glerp(lo.pose, hi.pose, alpha), (1 - alpha) * lo.velocity + alpha * hi.velocity,
            (1 - alpha) * lo.acceleration + alpha * hi.acceleration};
  }

 private:
  void push(double t, const ManifoldElement& x, const Eigen::Vector2d& v, double w, const Eigen::Vector2d& a) {
    Sample s{t, x, Eigen::Vector3d(v.x(), v.y(), w),
             Eigen::Vector3d(a.x() + w * v.y(), a.y() - w * v.x(), 0.0)};
    if (!samples_.empty() && samples_.back().t == t)
      samples_.back() = std::move(s);
    else
      samples_.push_back(std::move(s));
  }
  std::vector<Sample> samples_;
};

/// Result of an estimation run; also reconstructible from its serialized variables.
class TrajectoryEstimate {
 public:
  std::string backend;
  sim::EstimatorConfig config;
  std::optional<SplineTrajectory> spline;  // spline backend
  std::vector<double> times;               // support / pose times (gp, li)
  Values states;                           // gp: product states, li: poses
  std::vector<Eigen::MatrixXd> segment_covariance;  // gp: joint covariance of (i, i+1)
  SolveReport report;

  double t_min() const { return spline ? spline->t_min() : times.front(); }
  double t_max() const { return spline ? spline->t_max() : times.back(); }
  bool has_covariance() const { return !segment_covariance.empty(); }

  GpPriorModel gp_prior() const {
    return GpPriorModel(config.gp_prior == "wnoa" ? GpPriorKind::kWnoa : GpPriorKind::kWnoj,
                        config.qc.asDiagonal().toDenseMatrix());
  }

  /// Builds the cached query structures; call after filling the fields.
  void finalize() {
    if (backend == "gp") {
      std::vector<SupportState> s;
      for (std::size_t i = 0; i < states.size(); ++i) s.push_back(to_support_state(states[i], times[i]));
      gp_.emplace(GroupDescriptor::se2(), gp_prior(), std::move(s));
    }
  }

  /// Pose (and for gp the world-frame position covariance) at t. Spline domain is
  /// half-open; pose-sequence domains include the final time.
  sim::EstimateSample query(double t) const {
    sim::EstimateSample out;
    out.t = t;
    if (backend == "spline") {
      out.pose = eval_lie(*spline, t, 0).value.data();
      return out;
    }
    if (!(t >= times.front() && t <= times.back())) throw OutOfDomain("estimate", t, times.front(), times.back());
    if (backend == "li") {
      std::size_t i = bracket(t);
      const double alpha = (t - times[i]) / (times[i + 1] - times[i]);
      out.pose = alpha == 0.0 ? states[i].data() : glerp(states[i], states[i + 1], alpha).data();
      if (t == times.back()) out.pose = states.back().data();
      return out;
    }
    SupportState s = interpolate_mean(*gp_, t);
    out.pose = s.element.data();
    if (has_covariance()) {
      std::size_t i = gp_->bracket(t);
      Eigen::MatrixXd P = interpolate_covariance(*gp_, t, segment_covariance[i]);
      const Eigen::Matrix3d pose_cov = P.topLeftCorner<3, 3>();
      const double c = std::cos(out.pose[2]), sn = std::sin(out.pose[2]);
      Eigen::Matrix2d R;
      R << c, -sn, sn, c;
      out.position_cov = R * pose_cov.topLeftCorner<2, 2>() * R.transpose();
      out.heading_var = pose_cov(2, 2);
    }
    return out;
  }

  std::size_t bracket(double t) const {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    std::size_t i = static_cast<std::size_t>(it - times.begin());
    return std::min(i == 0 ? 0 : i - 1, times.size() - 2);
  }

 private:
  std::optional<GpTrajectory> gp_;
};

namespace detail {

// Support / pose times d * j / N for j = 0..N with N = ceil(duration * hz).
inline std::vector<double> state_times(double duration, double hz) {
  const int n = std::max(1, static_cast<int>(std::ceil(duration * hz - 1e-9)));
  std::vector<double> t(static_cast<std::size_t>(n + 1));
  for (int j = 0; j <= n; ++j) t[static_cast<std::size_t>(j)] = duration * j / n;
  t.back() = duration;
  return t;
}

inline Eigen::Vector2d landmark_of(const EstimationInput& in, int id) {
  auto it = in.landmarks.find(id);
  if (it == in.landmarks.end()) throw InvalidArgument("measurement references unknown landmark " + std::to_string(id));
  return it->second;
}

}  // namespace detail

/// Builds the factor graph for the configured backend, solves it and (gp) recovers the
/// support-state covariance.
inline TrajectoryEstimate estimate_trajectory(const EstimationInput& in, const sim::EstimatorConfig& cfg,
                                              const SolverOptions& solver = {}) {
  if (!(in.duration > 0.0)) throw InvalidArgument("estimate_trajectory: duration must be positive");
  const GroupDescriptor se2 = GroupDescriptor::se2();
  const double s_gyro = std::max(in.noise.gyro, kSigmaFloor), s_acc = std::max(in.noise.accel, kSigmaFloor);
  const double s_range = std::max(in.noise.range, kSigmaFloor), s_bear = std::max(in.noise.bearing, kSigmaFloor);
  DeadReckoning dr(in);

  TrajectoryEstimate out;
  out.backend = cfg.backend;
  out.config = cfg;
  Problem problem;
  std::optional<GpPriorModel> prior;

  // Per-backend kinematic source at a stamp.
  std::function<std::shared_ptr<const KinematicSource>(double)> source_at;
  if (cfg.backend == "spline") {
    const int k = cfg.spline_order;
    const sim::KnotGrid grid = sim::centered_grid(in.duration, cfg.state_hz);
    std::vector<ManifoldElement> pts;
    for (int j = 0; j < grid.control_points(k); ++j) {
      // Control point j is centred near t_start + (j - (k - 2) / 2) dt.
      pts.push_back(dr.at(grid.t_start + (j - 0.5 * (k - 2)) * grid.dt).pose);
    }
    out.spline.emplace(SplineTrajectory::uniform(se2, k, grid.t_start, grid.dt, pts));
    for (const auto& p : pts) problem.add_variable(p);
    const SplineTrajectory& layout = *out.spline;
    source_at = [&layout](double t) { return std::make_shared<SplineSource>(layout, 0, t); };
  } else {
    out.times = detail::state_times(in.duration, cfg.state_hz);
    if (cfg.backend == "gp") {
      prior.emplace(out.gp_prior());
      for (double t : out.times) {
        auto s = dr.at(t);
        SupportState st{t, s.pose, {TangentVector(se2, s.velocity)}};
        if (prior->blocks() == 3) st.derivatives.emplace_back(se2, s.acceleration);
        problem.add_variable(to_variable(st));
      }
    } else if (cfg.backend == "li") {
      for (double t : out.times) problem.add_variable(dr.at(t).pose);
    } else {
      throw ConfigError("backend", "unknown backend '" + cfg.backend + "'");
    }
    const auto& times = out.times;
    const std::string backend = cfg.backend;
    const GpPriorModel* pr = prior ? &*prior : nullptr;
    source_at = [&times, backend, pr](double t) -> std::shared_ptr<const KinematicSource> {
      if (!(t >= times.front() && t <= times.back())) throw OutOfDomain("measurement", t, times.front(), times.back());
      auto it = std::upper_bound(times.begin(), times.end(), t);
      std::size_t i = static_cast<std::size_t>(it - times.begin()) - 1;
      if (backend == "gp") {
        if (t == times[i]) return std::make_shared<GpSource>(*pr, i, t);
        return std::make_shared<GpSource>(*pr, i, times[i], i + 1, times[i + 1], t);
      }
      if (i + 1 == times.size()) --i;
      return std::make_shared<LinearSource>(i, times[i], i + 1, times[i + 1], t);
    };
  }

  // Initial state prior at t = 0.
  {
    auto src = source_at(0.0);
    const int nd = std::min(src->max_derivative(), cfg.backend == "gp" ? 2 : 1);
    std::vector<Eigen::VectorXd> mean_d;
    Eigen::VectorXd sig(3 * (1 + nd));
    sig.head<3>() = in.initial_pose_sigma;
    if (nd >= 1) {
      mean_d.push_back(in.initial_velocity);
      sig.segment<3>(3) = in.initial_velocity_sigma;
    }
    if (nd >= 2) {
      mean_d.push_back(in.initial_acceleration);
      sig.segment<3>(6) = in.initial_acceleration_sigma;
    }
    problem.add_factor(std::make_shared<InitialPriorFactor>(src, in.initial_pose, mean_d, NoiseModel::diagonal(sig)));
  }
  if (prior)
    for (std::size_t i = 0; i + 1 < out.times.size(); ++i)
      problem.add_factor(std::make_shared<MotionPriorFactor>(*prior, i, out.times[i], i + 1, out.times[i + 1]));

  const bool accel_supported = cfg.backend != "li";
  // Measurements at one stamp share a source so its evaluation is reused.
  std::shared_ptr<const KinematicSource> shared;
  auto source_for = [&](double t) {
    if (!shared || shared->stamp() != t) shared = source_at(t);
    return shared;
  };
  for (const auto& m : in.measurements) {
    switch (m.type) {
      case sim::MeasurementType::kGyro:
        problem.add_factor(std::make_shared<GyroFactor>(source_for(m.t), m.value[0], s_gyro));
        break;
      case sim::MeasurementType::kAccel:
        if (accel_supported) problem.add_factor(std::make_shared<AccelFactor>(source_for(m.t), m.value, s_acc));
        break;
      case sim::MeasurementType::kRangeBearing:
        problem.add_factor(std::make_shared<RangeBearingFactor>(source_for(m.t), detail::landmark_of(in, m.landmark_id),
                                                                m.value, s_range, s_bear));
        break;
    }
  }

  out.report = optimize(problem, solver);
  if (out.spline) {
    for (std::size_t j = 0; j < problem.size(); ++j) out.spline->set_control_point(j, problem.values()[j]);
  } else {
    out.states = problem.values();
  }
  if (prior) {
    CovarianceRecovery rec(problem, solver.threads);
    for (std::size_t i = 0; i + 1 < out.times.size(); ++i) out.segment_covariance.push_back(rec.joint({i, i + 1}));
  }
  out.finalize();
  return out;
}

/// Estimator input from a simulated scenario: the initial state is the truth at t = 0.
inline EstimationInput input_from_scenario(const sim::GroundTruth& truth, const sim::ScenarioConfig& cfg,
                                           std::vector<sim::Measurement> measurements) {
  EstimationInput in;
  in.duration = cfg.duration;
  in.measurements = std::move(measurements);
  for (const auto& l : truth.landmarks) in.landmarks[l.id] = l.position;
  in.noise = {cfg.sigma_gyro, cfg.sigma_accel, cfg.sigma_range, cfg.sigma_bearing};
  auto s0 = truth.at(0.0);
  in.initial_pose = s0.pose;
  in.initial_velocity = s0.velocity;
  in.initial_acceleration = s0.acceleration;
  return in;
}

}  // namespace ctraj
