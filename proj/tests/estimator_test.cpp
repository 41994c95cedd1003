#include "ctraj/estimator.hpp"

#include <gtest/gtest.h>

namespace ctraj {
namespace {

struct Run {
  sim::GroundTruth truth;
  TrajectoryEstimate estimate;
  sim::Metrics metrics;
};

sim::ScenarioConfig short_config(const std::string& backend, std::uint64_t seed = 4) {
  sim::ScenarioConfig c;
  c.seed = seed;
  c.duration = 20.0;
  c.estimator.backend = backend;
  return c;
}

void zero_noise(sim::ScenarioConfig& c) { c.sigma_gyro = c.sigma_accel = c.sigma_range = c.sigma_bearing = 0.0; }

Run run(const sim::ScenarioConfig& c, const SolverOptions& opt = {}) {
  auto g = sim::generate_scenario(c);
  auto e = estimate_trajectory(input_from_scenario(g, c, sim::sample_measurements(g, c)), c.estimator, opt);
  auto m = sim::evaluate([&](double t) { return e.query(t); }, e.t_min(), e.t_max(), g, 100.0);
  return {std::move(g), std::move(e), m};
}

TEST(Estimator, EveryBackendTracksTheTruth) {
  for (const char* b : {"li", "spline", "gp"}) {
    auto r = run(short_config(b));
    EXPECT_LE(r.estimate.report.iterations, 50) << b;
    EXPECT_LT(r.metrics.position_rmse, 0.15) << b;
    EXPECT_LT(r.metrics.heading_rmse, 0.02) << b;
    EXPECT_EQ(r.metrics.mean_nees.has_value(), std::string(b) == "gp") << b;
  }
}

TEST(Estimator, LinearInterpolationQueriesAreGlerpOfPoses) {
  auto r = run(short_config("li"));
  const auto& e = r.estimate;
  ASSERT_EQ(e.times.size(), 41u);
  EXPECT_EQ(e.times.front(), 0.0);
  EXPECT_EQ(e.times.back(), 20.0);
  for (std::size_t i = 0; i + 1 < e.times.size(); i += 7) {
    for (double a : {0.0, 0.3, 0.9}) {
      const double t = e.times[i] + a * (e.times[i + 1] - e.times[i]);
      Eigen::Vector3d expect = glerp(e.states[i], e.states[i + 1], a).data();
      EXPECT_LT((e.query(t).pose - expect).norm(), 1e-12) << t;
    }
  }
  EXPECT_EQ(e.query(20.0).pose, e.states.back().data());
  EXPECT_THROW(e.query(20.01), OutOfDomain);
}

TEST(Estimator, GpQueryAtSupportTimeReturnsTheState) {
  auto r = run(short_config("gp"));
  const auto& e = r.estimate;
  ASSERT_EQ(e.segment_covariance.size() + 1, e.times.size());
  for (std::size_t i : {std::size_t{0}, std::size_t{13}, e.times.size() - 1}) {
    auto q = e.query(e.times[i]);
    const ManifoldElement pose = to_support_state(e.states[i], e.times[i]).element;
    EXPECT_LT((q.pose - pose.data()).norm(), 1e-12) << i;
    ASSERT_TRUE(q.position_cov.has_value());
    const Eigen::MatrixXd& joint = e.segment_covariance[std::min(i, e.segment_covariance.size() - 1)];
    const Eigen::Matrix3d P = i + 1 == e.times.size() ? joint.block<3, 3>(9, 9) : joint.block<3, 3>(0, 0);
    EXPECT_NEAR(*q.heading_var, P(2, 2), 1e-12 * P(2, 2));
    EXPECT_NEAR(q.position_cov->trace(), (P.topLeftCorner<2, 2>().trace()), 1e-9 * P.trace());
  }
}

TEST(Estimator, GpWhiteNoiseOnAccelerationRejectsAccelerometer) {
  auto c = short_config("gp");
  c.duration = 5.0;
  c.estimator.gp_prior = "wnoa";
  auto g = sim::generate_scenario(c);
  auto in = input_from_scenario(g, c, sim::sample_measurements(g, c));
  EXPECT_THROW(estimate_trajectory(in, c.estimator), Unsupported);
  std::erase_if(in.measurements, [](const auto& m) { return m.type == sim::MeasurementType::kAccel; });
  auto e = estimate_trajectory(in, c.estimator);
  EXPECT_EQ(e.gp_prior().blocks(), 2);
}

TEST(Estimator, ZeroNoiseSplineWithTruthExpressivenessIsExact) {
  auto c = short_config("spline");
  zero_noise(c);
  c.estimator.spline_order = c.truth_spline_order;
  c.estimator.state_hz = c.truth_knot_hz;
  auto r = run(c);
  EXPECT_LT(r.estimate.report.final_cost, 1e-8);
  EXPECT_LT(r.metrics.position_rmse, 1e-6);
  EXPECT_LT(r.metrics.heading_rmse, 1e-6);
}

TEST(Estimator, ZeroNoiseSplineErrorShrinksWithKnotRate) {
  double previous = std::numeric_limits<double>::infinity();
  for (double hz : {1.0, 2.0, 4.0}) {
    auto c = short_config("spline");
    zero_noise(c);
    c.estimator.state_hz = hz;
    auto r = run(c);
    EXPECT_LT(r.metrics.position_rmse, previous) << hz;
    previous = r.metrics.position_rmse;
  }
  EXPECT_LT(previous, 1e-4);
}

TEST(Estimator, ThreadCountDoesNotChangeTheResult) {
  for (const char* b : {"spline", "gp"}) {
    auto c = short_config(b, 8);
    c.duration = 8.0;
    SolverOptions one, four;
    four.threads = 4;
    auto a = run(c, one), z = run(c, four);
    EXPECT_EQ(a.estimate.report.final_cost, z.estimate.report.final_cost) << b;
    for (double t = 0.0; t <= 8.0; t += 0.37) {
      auto qa = a.estimate.query(t), qz = z.estimate.query(t);
      EXPECT_EQ(qa.pose, qz.pose) << b << " " << t;
      if (qa.position_cov) EXPECT_EQ(*qa.position_cov, *qz.position_cov) << t;
    }
  }
}

TEST(Estimator, RejectsUnknownLandmarkAndBackend) {
  auto c = short_config("spline");
  c.duration = 5.0;
  auto g = sim::generate_scenario(c);
  auto in = input_from_scenario(g, c, sim::sample_measurements(g, c));
  auto bad = c.estimator;
  bad.backend = "ekf";
  EXPECT_THROW(estimate_trajectory(in, bad), ConfigError);
  auto rb = std::find_if(in.measurements.begin(), in.measurements.end(),
                         [](const auto& m) { return m.type == sim::MeasurementType::kRangeBearing; });
  ASSERT_NE(rb, in.measurements.end());
  in.landmarks.erase(rb->landmark_id);
  EXPECT_THROW(estimate_trajectory(in, c.estimator), InvalidArgument);
}

}  // namespace
}  // namespace ctraj
