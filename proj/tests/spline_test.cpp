#include "ctraj/spline.hpp"

#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "test_util.hpp"

namespace ctraj {
namespace {

using test::numeric_jacobian;
using test::random_element;
using test::relative_error;
using test::uniform_vector;

const GroupDescriptor kSE2 = GroupDescriptor::se2();

std::vector<double> random_knots(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> gap(0.3, 1.7);
  std::vector<double> t;
  if (n > 0) t.push_back(0.0);
  while (t.size() < n) t.push_back(t.back() + gap(rng));
  return t;
}

SplineTrajectory random_spline(std::mt19937_64& rng, const GroupDescriptor& desc, int k, std::size_t C,
                               bool uniform, double scale = 1.0) {
  std::vector<ManifoldElement> pts;
  for (std::size_t j = 0; j < C; ++j) pts.push_back(random_element(rng, desc, scale));
  if (uniform) return SplineTrajectory::uniform(desc, k, 0.0, 0.5, pts);
  return {desc, k, KnotVector(random_knots(rng, required_knot_count(C, k))), pts};
}

TEST(UniformBlendingMatrix, GoldenValues) {
  EXPECT_EQ(uniform_blending_matrix(1).entries, Eigen::MatrixXd::Ones(1, 1));
  Eigen::Matrix2d lerp;
  lerp << 1, -1, 0, 1;
  EXPECT_LT((uniform_blending_matrix(2).entries - lerp).norm(), 1e-15);
  Eigen::Matrix4d cubic;
  cubic << 1, -3, 3, -1,  //
      4, 0, -6, 3,        //
      1, 3, 3, -3,        //
      0, 0, 0, 1;
  cubic /= 6.0;
  EXPECT_LT((uniform_blending_matrix(4).entries - cubic).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(uniform_blending_matrix(0), InvalidArgument);
}

TEST(BlendingMatrix, PartitionOfUnity) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int k = 1; k <= 6; ++k) {
    const BlendingMatrix& M = uniform_blending_matrix(k);
    std::vector<double> window = random_knots(rng, static_cast<std::size_t>(2 * (k - 1)));
    BlendingMatrix N = nonuniform_blending_matrix(k, window);
    for (int n = 0; n < 1000; ++n) {
      double u = U(rng);
      EXPECT_LT(std::abs(M.weights(u).sum() - 1.0), 1e-12);
      EXPECT_LT(std::abs(N.weights(u).sum() - 1.0), 1e-12);
    }
  }
}

TEST(NonuniformBlendingMatrix, LinearAndUniformCases) {
  Eigen::Matrix2d lerp;
  lerp << 1, -1, 0, 1;
  std::vector<double> w2{0.3, 2.0};
  EXPECT_LT((nonuniform_blending_matrix(2, w2).entries - lerp).norm(), 1e-15);
  for (int k = 3; k <= 6; ++k) {
    std::vector<double> w;
    for (int n = 0; n < 2 * (k - 1); ++n) w.push_back(5.0 + 1.0 * n);
    EXPECT_LT((nonuniform_blending_matrix(k, w).entries - uniform_blending_matrix(k).entries)
                  .cwiseAbs()
                  .maxCoeff(),
              1e-12)
        << "k=" << k;
  }
  std::vector<double> bad{0, 1, 1, 2, 3, 4};
  EXPECT_THROW(nonuniform_blending_matrix(4, bad), InvalidArgument);
  std::vector<double> short_window{0, 1, 2};
  EXPECT_THROW(nonuniform_blending_matrix(4, short_window), InvalidArgument);
}

TEST(NonuniformBlendingMatrix, MatchesDeBoorOracle) {
  // Cubic on the window (0, 1, 2.5, 3, 4.5, 6): the single segment [2.5, 3).
  std::mt19937_64 rng(43);
  const GroupDescriptor R2 = GroupDescriptor::vector_space(2);
  std::vector<double> knots{0, 1, 2.5, 3, 4.5, 6};
  std::vector<ManifoldElement> pts;
  std::vector<Eigen::VectorXd> raw;
  for (int j = 0; j < 4; ++j) {
    raw.push_back(uniform_vector(rng, 2, -3, 3));
    pts.emplace_back(R2, raw.back());
  }
  SplineTrajectory s(R2, 4, KnotVector(knots), pts);
  EXPECT_FALSE(s.is_uniform());
  for (int n = 0; n < 100; ++n) {
    double t = 2.5 + 0.5 * n / 100.0;
    EXPECT_LT((eval_vector(s, t) - oracle::de_boor(knots, raw, 4, t)).norm(), 1e-10);
  }
  // Longer random non-uniform splines of all orders.
  for (int k = 2; k <= 6; ++k) {
    std::size_t C = 12;
    std::vector<double> kn = random_knots(rng, required_knot_count(C, k));
    std::vector<ManifoldElement> cp;
    std::vector<Eigen::VectorXd> cr;
    for (std::size_t j = 0; j < C; ++j) {
      cr.push_back(uniform_vector(rng, 2, -3, 3));
      cp.emplace_back(R2, cr.back());
    }
    SplineTrajectory sp(R2, k, KnotVector(kn), cp);
    std::uniform_real_distribution<double> T(sp.t_min(), sp.t_max());
    for (int n = 0; n < 100; ++n) {
      double t = T(rng);
      EXPECT_LT((eval_vector(sp, t) - oracle::de_boor(kn, cr, k, t)).norm(), 1e-10) << "k=" << k;
    }
  }
}

TEST(CumulativeMatrix, Examples) {
  EXPECT_EQ(cumulative_matrix(uniform_blending_matrix(1)).entries, Eigen::MatrixXd::Ones(1, 1));
  EXPECT_TRUE(cumulative_matrix(uniform_blending_matrix(2)).entries.isIdentity(1e-15));
  Eigen::MatrixXd c4 = cumulative_matrix(uniform_blending_matrix(4)).entries;
  EXPECT_LT((c4.row(0) - Eigen::RowVector4d(1, 0, 0, 0)).norm(), 1e-15);
  const Eigen::MatrixXd& m4 = uniform_blending_matrix(4).entries;
  for (int j = 0; j < 4; ++j)
    for (int n = 0; n < 4; ++n) EXPECT_NEAR(c4(j, n), m4.block(j, n, 4 - j, 1).sum(), 1e-15);
}

TEST(SegmentForTime, Examples) {
  const GroupDescriptor R1 = GroupDescriptor::vector_space(1);
  std::vector<ManifoldElement> pts(6, ManifoldElement::identity(R1));
  SplineTrajectory s(R1, 4, KnotVector::uniform(0.0, 1.0, 8), pts);
  auto seg = s.segment_for_time(2.25);
  EXPECT_EQ(seg.index, 0);
  EXPECT_DOUBLE_EQ(seg.u, 0.25);
  EXPECT_DOUBLE_EQ(s.segment_for_time(4.0).u, 0.0);
  EXPECT_EQ(s.segment_for_time(4.0).index, 2);
  EXPECT_DOUBLE_EQ(s.t_min(), 2.0);
  EXPECT_DOUBLE_EQ(s.t_max(), 5.0);
  EXPECT_THROW(s.segment_for_time(5.0), OutOfDomain);
  EXPECT_THROW(s.segment_for_time(1.999), OutOfDomain);
  try {
    s.segment_for_time(7.0);
  } catch (const OutOfDomain& e) {
    EXPECT_DOUBLE_EQ(e.lower(), 2.0);
    EXPECT_DOUBLE_EQ(e.upper(), 5.0);
  }
}

TEST(SplineTrajectory, KnotCountValidated) {
  const GroupDescriptor R1 = GroupDescriptor::vector_space(1);
  std::vector<ManifoldElement> pts(6, ManifoldElement::identity(R1));
  EXPECT_THROW(SplineTrajectory(R1, 4, KnotVector::uniform(0.0, 1.0, 7), pts), InvalidArgument);
  EXPECT_THROW(SplineTrajectory(R1, 7, KnotVector::uniform(0.0, 1.0, 11), pts), InvalidArgument);
  EXPECT_THROW(KnotVector({0.0, 1.0, 1.0}), InvalidArgument);
}

TEST(EvalVector, Examples) {
  const GroupDescriptor R2 = GroupDescriptor::vector_space(2);
  Eigen::Vector2d c(1.5, -2.0);
  std::vector<ManifoldElement> same(7, ManifoldElement(R2, c));
  SplineTrajectory s(R2, 4, KnotVector::uniform(0.0, 0.7, 9), same);
  for (double t = s.t_min(); t < s.t_max(); t += 0.013) {
    EXPECT_LT((eval_vector(s, t) - c).norm(), 1e-14);
    EXPECT_LT(eval_vector(s, t, 1).norm(), 1e-12);
    EXPECT_LT(eval_vector(s, t, 2).norm(), 1e-11);
  }
  EXPECT_THROW(eval_vector(s, s.t_min(), 3), Unsupported);

  // Order 2 reproduces LERP of the bracketing control points.
  std::mt19937_64 rng(47);
  std::vector<ManifoldElement> pts;
  for (int j = 0; j < 5; ++j) pts.emplace_back(R2, uniform_vector(rng, 2, -1, 1));
  SplineTrajectory lin(R2, 2, KnotVector({0.0, 1.0, 3.0, 3.5, 5.0}), pts);
  for (double t = 0.0; t < 5.0; t += 0.1) {
    auto seg = lin.segment_for_time(t);
    Eigen::VectorXd expect = glerp(pts[seg.index], pts[seg.index + 1], seg.u).data();
    EXPECT_LT((eval_vector(lin, t) - expect).norm(), 1e-14);
  }

  // Cubic with control points (0, 0, 0, 6): first segment equals u^3.
  const GroupDescriptor R1 = GroupDescriptor::vector_space(1);
  std::vector<ManifoldElement> cubic_pts{ManifoldElement(R1, Eigen::VectorXd::Constant(1, 0.0)),
                                         ManifoldElement(R1, Eigen::VectorXd::Constant(1, 0.0)),
                                         ManifoldElement(R1, Eigen::VectorXd::Constant(1, 0.0)),
                                         ManifoldElement(R1, Eigen::VectorXd::Constant(1, 6.0))};
  SplineTrajectory cu(R1, 4, KnotVector::uniform(0.0, 1.0, 6), cubic_pts);
  for (double u = 0.0; u < 1.0; u += 0.05) EXPECT_NEAR(eval_vector(cu, 2.0 + u)[0], u * u * u, 1e-14);

  SplineTrajectory lie(kSE2, 4, KnotVector::uniform(0.0, 1.0, 6),
                       std::vector<ManifoldElement>(4, ManifoldElement::identity(kSE2)));
  EXPECT_THROW(eval_vector(lie, 2.5), InvalidArgument);
}

TEST(EvalVector, DerivativesMatchFiniteDifferences) {
  std::mt19937_64 rng(53);
  const GroupDescriptor R3 = GroupDescriptor::vector_space(3);
  const double h = 1e-5;
  for (int k = 3; k <= 6; ++k) {
    for (bool uniform : {true, false}) {
      SplineTrajectory s = random_spline(rng, R3, k, 10, uniform);
      std::uniform_real_distribution<double> T(s.t_min() + 2 * h, s.t_max() - 2 * h);
      for (int n = 0; n < 50; ++n) {
        double t = T(rng);
        Eigen::VectorXd fd1 = (eval_vector(s, t + h) - eval_vector(s, t - h)) / (2 * h);
        Eigen::VectorXd fd2 = (eval_vector(s, t + h, 1) - eval_vector(s, t - h, 1)) / (2 * h);
        EXPECT_LT(relative_error(eval_vector(s, t, 1), fd1), 1e-5);
        EXPECT_LT(relative_error(eval_vector(s, t, 2), fd2), 1e-5);
      }
    }
  }
}

TEST(Spline, ContinuityAcrossKnots) {
  std::mt19937_64 rng(59);
  const GroupDescriptor R2 = GroupDescriptor::vector_space(2);
  const double eps = 1e-7;
  for (int k = 2; k <= 6; ++k) {
    for (bool uniform : {true, false}) {
      SplineTrajectory s = random_spline(rng, R2, k, 12, uniform);
      for (int n = k - 1; n < 11; ++n) {
        double t = s.knot(n);
        for (int d = 0; d <= std::min(k - 2, 2); ++d) {
          Eigen::VectorXd l = eval_vector(s, t - eps, d), r = eval_vector(s, t + eps, d);
          double scale = std::max(1.0, l.cwiseAbs().maxCoeff());
          EXPECT_LT((l - r).cwiseAbs().maxCoeff(), 1e-4 * scale) << "k=" << k << " d=" << d;
        }
      }
    }
  }
}

TEST(Spline, LocalSupportIsExact) {
  std::mt19937_64 rng(61);
  SplineTrajectory s = random_spline(rng, kSE2, 4, 10, false);
  const int j = 5;
  SplineTrajectory moved = s;
  moved.set_control_point(j, random_element(rng, kSE2));
  std::uniform_real_distribution<double> T(s.t_min(), s.t_max());
  for (int n = 0; n < 500; ++n) {
    double t = T(rng);
    auto seg = s.segment_for_time(t);
    bool uses_j = seg.index <= j && j < seg.index + 4;
    auto a = eval_lie(s, t, 2), b = eval_lie(moved, t, 2);
    if (!uses_j) {
      EXPECT_EQ(a.value.data(), b.value.data());
      EXPECT_EQ(a.velocity->data(), b.velocity->data());
      EXPECT_EQ(a.acceleration->data(), b.acceleration->data());
    } else {
      EXPECT_NE(a.value.data(), b.value.data());
    }
  }
}

TEST(EvalLie, ConstantControlPoints) {
  std::mt19937_64 rng(67);
  auto x = random_element(rng, kSE2);
  SplineTrajectory s = SplineTrajectory::uniform(kSE2, 5, 0.0, 0.2, std::vector<ManifoldElement>(8, x));
  for (double t = s.t_min(); t < s.t_max(); t += 0.01) {
    auto e = eval_lie(s, t, 2);
    EXPECT_LT((e.value.data() - x.data()).norm(), 1e-14);
    EXPECT_LT(e.velocity->data().norm(), 1e-14);
    EXPECT_LT(e.acceleration->data().norm(), 1e-14);
  }
}

TEST(EvalLie, CumulativeEqualsNonCumulativeOnVectorSpace) {
  std::mt19937_64 rng(71);
  const GroupDescriptor R3 = GroupDescriptor::vector_space(3);
  for (int k = 1; k <= 6; ++k) {
    for (bool uniform : {true, false}) {
      SplineTrajectory s = random_spline(rng, R3, k, 9, uniform);
      double lo = std::isfinite(s.t_min()) ? s.t_min() : -1.0;
      std::uniform_real_distribution<double> T(lo, s.t_max());
      for (int n = 0; n < 100; ++n) {
        double t = T(rng);
        auto e = eval_lie(s, t, std::min(2, std::max(0, k - 1)));
        EXPECT_LT((e.value.data() - eval_vector(s, t)).cwiseAbs().maxCoeff(), 1e-12);
        if (k >= 2) EXPECT_LT((e.velocity->data() - eval_vector(s, t, 1)).cwiseAbs().maxCoeff(), 1e-10);
        if (k >= 3)
          EXPECT_LT((e.acceleration->data() - eval_vector(s, t, 2)).cwiseAbs().maxCoeff(), 1e-9);
      }
    }
  }
}

TEST(EvalLie, BodyDerivativesMatchFiniteDifferences) {
  std::mt19937_64 rng(73);
  const double h = 1e-5;
  for (int k : {4, 5, 6}) {
    for (bool uniform : {true, false}) {
      SplineTrajectory s = random_spline(rng, kSE2, k, 10, uniform, 1.0);
      std::uniform_real_distribution<double> T(s.t_min() + 2 * h, s.t_max() - 2 * h);
      for (int n = 0; n < 50; ++n) {
        double t = T(rng);
        auto e = eval_lie(s, t, 2);
        Eigen::VectorXd fd_vel =
            boxminus(eval_lie(s, t + h).value, eval_lie(s, t - h).value).data() / (2 * h);
        Eigen::VectorXd fd_acc =
            (eval_lie(s, t + h, 1).velocity->data() - eval_lie(s, t - h, 1).velocity->data()) / (2 * h);
        EXPECT_LT(relative_error(e.velocity->data(), fd_vel), 1e-5);
        EXPECT_LT(relative_error(e.acceleration->data(), fd_acc), 1e-5);
      }
    }
  }
}

TEST(ControlPointJacobians, LinearWeights) {
  const GroupDescriptor R2 = GroupDescriptor::vector_space(2);
  std::vector<ManifoldElement> pts{ManifoldElement(R2, Eigen::Vector2d(0, 1)),
                                   ManifoldElement(R2, Eigen::Vector2d(3, -1))};
  SplineTrajectory s(R2, 2, KnotVector({0.0, 1.0}), pts);
  auto J = control_point_jacobians(s, 0.25, 0);
  ASSERT_EQ(J.size(), 2u);
  EXPECT_LT((J[0] - 0.75 * Eigen::Matrix2d::Identity()).norm(), 1e-15);
  EXPECT_LT((J[1] - 0.25 * Eigen::Matrix2d::Identity()).norm(), 1e-15);
}

TEST(ControlPointJacobians, ConstantSplineSumsToIdentity) {
  std::mt19937_64 rng(79);
  auto x = random_element(rng, kSE2);
  for (int k = 2; k <= 6; ++k) {
    SplineTrajectory s = SplineTrajectory::uniform(kSE2, k, 0.0, 0.3, std::vector<ManifoldElement>(k + 2, x));
    for (double t = s.t_min(); t < s.t_max(); t += 0.037) {
      auto J = control_point_jacobians(s, t, 0);
      Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(3, 3);
      for (const auto& m : J) sum += m;
      EXPECT_TRUE(sum.isIdentity(1e-12)) << "k=" << k;
    }
  }
}

TEST(ControlPointJacobians, MatchFiniteDifferences) {
  std::mt19937_64 rng(83);
  for (int k : {2, 3, 4, 6}) {
    for (bool uniform : {true, false}) {
      SplineTrajectory s = random_spline(rng, kSE2, k, k + 3, uniform, 1.0);
      std::uniform_real_distribution<double> T(s.t_min(), s.t_max());
      for (int n = 0; n < 25; ++n) {
        const double t = T(rng);
        const auto seg = s.segment_for_time(t);
        const auto base = eval_lie(s, t, 2);
        for (int deriv = 0; deriv <= 2; ++deriv) {
          auto J = control_point_jacobians(s, t, deriv);
          for (int j = 0; j < k; ++j) {
            const std::size_t idx = static_cast<std::size_t>(seg.index + j);
            auto f = [&](const Eigen::VectorXd& delta) -> Eigen::VectorXd {
              SplineTrajectory p = s;
              p.set_control_point(idx, boxplus(s.control_points()[idx], TangentVector(kSE2, delta)));
              auto e = eval_lie(p, t, 2);
              if (deriv == 0) return boxminus(e.value, base.value).data();
              if (deriv == 1) return e.velocity->data();
              return e.acceleration->data();
            };
            Eigen::MatrixXd fd = numeric_jacobian(f, Eigen::VectorXd::Zero(3));
            EXPECT_LT(relative_error(J[static_cast<std::size_t>(j)], fd), 1e-6)
                << "k=" << k << " deriv=" << deriv << " j=" << j;
          }
        }
      }
    }
  }
}

}  // namespace
}  // namespace ctraj
