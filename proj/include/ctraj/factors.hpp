#pragma once

// Residual models binding trajectories to measurements.
//
// A measurement factor is a sensor model composed with a KinematicSource: the source
// turns the bound variables into pose, body velocity and body acceleration at the
// stamp (with Jacobians), and the sensor model turns those into a residual. Sources
// exist for uniform/non-uniform splines (k control points), GP support states (one or
// two bracketing states) and linear interpolation between discrete poses.
//
// Residual Jacobians are w.r.t. right perturbations of the bound variables, concatenated
// in binding order. Factors whiten with W = L^T where Sigma^-1 = L L^T.

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ctraj/errors.hpp"
#include "ctraj/gp.hpp"
#include "ctraj/manifold.hpp"
#include "ctraj/spline.hpp"

namespace ctraj {

using VariableId = std::size_t;
using Values = std::vector<ManifoldElement>;

class NoiseModel {
 public:
  NoiseModel() = default;
  explicit NoiseModel(Eigen::MatrixXd covariance) : cov_(std::move(covariance)) {
    if (cov_.rows() != cov_.cols() || cov_.rows() == 0)
      throw InvalidArgument("NoiseModel: covariance must be square and non-empty");
    if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, cov_.cwiseAbs().maxCoeff()))
      throw InvalidArgument("NoiseModel: covariance must be symmetric");
    cov_ = 0.5 * (cov_ + cov_.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(cov_);
    if (llt.info() != Eigen::Success) throw InvalidArgument("NoiseModel: covariance must be positive definite");
    // Sigma = C C^T, so Sigma^-1 = C^-T C^-1 and W = C^-1 is the transpose of the lower
    // Cholesky factor of Sigma^-1.
    Eigen::MatrixXd C = llt.matrixL();
    sqrt_info_ = C.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(cov_.rows(), cov_.cols()));
  }
  static NoiseModel diagonal(const Eigen::VectorXd& sigmas) {
    return NoiseModel(Eigen::MatrixXd(sigmas.array().square().matrix().asDiagonal()));
  }
  static NoiseModel isotropic(int dim, double sigma) {
    return diagonal(Eigen::VectorXd::Constant(dim, sigma));
  }

  int dim() const { return static_cast<int>(cov_.rows()); }
  const Eigen::MatrixXd& covariance() const { return cov_; }
  const Eigen::MatrixXd& sqrt_information() const { return sqrt_info_; }

 private:
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd sqrt_info_;
};

enum class FactorKind { kGyro, kAccel, kRangeBearing, kInitialPrior, kVariablePrior, kMotionPrior, kCustom };

inline const char* to_string(FactorKind k) {
  switch (k) {
    case FactorKind::kGyro: return "gyro";
    case FactorKind::kAccel: return "accel";
    case FactorKind::kRangeBearing: return "range_bearing";
    case FactorKind::kInitialPrior: return "initial_prior";
    case FactorKind::kVariablePrior: return "variable_prior";
    case FactorKind::kMotionPrior: return "motion_prior";
    case FactorKind::kCustom: return "custom";
  }
  return "unknown";
}

class Factor {
 public:
  Factor(FactorKind kind, std::vector<VariableId> keys, NoiseModel noise)
      : kind_(kind), keys_(std::move(keys)), noise_(std::move(noise)) {}
  virtual ~Factor() = default;

  FactorKind kind() const { return kind_; }
  const std::vector<VariableId>& keys() const { return keys_; }
  const NoiseModel& noise() const { return noise_; }
  int dim() const { return noise_.dim(); }
  /// Measurement time, or NaN for factors without one.
  virtual double stamp() const { return std::numeric_limits<double>::quiet_NaN(); }

  /// Unwhitened residual; if `jacobian` is non-null it receives d e / d (bound perturbations).
  virtual Eigen::VectorXd error(const Values& values, Eigen::MatrixXd* jacobian) const = 0;

  /// Whitened residual and Jacobian.
  void linearize(const Values& values, Eigen::VectorXd& e, Eigen::MatrixXd* J) const {
    e = noise_.sqrt_information() * error(values, J);
    if (J) *J = noise_.sqrt_information() * *J;
  }
  double cost(const Values& values) const {
    return (noise_.sqrt_information() * error(values, nullptr)).squaredNorm();
  }

 private:
  FactorKind kind_;
  std::vector<VariableId> keys_;
  NoiseModel noise_;
};

// ---------------------------------------------------------------------------------------
// Sensor models on kinematic quantities. Poses are SE(2) (x, y, theta); velocities and
// accelerations are body-frame twists (rho_x, rho_y, omega) and their time derivatives.

struct ResidualJacobian {
  Eigen::VectorXd error;
  Eigen::MatrixXd d_pose;          // w.r.t. right pose perturbation
  Eigen::MatrixXd d_velocity;
  Eigen::MatrixXd d_acceleration;
};

/// e = omega - z.
inline ResidualJacobian gyro_residual(const Eigen::Vector3d& velocity, double z) {
  ResidualJacobian r;
  r.error = Eigen::VectorXd::Constant(1, velocity[2] - z);
  r.d_velocity = Eigen::RowVector3d(0, 0, 1);
  return r;
}

/// e = R(theta)^T p''_world - z, which in body quantities is rho' + omega * (-rho_y, rho_x) - z.
inline ResidualJacobian accel_residual(const Eigen::Vector3d& velocity, const Eigen::Vector3d& acceleration,
                                       const Eigen::Vector2d& z) {
  const double vx = velocity[0], vy = velocity[1], w = velocity[2];
  ResidualJacobian r;
  r.error = Eigen::Vector2d(acceleration[0] - w * vy - z[0], acceleration[1] + w * vx - z[1]);
  r.d_velocity = Eigen::MatrixXd(2, 3);
  r.d_velocity << 0.0, -w, -vy,  //
      w, 0.0, vx;
  r.d_acceleration = Eigen::MatrixXd::Zero(2, 3);
  r.d_acceleration.leftCols(2).setIdentity();
  return r;
}

/// Predicted (range, bearing) minus z, bearing component wrapped to (-pi, pi].
inline ResidualJacobian range_bearing_residual(const ManifoldElement& pose, const Eigen::Vector2d& landmark,
                                               const Eigen::Vector2d& z) {
  const Eigen::VectorXd& p = pose.data();
  const Eigen::Vector2d d = landmark - p.head<2>();
  const double r2 = d.squaredNorm();
  if (!(r2 > 0.0)) throw DegenerateGeometry("range_bearing_residual: landmark coincides with pose");
  const double range = std::sqrt(r2);
  const double bearing = std::atan2(d[1], d[0]) - p[2];
  ResidualJacobian r;
  r.error = Eigen::Vector2d(range - z[0], wrap_angle(bearing - z[1]));
  // A right perturbation moves the position by R(theta) d_rho in the world frame.
  const double c = std::cos(p[2]), s = std::sin(p[2]);
  Eigen::Matrix2d R;
  R << c, -s, s, c;
  Eigen::RowVector2d dr_dp = -d.transpose() / range;
  Eigen::RowVector2d db_dp(d[1] / r2, -d[0] / r2);
  r.d_pose = Eigen::MatrixXd::Zero(2, 3);
  r.d_pose.block(0, 0, 1, 2) = dr_dp * R;
  r.d_pose.block(1, 0, 1, 2) = db_dp * R;
  r.d_pose(1, 2) = -1.0;
  return r;
}

// ---------------------------------------------------------------------------------------
// Kinematic sources.

struct Kinematics {
  ManifoldElement pose;
  Eigen::VectorXd velocity;
  Eigen::VectorXd acceleration;
  // d / d (bound perturbations), columns concatenated in key order.
  Eigen::MatrixXd d_pose, d_velocity, d_acceleration;
};

class KinematicSource {
 public:
  KinematicSource() : serial_(next_serial()) {}
  KinematicSource(const KinematicSource&) : serial_(next_serial()) {}
  KinematicSource& operator=(const KinematicSource&) { return *this; }
  virtual ~KinematicSource() = default;
  virtual const std::vector<VariableId>& keys() const = 0;
  virtual double stamp() const = 0;
  /// Highest derivative the source can provide (0, 1 or 2).
  virtual int max_derivative() const = 0;

  /// Pose and derivatives up to `deriv` at the stamp. Factors sharing a source (e.g. gyro
  /// and accelerometer samples at one time) reuse the last result computed on this thread
  /// when the bound values are bitwise unchanged; results may carry extra derivatives.
  Kinematics evaluate(const Values& values, int deriv, bool with_jacobians) const {
    if (deriv > max_derivative()) return compute(values, deriv, with_jacobians);
    struct Memo {
      std::uint64_t serial = 0;
      bool jac = false;
      std::vector<double> key;
      Kinematics result;
    };
    thread_local Memo memo;
    thread_local std::vector<double> key;
    key.clear();
    for (VariableId k : keys()) key.insert(key.end(), values[k].data().begin(), values[k].data().end());
    if (memo.serial == serial_ && (memo.jac || !with_jacobians) && memo.key == key) return memo.result;
    memo.result = compute(values, max_derivative(), with_jacobians);
    memo.serial = serial_;
    memo.jac = with_jacobians;
    memo.key.swap(key);
    return memo.result;
  }

 protected:
  virtual Kinematics compute(const Values& values, int deriv, bool with_jacobians) const = 0;

 private:
  static std::uint64_t next_serial() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }
  std::uint64_t serial_;
};

/// k consecutive control points of a spline around a fixed stamp.
class SplineSource : public KinematicSource {
 public:
  SplineSource(const SplineTrajectory& layout, VariableId first_control_point, double stamp)
      : desc_(layout.descriptor()), stamp_(stamp) {
    SplineSegment seg = layout.segment_for_time(stamp);
    u_ = seg.u;
    inv_dt_ = std::isfinite(seg.dt) ? 1.0 / seg.dt : 0.0;
    cumulative_ = cumulative_matrix(layout.blending(seg.index));
    for (int j = 0; j < layout.order(); ++j) keys_.push_back(first_control_point + static_cast<VariableId>(seg.index + j));
    order_ = layout.order();
  }

  const std::vector<VariableId>& keys() const override { return keys_; }
  double stamp() const override { return stamp_; }
  int max_derivative() const override { return std::min(2, order_ - 1); }

  Kinematics compute(const Values& values, int deriv, bool with_jacobians) const override {
    std::vector<const ManifoldElement*> pts;
    pts.reserve(keys_.size());
    for (VariableId k : keys_) pts.push_back(&values[k]);
    SegmentEvaluation e = evaluate_segment(desc_, pts, cumulative_, u_, inv_dt_, deriv, with_jacobians);
    return {std::move(e.value),          std::move(e.velocity),   std::move(e.acceleration),
            std::move(e.d_value),        std::move(e.d_velocity), std::move(e.d_acceleration)};
  }

 private:
  GroupDescriptor desc_;
  double stamp_;
  double u_ = 0.0, inv_dt_ = 0.0;
  int order_ = 0;
  BlendingMatrix cumulative_;
  std::vector<VariableId> keys_;
};

/// Descriptor of a GP support-state variable: product(pose group, R^dof, [R^dof]).
inline GroupDescriptor gp_state_descriptor(const GroupDescriptor& desc, const GpPriorModel& prior) {
  std::vector<GroupDescriptor> parts{desc};
  for (int b = 1; b < prior.blocks(); ++b) parts.push_back(GroupDescriptor::vector_space(desc.dof()));
  return GroupDescriptor::product(std::move(parts));
}

inline ManifoldElement to_variable(const SupportState& s) {
  std::vector<ManifoldElement> parts{s.element};
  for (const auto& d : s.derivatives)
    parts.emplace_back(GroupDescriptor::vector_space(static_cast<int>(d.size())), d.data());
  return make_product(parts);
}

inline SupportState to_support_state(const ManifoldElement& variable, double time) {
  SupportState s;
  s.time = time;
  s.element = variable.part(0);
  const auto n = variable.descriptor().parts().size();
  for (std::size_t p = 1; p < n; ++p) s.derivatives.emplace_back(s.element.descriptor(), variable.part(p).data());
  return s;
}

/// One (stamp at a support time) or two bracketing GP support states.
class GpSource : public KinematicSource {
 public:
  GpSource(GpPriorModel prior, VariableId key, double time)
      : prior_(std::move(prior)), keys_{key}, times_{time}, stamp_(time) {}
  GpSource(GpPriorModel prior, VariableId key_i, double t_i, VariableId key_ip1, double t_ip1, double stamp)
      : prior_(std::move(prior)), keys_{key_i, key_ip1}, times_{t_i, t_ip1}, stamp_(stamp) {
    if (stamp < t_i || stamp > t_ip1) throw OutOfDomain("GpSource", stamp, t_i, t_ip1);
    lp_ = lambda_psi(prior_, t_i, t_ip1, stamp);
  }

  const std::vector<VariableId>& keys() const override { return keys_; }
  double stamp() const override { return stamp_; }
  int max_derivative() const override { return prior_.blocks() - 1; }
  const GpPriorModel& prior() const { return prior_; }

  Kinematics compute(const Values& values, int deriv, bool with_jacobians) const override {
    if (deriv > max_derivative()) throw Unsupported("GP prior does not provide this derivative");
    const int n = prior_.dof(), m = prior_.state_dim();
    SupportState s;
    Eigen::MatrixXd J;
    if (keys_.size() == 1) {
      s = to_support_state(values[keys_[0]], times_[0]);
      if (with_jacobians) J = Eigen::MatrixXd::Identity(m, m);
    } else {
      const SupportState a = to_support_state(values[keys_[0]], times_[0]);
      const SupportState b = to_support_state(values[keys_[1]], times_[1]);
      GpInterpolation g = interpolate_between(prior_, a, b, stamp_, lp_,
                                              local_mapping(values[keys_[0]], values[keys_[1]], a, b, with_jacobians),
                                              with_jacobians);
      s = std::move(g.state);
      if (with_jacobians) {
        J.resize(m, 2 * m);
        J << g.d_first, g.d_second;
      }
    }
    Kinematics k;
    k.pose = std::move(s.element);
    k.velocity = s.derivatives[0].data();
    if (prior_.blocks() == 3) k.acceleration = s.derivatives[1].data();
    if (with_jacobians) {
      k.d_pose = J.topRows(n);
      k.d_velocity = J.middleRows(n, n);
      if (prior_.blocks() == 3) k.d_acceleration = J.middleRows(2 * n, n);
    }
    return k;
  }

 private:
  // Measurements between the same two support states share the local mapping; the last
  // one computed on this thread is reused when both state values match exactly.
  const detail::LocalMapping& local_mapping(const ManifoldElement& xa, const ManifoldElement& xb, const SupportState& a,
                                         const SupportState& b, bool with_jacobians) const {
    struct Cache {
      Eigen::VectorXd a, b;
      double ta = 0.0, tb = 0.0;
      bool jac = false, valid = false;
      detail::LocalMapping mapping;
    };
    thread_local Cache c;
    const bool hit = c.valid && (c.jac || !with_jacobians) && c.ta == a.time && c.tb == b.time &&
                     c.a.size() == xa.data().size() && c.b.size() == xb.data().size() && c.a == xa.data() &&
                     c.b == xb.data();
    if (!hit) {
      c.mapping = ctraj::detail::local_mapping(prior_, a, b, with_jacobians);
      c.a = xa.data();
      c.b = xb.data();
      c.ta = a.time;
      c.tb = b.time;
      c.jac = with_jacobians;
      c.valid = true;
    }
    return c.mapping;
  }

  GpPriorModel prior_;
  std::vector<VariableId> keys_;
  std::vector<double> times_;
  double stamp_;
  LambdaPsi lp_;
};

/// Linear interpolation (GLERP) between two discrete poses: body velocity is the constant
/// rate xi / dt and acceleration is zero.
class LinearSource : public KinematicSource {
 public:
  LinearSource(VariableId key_i, double t_i, VariableId key_ip1, double t_ip1, double stamp)
      : keys_{key_i, key_ip1}, t_i_(t_i), t_ip1_(t_ip1), stamp_(stamp) {
    if (!(t_i < t_ip1)) throw InvalidArgument("LinearSource: times must be increasing");
    if (stamp < t_i || stamp > t_ip1) throw OutOfDomain("LinearSource", stamp, t_i, t_ip1);
  }

  const std::vector<VariableId>& keys() const override { return keys_; }
  double stamp() const override { return stamp_; }
  int max_derivative() const override { return 1; }

  Kinematics compute(const Values& values, int deriv, bool with_jacobians) const override {
    if (deriv > 1) throw Unsupported("linear interpolation has no acceleration");
    const ManifoldElement& a = values[keys_[0]];
    const ManifoldElement& b = values[keys_[1]];
    const GroupDescriptor& d = a.descriptor();
    const int n = d.dof();
    const double dt = t_ip1_ - t_i_, alpha = (stamp_ - t_i_) / dt;
    const TangentVector xi = boxminus(b, a);
    const TangentVector step = alpha * xi;
    Kinematics k;
    k.pose = boxplus(a, step);
    k.velocity = xi.data() / dt;
    if (with_jacobians) {
      const Eigen::MatrixXd jr_inv = right_jacobian_inv(d, xi);
      const Eigen::MatrixXd dxi_a = -jr_inv * adjoint(inverse(exp(d, xi)));
      const Eigen::MatrixXd jr_step = right_jacobian(d, step);
      k.d_pose.resize(n, 2 * n);
      k.d_pose << adjoint(inverse(exp(d, step))) + alpha * jr_step * dxi_a, alpha * jr_step * jr_inv;
      k.d_velocity.resize(n, 2 * n);
      k.d_velocity << dxi_a / dt, jr_inv / dt;
    }
    return k;
  }

 private:
  std::vector<VariableId> keys_;
  double t_i_, t_ip1_, stamp_;
};

// ---------------------------------------------------------------------------------------
// Factors.

namespace detail {
inline void check_source_derivative(const KinematicSource& s, int deriv, const char* what) {
  if (s.max_derivative() < deriv)
    throw Unsupported(std::string(what) + " factor needs a trajectory derivative the backend does not provide");
}
}  // namespace detail

class GyroFactor : public Factor {
 public:
  GyroFactor(std::shared_ptr<const KinematicSource> source, double z, double sigma)
      : Factor(FactorKind::kGyro, source->keys(), NoiseModel::isotropic(1, sigma)), source_(std::move(source)), z_(z) {
    detail::check_source_derivative(*source_, 1, "gyro");
  }
  double stamp() const override { return source_->stamp(); }
  Eigen::VectorXd error(const Values& values, Eigen::MatrixXd* J) const override {
    Kinematics k = source_->evaluate(values, 1, J != nullptr);
    ResidualJacobian r = gyro_residual(k.velocity, z_);
    if (J) *J = r.d_velocity * k.d_velocity;
    return r.error;
  }

 private:
  std::shared_ptr<const KinematicSource> source_;
  double z_;
};

class AccelFactor : public Factor {
 public:
  AccelFactor(std::shared_ptr<const KinematicSource> source, const Eigen::Vector2d& z, double sigma)
      : Factor(FactorKind::kAccel, source->keys(), NoiseModel::isotropic(2, sigma)), source_(std::move(source)), z_(z) {
    detail::check_source_derivative(*source_, 2, "accelerometer");
  }
  double stamp() const override { return source_->stamp(); }
  Eigen::VectorXd error(const Values& values, Eigen::MatrixXd* J) const override {
    Kinematics k = source_->evaluate(values, 2, J != nullptr);
    ResidualJacobian r = accel_residual(k.velocity, k.acceleration, z_);
    if (J) *J = r.d_velocity * k.d_velocity + r.d_acceleration * k.d_acceleration;
    return r.error;
  }

 private:
  std::shared_ptr<const KinematicSource> source_;
  Eigen::Vector2d z_;
};

class RangeBearingFactor : public Factor {
 public:
  RangeBearingFactor(std::shared_ptr<const KinematicSource> source, const Eigen::Vector2d& landmark,
                     const Eigen::Vector2d& z, double sigma_range, double sigma_bearing)
      : Factor(FactorKind::kRangeBearing, source->keys(),
               NoiseModel::diagonal(Eigen::Vector2d(sigma_range, sigma_bearing))),
        source_(std::move(source)),
        landmark_(landmark),
        z_(z) {}
  double stamp() const override { return source_->stamp(); }
  Eigen::VectorXd error(const Values& values, Eigen::MatrixXd* J) const override {
    Kinematics k = source_->evaluate(values, 0, J != nullptr);
    ResidualJacobian r = range_bearing_residual(k.pose, landmark_, z_);
    if (J) *J = r.d_pose * k.d_pose;
    return r.error;
  }

 private:
  std::shared_ptr<const KinematicSource> source_;
  Eigen::Vector2d landmark_;
  Eigen::Vector2d z_;
};

/// Prior on the trajectory state at the source's stamp: (pose (-) mean, v - v_mean, ...)
/// for as many derivatives as `mean_derivatives` holds.
class InitialPriorFactor : public Factor {
 public:
  InitialPriorFactor(std::shared_ptr<const KinematicSource> source, ManifoldElement mean_pose,
                     std::vector<Eigen::VectorXd> mean_derivatives, NoiseModel noise)
      : Factor(FactorKind::kInitialPrior, source->keys(), std::move(noise)),
        source_(std::move(source)),
        mean_(std::move(mean_pose)),
        mean_derivs_(std::move(mean_derivatives)) {
    detail::check_source_derivative(*source_, static_cast<int>(mean_derivs_.size()), "initial prior");
    const int n = mean_.descriptor().dof();
    if (this->dim() != n * static_cast<int>(1 + mean_derivs_.size()))
      throw InvalidArgument("InitialPriorFactor: noise dimension does not match prior");
  }
  double stamp() const override { return source_->stamp(); }
  Eigen::VectorXd error(const Values& values, Eigen::MatrixXd* J) const override {
    const int nd = static_cast<int>(mean_derivs_.size());
    Kinematics k = source_->evaluate(values, nd, J != nullptr);
    const GroupDescriptor& d = mean_.descriptor();
    const int n = d.dof();
    Eigen::VectorXd e(n * (1 + nd));
    const TangentVector dx = boxminus(k.pose, mean_);
    e.head(n) = dx.data();
    if (nd >= 1) e.segment(n, n) = k.velocity - mean_derivs_[0];
    if (nd >= 2) e.segment(2 * n, n) = k.acceleration - mean_derivs_[1];
    if (J) {
      J->resize(e.size(), k.d_pose.cols());
      J->topRows(n) = right_jacobian_inv(d, dx) * k.d_pose;
      if (nd >= 1) J->middleRows(n, n) = k.d_velocity;
      if (nd >= 2) J->middleRows(2 * n, n) = k.d_acceleration;
    }
    return e;
  }

 private:
  std::shared_ptr<const KinematicSource> source_;
  ManifoldElement mean_;
  std::vector<Eigen::VectorXd> mean_derivs_;
};

/// e = x (-) mean on a single variable.
class VariablePriorFactor : public Factor {
 public:
  VariablePriorFactor(VariableId key, ManifoldElement mean, NoiseModel noise)
      : Factor(FactorKind::kVariablePrior, {key}, std::move(noise)), mean_(std::move(mean)) {
    if (dim() != mean_.descriptor().dof()) throw InvalidArgument("VariablePriorFactor: noise dimension mismatch");
  }
  Eigen::VectorXd error(const Values& values, Eigen::MatrixXd* J) const override {
    const TangentVector e = boxminus(values[keys()[0]], mean_);
    if (J) *J = right_jacobian_inv(mean_.descriptor(), e);
    return e.data();
  }

 private:
  ManifoldElement mean_;
};

/// GP motion prior between consecutive support states, covariance Q(dt).
class MotionPriorFactor : public Factor {
 public:
  MotionPriorFactor(GpPriorModel prior, VariableId key_i, double t_i, VariableId key_ip1, double t_ip1)
      : Factor(FactorKind::kMotionPrior, {key_i, key_ip1}, NoiseModel(process_noise(prior, t_ip1 - t_i))),
        prior_(std::move(prior)),
        t_i_(t_i),
        t_ip1_(t_ip1) {}
  Eigen::VectorXd error(const Values& values, Eigen::MatrixXd* J) const override {
    PriorResidual r = prior_residual(prior_, to_support_state(values[keys()[0]], t_i_),
                                     to_support_state(values[keys()[1]], t_ip1_), J != nullptr);
    if (J) {
      J->resize(r.error.size(), 2 * r.error.size());
      *J << r.d_first, r.d_second;
    }
    return r.error;
  }

 private:
  GpPriorModel prior_;
  double t_i_, t_ip1_;
};

}  // namespace ctraj
