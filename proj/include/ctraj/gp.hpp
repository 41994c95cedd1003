#pragma once

// Exactly sparse temporal Gaussian-process trajectories.
//
// The prior is a white-noise-on-derivative LTV-SDE: WNOA (constant velocity, two
// derivative blocks) or WNOJ (constant acceleration, three blocks). On Lie groups the
// prior acts on a local state (xi, xi', xi'') anchored at the earlier support state of
// each segment, and is mapped back to global pose, body velocity and body acceleration.
//
// State stacks are ordered [pose; velocity; acceleration], each block dof wide, and
// perturbed as (x (+) dx, v + dv, a + da).

#include <Eigen/Dense>

#include <algorithm>
#include <optional>
#include <vector>

#include "ctraj/errors.hpp"
#include "ctraj/manifold.hpp"

namespace ctraj {

enum class GpPriorKind { kWnoa, kWnoj };

class GpPriorModel {
 public:
  GpPriorModel(GpPriorKind kind, Eigen::MatrixXd qc) : kind_(kind), qc_(std::move(qc)) {
    if (qc_.rows() != qc_.cols() || qc_.rows() == 0)
      throw InvalidArgument("GpPriorModel: qc must be square and non-empty");
    if ((qc_ - qc_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, qc_.cwiseAbs().maxCoeff()))
      throw InvalidArgument("GpPriorModel: qc must be symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(qc_);
    if (llt.info() != Eigen::Success) throw InvalidArgument("GpPriorModel: qc must be positive definite");
    qc_ = 0.5 * (qc_ + qc_.transpose());
    qc_inv_ = llt.solve(Eigen::MatrixXd::Identity(qc_.rows(), qc_.cols()));
  }
  static GpPriorModel wnoa(Eigen::MatrixXd qc) { return {GpPriorKind::kWnoa, std::move(qc)}; }
  static GpPriorModel wnoj(Eigen::MatrixXd qc) { return {GpPriorKind::kWnoj, std::move(qc)}; }

  GpPriorKind kind() const { return kind_; }
  /// Number of derivative blocks in the Markov state (pose counts as one).
  int blocks() const { return kind_ == GpPriorKind::kWnoa ? 2 : 3; }
  int dof() const { return static_cast<int>(qc_.rows()); }
  int state_dim() const { return blocks() * dof(); }
  const Eigen::MatrixXd& qc() const { return qc_; }
  const Eigen::MatrixXd& qc_inv() const { return qc_inv_; }

 private:
  GpPriorKind kind_;
  Eigen::MatrixXd qc_;
  Eigen::MatrixXd qc_inv_;
};

struct SupportState {
  double time = 0.0;
  ManifoldElement element;
  /// Body velocity, then (WNOJ) body acceleration.
  std::vector<TangentVector> derivatives;
};

namespace detail {

inline Eigen::MatrixXd kron_identity(const Eigen::MatrixXd& a, int n) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(a.rows() * n, a.cols() * n);
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c)
      if (a(r, c) != 0.0) out.block(r * n, c * n, n, n).diagonal().setConstant(a(r, c));
  return out;
}

inline Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c) out.block(r * b.rows(), c * b.cols(), b.rows(), b.cols()) = a(r, c) * b;
  return out;
}

/// Scalar transition: entries dt^(c-r) / (c-r)!.
inline Eigen::MatrixXd scalar_transition(int B, double dt) {
  Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(B, B);
  for (int r = 0; r < B; ++r) {
    double term = 1.0;
    for (int c = r + 1; c < B; ++c) {
      term *= dt / (c - r);
      phi(r, c) = term;
    }
  }
  return phi;
}

/// Scalar process-noise integral for unit power spectral density; dt = 0 gives zero.
inline Eigen::MatrixXd scalar_process_noise(int B, double dt) {
  Eigen::MatrixXd q(B, B);
  const double d2 = dt * dt, d3 = d2 * dt;
  if (B == 2) {
    q << d3 / 3.0, d2 / 2.0,  //
        d2 / 2.0, dt;
  } else {
    const double d4 = d3 * dt, d5 = d4 * dt;
    q << d5 / 20.0, d4 / 8.0, d3 / 6.0,  //
        d4 / 8.0, d3 / 3.0, d2 / 2.0,    //
        d3 / 6.0, d2 / 2.0, dt;
  }
  return q;
}

inline Eigen::MatrixXd scalar_process_noise_inv(int B, double dt) {
  Eigen::MatrixXd q(B, B);
  const double i1 = 1.0 / dt, i2 = i1 * i1, i3 = i2 * i1;
  if (B == 2) {
    q << 12.0 * i3, -6.0 * i2,  //
        -6.0 * i2, 4.0 * i1;
  } else {
    const double i4 = i3 * i1, i5 = i4 * i1;
    q << 720.0 * i5, -360.0 * i4, 60.0 * i3,  //
        -360.0 * i4, 192.0 * i3, -36.0 * i2,  //
        60.0 * i3, -36.0 * i2, 9.0 * i1;
  }
  return q;
}

}  // namespace detail

/// Transition matrix Phi(dt) of the prior.
inline Eigen::MatrixXd transition(const GpPriorModel& prior, double dt) {
  if (!(dt >= 0.0)) throw InvalidArgument("transition: dt must be non-negative");
  return detail::kron_identity(detail::scalar_transition(prior.blocks(), dt), prior.dof());
}

/// Process-noise covariance Q(dt) accumulated over an interval of length dt.
inline Eigen::MatrixXd process_noise(const GpPriorModel& prior, double dt) {
  if (!(dt > 0.0)) throw InvalidArgument("process_noise: dt must be positive");
  return detail::kron(detail::scalar_process_noise(prior.blocks(), dt), prior.qc());
}

inline Eigen::MatrixXd process_noise_inv(const GpPriorModel& prior, double dt) {
  if (!(dt > 0.0)) throw InvalidArgument("process_noise_inv: dt must be positive");
  return detail::kron(detail::scalar_process_noise_inv(prior.blocks(), dt), prior.qc_inv());
}

struct LambdaPsi {
  Eigen::MatrixXd lambda;
  Eigen::MatrixXd psi;
};

namespace detail {

/// Scalar (B x B) Lambda and Psi. Both factor as kron(., I) independent of qc. They are
/// evaluated in time normalized by the segment length, where the process-noise inverse
/// has exact integer entries, and scaled back; this keeps small and large segments
/// equally well conditioned.
inline LambdaPsi scalar_lambda_psi(int B, double t_i, double t_ip1, double t) {
  const double span = t_ip1 - t_i, tau = t - t_i;
  if (tau == 0.0) return {Eigen::MatrixXd::Identity(B, B), Eigen::MatrixXd::Zero(B, B)};
  const double s = tau / span;
  Eigen::MatrixXd psi_hat = scalar_process_noise(B, s) * scalar_transition(B, 1.0 - s).transpose() *
                            scalar_process_noise_inv(B, 1.0);
  Eigen::MatrixXd lambda_hat = scalar_transition(B, s) - psi_hat * scalar_transition(B, 1.0);
  // Phi(span * s) = D Phi_hat(s) D^-1 and Q(span * s) = span D Q_hat(s) D.
  Eigen::VectorXd D(B);
  for (int r = 0; r < B; ++r) D[r] = std::pow(span, B - 1 - r);
  const auto Dm = D.asDiagonal();
  const auto Di = D.cwiseInverse().asDiagonal();
  return {Dm * lambda_hat * Di, Dm * psi_hat * Di};
}

}  // namespace detail

/// Interpolation matrices such that the local state at t is Lambda x_i + Psi x_ip1.
/// The closed end t = t_ip1 is accepted and yields the limit Lambda = 0, Psi = I.
inline LambdaPsi lambda_psi(const GpPriorModel& prior, double t_i, double t_ip1, double t) {
  if (!(t_i < t_ip1)) throw InvalidArgument("lambda_psi: support times must be increasing");
  if (t < t_i || t > t_ip1) throw OutOfDomain("lambda_psi", t, t_i, t_ip1);
  LambdaPsi s = detail::scalar_lambda_psi(prior.blocks(), t_i, t_ip1, t);
  return {detail::kron_identity(s.lambda, prior.dof()), detail::kron_identity(s.psi, prior.dof())};
}

namespace detail {

inline void check_state(const GpPriorModel& prior, const SupportState& s, const char* op) {
  if (s.element.descriptor().dof() != prior.dof())
    throw InvalidArgument(std::string(op) + ": state dof does not match prior");
  if (static_cast<int>(s.derivatives.size()) != prior.blocks() - 1)
    throw InvalidArgument(std::string(op) + ": derivative count does not match prior");
  for (const auto& d : s.derivatives) check_same(s.element.descriptor(), d.descriptor(), op);
}

inline TangentVector tv(const GroupDescriptor& d, const Eigen::VectorXd& v) { return {d, v}; }

/// Columns m are D(J_r^-1)(tau)[e_m] w.
inline Eigen::MatrixXd djr_inv_apply(const GroupDescriptor& d, const Eigen::VectorXd& tau,
                                     const Eigen::VectorXd& w) {
  const int n = d.dof();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  if (d.is_vector_space()) return out;
  for (int m = 0; m < n; ++m)
    out.col(m) = djr_inv_dt(d, tv(d, tau), tv(d, Eigen::VectorXd::Unit(n, m))) * w;
  return out;
}

/// Columns m are D^2(J_r^-1)(tau)[a, e_m] w.
inline Eigen::MatrixXd d2jr_inv_apply(const GroupDescriptor& d, const Eigen::VectorXd& tau,
                                      const Eigen::VectorXd& a, const Eigen::VectorXd& w) {
  const int n = d.dof();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  if (d.is_vector_space()) return out;
  for (int m = 0; m < n; ++m)
    out.col(m) = d2jr_inv(d, tv(d, tau), tv(d, a), tv(d, Eigen::VectorXd::Unit(n, m))) * w;
  return out;
}

struct LocalMapping {
  Eigen::VectorXd xi;        // stacked (xi, xi', [xi''])
  Eigen::MatrixXd d_ref;     // d xi / d reference-state perturbation
  Eigen::MatrixXd d_state;   // d xi / d state perturbation
};

inline LocalMapping local_mapping(const GpPriorModel& prior, const SupportState& ref, const SupportState& s,
                                  bool with_jacobians) {
  const GroupDescriptor& d = s.element.descriptor();
  const int n = d.dof(), B = prior.blocks();
  const Eigen::VectorXd xi = boxminus(s.element, ref.element).data();
  const Eigen::VectorXd& v = s.derivatives[0].data();
  const Eigen::MatrixXd Ji = right_jacobian_inv(d, tv(d, xi));
  const Eigen::VectorXd xi_dot = Ji * v;
  LocalMapping out;
  out.xi.resize(B * n);
  out.xi.segment(0, n) = xi;
  out.xi.segment(n, n) = xi_dot;
  Eigen::MatrixXd D1;
  if (B == 3) {
    D1 = djr_inv_dt(d, tv(d, xi), tv(d, xi_dot));
    out.xi.segment(2 * n, n) = D1 * v + Ji * s.derivatives[1].data();
  }
  if (!with_jacobians) return out;

  const Eigen::MatrixXd dx_state = Ji;
  const Eigen::MatrixXd dx_ref = -Ji * adjoint(inverse(exp(d, tv(d, xi))));
  const Eigen::MatrixXd Wv = djr_inv_apply(d, xi, v);
  // Derivative of the stacked local state with respect to xi itself.
  Eigen::MatrixXd d_xi(B * n, n);
  d_xi.topRows(n).setIdentity();
  d_xi.middleRows(n, n) = Wv;
  if (B == 3) {
    const Eigen::VectorXd& a = s.derivatives[1].data();
    d_xi.bottomRows(n) = d2jr_inv_apply(d, xi, xi_dot, v) + djr_inv_apply(d, xi, a) + Wv * Wv;
  }
  out.d_ref = Eigen::MatrixXd::Zero(B * n, B * n);
  out.d_ref.leftCols(n) = d_xi * dx_ref;
  out.d_state = Eigen::MatrixXd::Zero(B * n, B * n);
  out.d_state.leftCols(n) = d_xi * dx_state;
  out.d_state.block(n, n, n, n) = Ji;
  if (B == 3) {
    out.d_state.block(2 * n, n, n, n) = D1 + Wv * Ji;
    out.d_state.block(2 * n, 2 * n, n, n) = Ji;
  }
  return out;
}

/// Local state of a segment's reference at itself: (0, v, a). The J_r^-1 derivative term
/// vanishes identically at xi = 0.
inline Eigen::VectorXd local_at_reference(const GpPriorModel& prior, const SupportState& s) {
  const int n = prior.dof();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(prior.state_dim());
  for (int b = 1; b < prior.blocks(); ++b) out.segment(b * n, n) = s.derivatives[b - 1].data();
  return out;
}

inline Eigen::MatrixXd local_at_reference_jacobian(const GpPriorModel& prior) {
  const int n = prior.dof();
  Eigen::MatrixXd E = Eigen::MatrixXd::Identity(prior.state_dim(), prior.state_dim());
  E.topLeftCorner(n, n).setZero();
  return E;
}

struct GlobalMapping {
  SupportState state;
  Eigen::MatrixXd d_ref;    // only the pose column block is non-zero
  Eigen::MatrixXd d_local;  // d state / d stacked local state
};

inline GlobalMapping global_mapping(const GpPriorModel& prior, const SupportState& ref, double time,
                                    const Eigen::VectorXd& local, bool with_jacobians) {
  const GroupDescriptor& d = ref.element.descriptor();
  const int n = d.dof(), B = prior.blocks();
  const Eigen::VectorXd xi = local.segment(0, n), xi_dot = local.segment(n, n);
  const Eigen::MatrixXd Jr = right_jacobian(d, tv(d, xi));
  GlobalMapping out;
  out.state.time = time;
  out.state.element = boxplus(ref.element, tv(d, xi));
  const Eigen::VectorXd v = Jr * xi_dot;
  out.state.derivatives.emplace_back(d, v);
  Eigen::MatrixXd D1;
  Eigen::VectorXd a;
  if (B == 3) {
    D1 = djr_inv_dt(d, tv(d, xi), tv(d, xi_dot));
    a = Jr * (local.segment(2 * n, n) - D1 * v);
    out.state.derivatives.emplace_back(d, a);
  }
  if (!with_jacobians) return out;

  out.d_ref = Eigen::MatrixXd::Zero(B * n, B * n);
  out.d_ref.topLeftCorner(n, n) = adjoint(inverse(exp(d, tv(d, xi))));
  out.d_local = Eigen::MatrixXd::Zero(B * n, B * n);
  out.d_local.topLeftCorner(n, n) = Jr;
  const Eigen::MatrixXd Wv = djr_inv_apply(d, xi, v);
  const Eigen::MatrixXd dv_dxi = -Jr * Wv;
  out.d_local.block(n, 0, n, n) = dv_dxi;
  out.d_local.block(n, n, n, n) = Jr;
  if (B == 3) {
    const Eigen::MatrixXd dw_dxi = -d2jr_inv_apply(d, xi, xi_dot, v) - D1 * dv_dxi;
    const Eigen::MatrixXd dw_dxidot = -Wv - D1 * Jr;
    out.d_local.block(2 * n, 0, n, n) = -Jr * djr_inv_apply(d, xi, a) + Jr * dw_dxi;
    out.d_local.block(2 * n, n, n, n) = Jr * dw_dxidot;
    out.d_local.block(2 * n, 2 * n, n, n) = Jr;
  }
  return out;
}

}  // namespace detail

/// Local tangent-space state of s relative to s_ref: (s (-) s_ref, J_r^-1 v, [xi'']).
inline Eigen::VectorXd local_from_global(const GpPriorModel& prior, const SupportState& s_ref,
                                         const SupportState& s) {
  detail::check_state(prior, s_ref, "local_from_global");
  detail::check_state(prior, s, "local_from_global");
  detail::check_same(s_ref.element.descriptor(), s.element.descriptor(), "local_from_global");
  return detail::local_mapping(prior, s_ref, s, false).xi;
}

inline SupportState global_from_local(const GpPriorModel& prior, const SupportState& s_ref,
                                      const Eigen::VectorXd& local, double time) {
  detail::check_state(prior, s_ref, "global_from_local");
  if (local.size() != prior.state_dim()) throw InvalidArgument("global_from_local: wrong local size");
  return detail::global_mapping(prior, s_ref, time, local, false).state;
}

struct PriorResidual {
  Eigen::VectorXd error;
  Eigen::MatrixXd d_first;
  Eigen::MatrixXd d_second;
};

/// Motion-prior residual Phi(dt) local(s_i) - local(s_ip1), zero on the prior's
/// deterministic flow. Its covariance is process_noise(prior, dt).
inline PriorResidual prior_residual(const GpPriorModel& prior, const SupportState& s_i,
                                    const SupportState& s_ip1, bool with_jacobians = true) {
  detail::check_state(prior, s_i, "prior_residual");
  detail::check_state(prior, s_ip1, "prior_residual");
  detail::check_same(s_i.element.descriptor(), s_ip1.element.descriptor(), "prior_residual");
  if (!(s_i.time < s_ip1.time)) throw InvalidArgument("prior_residual: support times must be increasing");
  const Eigen::MatrixXd phi = transition(prior, s_ip1.time - s_i.time);
  detail::LocalMapping L = detail::local_mapping(prior, s_i, s_ip1, with_jacobians);
  PriorResidual out;
  out.error = phi * detail::local_at_reference(prior, s_i) - L.xi;
  if (with_jacobians) {
    out.d_first = phi * detail::local_at_reference_jacobian(prior) - L.d_ref;
    out.d_second = -L.d_state;
  }
  return out;
}

struct GpInterpolation {
  SupportState state;
  Eigen::MatrixXd d_first;   // d state(t) / d s_i
  Eigen::MatrixXd d_second;  // d state(t) / d s_ip1
  Eigen::MatrixXd d_local;   // d state(t) / d interpolated local state
  LambdaPsi lp;
};

/// Posterior mean between two support states with Jacobians of the result.
/// Variant taking the interpolation weights at t and the local mapping of s_ip1 about s_i,
/// both of which can be shared across queries.
inline GpInterpolation interpolate_between(const GpPriorModel& prior, const SupportState& s_i,
                                           const SupportState& s_ip1, double t, const LambdaPsi& lp,
                                           const detail::LocalMapping& L, bool with_jacobians = true) {
  const Eigen::VectorXd local = lp.lambda * detail::local_at_reference(prior, s_i) + lp.psi * L.xi;
  detail::GlobalMapping G = detail::global_mapping(prior, s_i, t, local, with_jacobians);
  GpInterpolation out;
  out.state = std::move(G.state);
  if (with_jacobians) {
    // Small fixed-size-like products: coefficient-based evaluation beats blocked GEMM here.
    const Eigen::MatrixXd inner =
        lp.lambda.lazyProduct(detail::local_at_reference_jacobian(prior)) + lp.psi.lazyProduct(L.d_ref);
    out.d_first = G.d_ref + G.d_local.lazyProduct(inner);
    const Eigen::MatrixXd psi_state = lp.psi.lazyProduct(L.d_state);
    out.d_second = G.d_local.lazyProduct(psi_state);
    out.d_local = std::move(G.d_local);
  }
  out.lp = lp;
  return out;
}

inline GpInterpolation interpolate_between(const GpPriorModel& prior, const SupportState& s_i,
                                           const SupportState& s_ip1, double t, bool with_jacobians = true) {
  LambdaPsi lp = lambda_psi(prior, s_i.time, s_ip1.time, t);
  detail::LocalMapping L = detail::local_mapping(prior, s_i, s_ip1, with_jacobians);
  return interpolate_between(prior, s_i, s_ip1, t, lp, L, with_jacobians);
}

class GpTrajectory {
 public:
  GpTrajectory(GroupDescriptor desc, GpPriorModel prior, std::vector<SupportState> states)
      : desc_(std::move(desc)), prior_(std::move(prior)), states_(std::move(states)) {
    if (states_.size() < 2) throw InvalidArgument("GpTrajectory: need at least two support states");
    if (desc_.dof() != prior_.dof()) throw InvalidArgument("GpTrajectory: prior dof does not match descriptor");
    for (std::size_t i = 0; i < states_.size(); ++i) {
      detail::check_state(prior_, states_[i], "GpTrajectory");
      detail::check_same(desc_, states_[i].element.descriptor(), "GpTrajectory");
      if (i > 0 && !(states_[i - 1].time < states_[i].time))
        throw InvalidArgument("GpTrajectory: support times must be strictly increasing");
    }
  }

  const GroupDescriptor& descriptor() const { return desc_; }
  const GpPriorModel& prior() const { return prior_; }
  const std::vector<SupportState>& states() const { return states_; }
  void set_state(std::size_t i, SupportState s) {
    detail::check_state(prior_, s, "set_state");
    states_.at(i) = std::move(s);
  }
  double t_min() const { return states_.front().time; }
  double t_max() const { return states_.back().time; }

  /// Index i with t_i <= t < t_{i+1}; the last support time maps to the final segment.
  std::size_t bracket(double t) const {
    if (!(t >= t_min() && t <= t_max()) || states_.size() < 2) throw OutOfDomain("GpTrajectory", t, t_min(), t_max());
    if (t == t_max()) return states_.size() - 2;
    auto it = std::upper_bound(states_.begin(), states_.end(), t,
                               [](double v, const SupportState& s) { return v < s.time; });
    return static_cast<std::size_t>(it - states_.begin()) - 1;
  }

 private:
  GroupDescriptor desc_;
  GpPriorModel prior_;
  std::vector<SupportState> states_;
};

inline SupportState interpolate_mean(const GpTrajectory& traj, double t) {
  const std::size_t i = traj.bracket(t);
  const auto& s = traj.states();
  if (t == s[i].time) return s[i];
  if (t == s[i + 1].time) return s[i + 1];
  return interpolate_between(traj.prior(), s[i], s[i + 1], t, false).state;
}

/// Posterior covariance at t from the joint covariance of the bracketing support states
/// (ordered [s_i; s_ip1], in their perturbation coordinates).
inline Eigen::MatrixXd interpolate_covariance(const GpTrajectory& traj, double t,
                                              const Eigen::MatrixXd& joint) {
  const int m = traj.prior().state_dim();
  if (joint.rows() != 2 * m || joint.cols() != 2 * m)
    throw InvalidArgument("interpolate_covariance: joint block has wrong size");
  if ((joint - joint.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, joint.cwiseAbs().maxCoeff()))
    throw InvalidArgument("interpolate_covariance: joint block is not symmetric");
  const std::size_t i = traj.bracket(t);
  const auto& s = traj.states();
  if (t == s[i].time) return joint.topLeftCorner(m, m);
  if (t == s[i + 1].time) return joint.bottomRightCorner(m, m);
  GpInterpolation g = interpolate_between(traj.prior(), s[i], s[i + 1], t, true);
  Eigen::MatrixXd J(m, 2 * m);
  J << g.d_first, g.d_second;
  const int B = traj.prior().blocks();
  LambdaPsi sc = detail::scalar_lambda_psi(B, s[i].time, s[i + 1].time, t);
  Eigen::MatrixXd cond = detail::scalar_process_noise(B, t - s[i].time) -
                         sc.psi * detail::scalar_process_noise(B, s[i + 1].time - s[i].time) * sc.psi.transpose();
  Eigen::MatrixXd P = J * joint * J.transpose() +
                      g.d_local * detail::kron(cond, traj.prior().qc()) * g.d_local.transpose();
  return 0.5 * (P + P.transpose());
}

}  // namespace ctraj
