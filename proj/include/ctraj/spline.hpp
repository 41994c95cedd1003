#pragma once

// Temporal B-splines of arbitrary order on vector spaces and Lie groups.
//
// Indexing: segment i depends on control points x_i .. x_{i+k-1} and covers
// [t_{i+k-2}, t_{i+k-1}). A spline with C control points therefore needs knots
// t_0 .. t_{C+k-3} (the outer k-2 knots on each side only shape the basis), and is
// queryable on [t_{k-2}, t_{C-1}).
//
// Blending matrices are stored with rows indexing control points and columns indexing
// powers of the normalized time u, so that lambda(u) = M * (1, u, u^2, ...)^T.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctraj/errors.hpp"
#include "ctraj/manifold.hpp"

namespace ctraj {

struct BlendingMatrix {
  Eigen::MatrixXd entries;

  int order() const { return static_cast<int>(entries.rows()); }

  /// Blending vector d^deriv/du^deriv lambda(u).
  Eigen::VectorXd weights(double u, int deriv = 0) const {
    const int k = order();
    Eigen::VectorXd powers = Eigen::VectorXd::Zero(k);
    for (int n = deriv; n < k; ++n) {
      double c = 1.0;
      for (int r = 0; r < deriv; ++r) c *= n - r;
      powers[n] = c * std::pow(u, n - deriv);
    }
    return entries * powers;
  }
};

namespace detail {

inline double binomial(int n, int r) {
  if (r < 0 || r > n) return 0.0;
  double out = 1.0;
  for (int i = 1; i <= r; ++i) out = out * (n - r + i) / i;
  return out;
}

inline double int_pow(double base, int e) {
  double out = 1.0;  // 0^0 = 1
  for (int i = 0; i < e; ++i) out *= base;
  return out;
}

inline BlendingMatrix compute_uniform_blending(int k) {
  Eigen::MatrixXd M(k, k);
  double factorial = 1.0;
  for (int i = 2; i <= k - 1; ++i) factorial *= i;
  for (int s = 0; s < k; ++s) {
    for (int n = 0; n < k; ++n) {
      double sum = 0.0;
      for (int l = s; l < k; ++l) {
        double sign = ((l - s) % 2 == 0) ? 1.0 : -1.0;
        sum += sign * binomial(k, l - s) * int_pow(k - 1 - l, k - 1 - n);
      }
      M(s, n) = binomial(k - 1, n) / factorial * sum;
    }
  }
  return {M};
}

}  // namespace detail

/// Blending matrix of a uniform B-spline of order k (binomial closed form), cached per k.
inline const BlendingMatrix& uniform_blending_matrix(int k) {
  if (k < 1) throw InvalidArgument("uniform_blending_matrix: order must be >= 1");
  static std::mutex mutex;
  static std::map<int, BlendingMatrix> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(k);
  if (it == cache.end()) it = cache.emplace(k, detail::compute_uniform_blending(k)).first;
  return it->second;
}

/// Blending matrix of a non-uniform B-spline segment from its 2(k-1) surrounding knots.
///
/// The window holds t_i .. t_{i+2k-3}; the segment is [window[k-2], window[k-1]). The
/// per-segment basis polynomials are built by the recursive matrix form of Cox-de Boor
/// (each order multiplies the previous basis by affine functions of u), then transposed into
/// the row-per-control-point convention.
inline BlendingMatrix nonuniform_blending_matrix(int k, std::span<const double> window) {
  if (k < 1) throw InvalidArgument("nonuniform_blending_matrix: order must be >= 1");
  const std::size_t expected = static_cast<std::size_t>(2 * (k - 1));
  if (window.size() != expected)
    throw InvalidArgument("nonuniform_blending_matrix: expected " + std::to_string(expected) +
                          " knots, got " + std::to_string(window.size()));
  for (std::size_t n = 1; n < window.size(); ++n)
    if (!(window[n] > window[n - 1]))
      throw InvalidArgument("nonuniform_blending_matrix: knots must be strictly increasing");
  if (k == 1) return {Eigen::MatrixXd::Ones(1, 1)};

  const int L = k - 2;  // window index of the segment's left knot
  const double t0 = window[L];
  const double dt = window[L + 1] - t0;

  // basis[a] holds polynomial coefficients (in u) of the a-th basis function that is
  // non-zero on the segment; at order p these start at window index L - p + 1 + a.
  std::vector<Eigen::VectorXd> basis{Eigen::VectorXd::Unit(k, 0)};
  auto times_affine = [k](const Eigen::VectorXd& poly, double c0, double c1) {
    Eigen::VectorXd out = c0 * poly;
    out.tail(k - 1) += c1 * poly.head(k - 1);
    return out;
  };
  for (int p = 2; p <= k; ++p) {
    std::vector<Eigen::VectorXd> next(p, Eigen::VectorXd::Zero(k));
    for (int a = 0; a < p; ++a) {
      const int s = L - p + 1 + a;
      if (a >= 1) {
        // (t - t_s) / (t_{s+p-1} - t_s) * N_{s,p-1}
        double denom = window[s + p - 1] - window[s];
        next[a] += times_affine(basis[a - 1], (t0 - window[s]) / denom, dt / denom);
      }
      if (a <= p - 2) {
        // (t_{s+p} - t) / (t_{s+p} - t_{s+1}) * N_{s+1,p-1}
        double denom = window[s + p] - window[s + 1];
        next[a] += times_affine(basis[a], (window[s + p] - t0) / denom, -dt / denom);
      }
    }
    basis = std::move(next);
  }
  Eigen::MatrixXd M(k, k);
  for (int a = 0; a < k; ++a) M.row(a) = basis[a].transpose();
  return {M};
}

/// Cumulative blending matrix: m~[j][n] = sum_{s >= j} m[s][n].
inline BlendingMatrix cumulative_matrix(const BlendingMatrix& M) {
  const Eigen::MatrixXd& m = M.entries;
  Eigen::MatrixXd out = m;
  for (Eigen::Index j = m.rows() - 2; j >= 0; --j) out.row(j) += out.row(j + 1);
  return {out};
}

class KnotVector {
 public:
  KnotVector() = default;
  explicit KnotVector(std::vector<double> times) : times_(std::move(times)) {
    for (std::size_t n = 1; n < times_.size(); ++n)
      if (!(times_[n] > times_[n - 1]))
        throw InvalidArgument("KnotVector: knots must be strictly increasing");
  }

  /// `count` knots spaced `dt` apart with knot index `origin_index` at time `t_origin`.
  static KnotVector uniform(double t_origin, double dt, int count, int origin_index = 0) {
    if (!(dt > 0.0)) throw InvalidArgument("KnotVector::uniform: spacing must be positive");
    std::vector<double> t(static_cast<std::size_t>(count));
    for (int n = 0; n < count; ++n) t[static_cast<std::size_t>(n)] = t_origin + (n - origin_index) * dt;
    return KnotVector(std::move(t));
  }

  const std::vector<double>& times() const { return times_; }
  std::size_t size() const { return times_.size(); }
  double operator[](std::size_t n) const { return times_[n]; }

  bool is_uniform(double rel_tol = 1e-9) const {
    if (times_.size() < 3) return true;
    double dt = times_[1] - times_[0];
    for (std::size_t n = 2; n < times_.size(); ++n)
      if (std::abs((times_[n] - times_[n - 1]) - dt) > rel_tol * dt) return false;
    return true;
  }

 private:
  std::vector<double> times_;
};

/// Number of knots required by C control points of order k.
inline std::size_t required_knot_count(std::size_t control_points, int k) {
  return std::max(control_points + static_cast<std::size_t>(k) - 2, control_points);
}

struct SplineSegment {
  int index;  // i: first control point of the segment
  double u;   // normalized time in [0, 1)
  double dt;  // knot interval of the segment (infinite only for the first k = 1 segment)
};

class SplineTrajectory {
 public:
  SplineTrajectory(GroupDescriptor desc, int order, KnotVector knots,
                   std::vector<ManifoldElement> control_points)
      : desc_(std::move(desc)), order_(order), knots_(std::move(knots)), points_(std::move(control_points)) {
    if (order_ < 1) throw InvalidArgument("SplineTrajectory: order must be >= 1");
    if (points_.size() < static_cast<std::size_t>(order_))
      throw InvalidArgument("SplineTrajectory: need at least k control points");
    if (knots_.size() != required_knot_count(points_.size(), order_))
      throw InvalidArgument("SplineTrajectory: expected " +
                            std::to_string(required_knot_count(points_.size(), order_)) +
                            " knots for " + std::to_string(points_.size()) + " control points, got " +
                            std::to_string(knots_.size()));
    for (const auto& p : points_) detail::check_same(desc_, p.descriptor(), "SplineTrajectory");
    uniform_ = knots_.is_uniform();
  }

  /// Uniform spline whose queryable domain starts at t_start.
  static SplineTrajectory uniform(GroupDescriptor desc, int order, double t_start, double dt,
                                  std::vector<ManifoldElement> control_points) {
    int count = static_cast<int>(required_knot_count(control_points.size(), order));
    return {std::move(desc), order, KnotVector::uniform(t_start, dt, count, std::max(order - 2, 0)),
            std::move(control_points)};
  }

  const GroupDescriptor& descriptor() const { return desc_; }
  int order() const { return order_; }
  const KnotVector& knots() const { return knots_; }
  const std::vector<ManifoldElement>& control_points() const { return points_; }
  bool is_uniform() const { return uniform_; }

  void set_control_point(std::size_t j, ManifoldElement x) {
    detail::check_same(desc_, x.descriptor(), "set_control_point");
    points_.at(j) = std::move(x);
  }

  /// Knot index n of t_n (index k-2 is the domain start).
  double knot(int n) const { return knots_[static_cast<std::size_t>(n)]; }

  /// Valid query interval [t_min, t_max).
  double t_min() const { return order_ == 1 ? -INFINITY : knot(order_ - 2); }
  double t_max() const { return knot(static_cast<int>(points_.size()) - 1); }

  SplineSegment segment_for_time(double t) const {
    if (!(t >= t_min() && t < t_max())) throw OutOfDomain("spline", t, t_min(), t_max());
    const auto& kt = knots_.times();
    // First knot strictly greater than t is t_{i+k-1}.
    auto it = std::upper_bound(kt.begin(), kt.end(), t);
    int right = static_cast<int>(it - kt.begin());
    int i = right - order_ + 1;
    if (order_ == 1 && i == 0) return {0, 0.0, INFINITY};
    double left_t = knot(i + order_ - 2);
    double dt = knot(i + order_ - 1) - left_t;
    return {i, (t - left_t) / dt, dt};
  }

  BlendingMatrix blending(int segment) const {
    if (uniform_ || order_ <= 2) return uniform_blending_matrix(order_);
    const auto& kt = knots_.times();
    return nonuniform_blending_matrix(
        order_, std::span<const double>(kt.data() + segment, static_cast<std::size_t>(2 * (order_ - 1))));
  }

 private:
  GroupDescriptor desc_;
  int order_;
  KnotVector knots_;
  std::vector<ManifoldElement> points_;
  bool uniform_ = true;
};

namespace detail {
inline void check_deriv(int deriv) {
  if (deriv < 0 || deriv > 2) throw Unsupported("spline derivatives are limited to orders 0..2");
}
}  // namespace detail

/// Non-cumulative evaluation sum_j lambda_j(t) x_{i+j} (or its time derivative) on a vector space.
inline Eigen::VectorXd eval_vector(const SplineTrajectory& spline, double t, int deriv = 0) {
  detail::check_deriv(deriv);
  if (!spline.descriptor().is_vector_space())
    throw InvalidArgument("eval_vector: descriptor " + spline.descriptor().name() + " is not a vector space");
  SplineSegment seg = spline.segment_for_time(t);
  const int k = spline.order();
  Eigen::VectorXd w = spline.blending(seg.index).weights(seg.u, deriv);
  if (deriv > 0) w *= std::pow(1.0 / seg.dt, deriv);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(spline.descriptor().ambient_dim());
  for (int j = 0; j < k; ++j) out += w[j] * spline.control_points()[static_cast<std::size_t>(seg.index + j)].data();
  return out;
}

/// Value and body-frame derivatives of a cumulative spline segment, with Jacobians w.r.t. right
/// perturbations of the k involved control points (each dof x k*dof, control point j in
/// columns [j*dof, (j+1)*dof)).
struct SegmentEvaluation {
  ManifoldElement value;
  Eigen::VectorXd velocity;      // empty unless max_deriv >= 1
  Eigen::VectorXd acceleration;  // empty unless max_deriv >= 2
  Eigen::MatrixXd d_value;
  Eigen::MatrixXd d_velocity;
  Eigen::MatrixXd d_acceleration;
};

/// Cumulative (Lie) evaluation of one segment from its k control points.
///
/// `cumulative` is the segment's cumulative blending matrix and `inv_dt` the reciprocal knot
/// interval. Velocity/acceleration follow the O(k) recursion
///   w_j  = Ad(A_j^-1) w_{j-1} + lambda'_j d_j
///   w'_j = Ad(A_j^-1) w'_{j-1} + lambda''_j d_j + ad(Ad(A_j^-1) w_{j-1}) lambda'_j d_j.
inline SegmentEvaluation evaluate_segment(const GroupDescriptor& desc,
                                          std::span<const ManifoldElement* const> points,
                                          const BlendingMatrix& cumulative, double u, double inv_dt,
                                          int max_deriv, bool with_jacobians) {
  detail::check_deriv(max_deriv);
  const int k = static_cast<int>(points.size());
  const int d = desc.dof();
  const Eigen::VectorXd lam = cumulative.weights(u, 0);
  Eigen::VectorXd lam1, lam2;
  if (max_deriv >= 1) lam1 = cumulative.weights(u, 1) * inv_dt;
  if (max_deriv >= 2) lam2 = cumulative.weights(u, 2) * (inv_dt * inv_dt);

  SegmentEvaluation out;
  ManifoldElement pose = *points[0];
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d), wdot = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd Jp, Jw, Jwdot;
  if (with_jacobians) {
    Jp = Eigen::MatrixXd::Zero(d, k * d);
    Jp.leftCols(d).setIdentity();
    Jw = Eigen::MatrixXd::Zero(d, k * d);
    Jwdot = Eigen::MatrixXd::Zero(d, k * d);
  }

  for (int j = 1; j < k; ++j) {
    const ManifoldElement& prev = *points[static_cast<std::size_t>(j - 1)];
    const ManifoldElement& cur = *points[static_cast<std::size_t>(j)];
    const TangentVector dj = boxminus(cur, prev);
    const TangentVector scaled = lam[j] * dj;
    const ManifoldElement A = exp(desc, scaled);
    const Eigen::MatrixXd ad_inv = adjoint(inverse(A));
    pose = compose(pose, A);

    Eigen::MatrixXd Dj, JA;
    if (with_jacobians) {
      Dj = Eigen::MatrixXd::Zero(d, k * d);
      const Eigen::MatrixXd jr_inv = right_jacobian_inv(desc, dj);
      Dj.middleCols((j - 1) * d, d) = -jr_inv * adjoint(inverse(exp(desc, dj)));
      Dj.middleCols(j * d, d) = jr_inv;
      JA = lam[j] * right_jacobian(desc, scaled) * Dj;
      Jp = ad_inv * Jp + JA;
    }
    if (max_deriv >= 1) {
      const Eigen::VectorXd uj = ad_inv * w;
      const Eigen::VectorXd eta = lam1[j] * dj.data();
      Eigen::MatrixXd Ju, Jeta;
      if (with_jacobians) {
        Ju = ad_inv * Jw + small_adjoint(TangentVector(desc, uj)) * JA;
        Jeta = lam1[j] * Dj;
      }
      if (max_deriv >= 2) {
        const Eigen::VectorXd carried = ad_inv * wdot;
        const Eigen::MatrixXd ad_u = small_adjoint(TangentVector(desc, uj));
        if (with_jacobians) {
          Jwdot = ad_inv * Jwdot + small_adjoint(TangentVector(desc, carried)) * JA + lam2[j] * Dj +
                  ad_u * Jeta - small_adjoint(TangentVector(desc, eta)) * Ju;
        }
        wdot = carried + lam2[j] * dj.data() + ad_u * eta;
      }
      w = uj + eta;
      if (with_jacobians) Jw = Ju + Jeta;
    }
  }
  out.value = std::move(pose);
  if (max_deriv >= 1) out.velocity = w;
  if (max_deriv >= 2) out.acceleration = wdot;
  if (with_jacobians) {
    out.d_value = std::move(Jp);
    if (max_deriv >= 1) out.d_velocity = std::move(Jw);
    if (max_deriv >= 2) out.d_acceleration = std::move(Jwdot);
  }
  return out;
}

namespace detail {
inline SegmentEvaluation evaluate_at(const SplineTrajectory& spline, double t, int deriv, bool jac) {
  detail::check_deriv(deriv);
  SplineSegment seg = spline.segment_for_time(t);
  std::vector<const ManifoldElement*> pts;
  for (int j = 0; j < spline.order(); ++j)
    pts.push_back(&spline.control_points()[static_cast<std::size_t>(seg.index + j)]);
  double inv_dt = std::isfinite(seg.dt) ? 1.0 / seg.dt : 0.0;
  return evaluate_segment(spline.descriptor(), pts, cumulative_matrix(spline.blending(seg.index)), seg.u,
                          inv_dt, deriv, jac);
}
}  // namespace detail

struct LieEvaluation {
  ManifoldElement value;
  std::optional<TangentVector> velocity;
  std::optional<TangentVector> acceleration;
};

/// Cumulative evaluation x(t) = x_i * A_1 * ... * A_{k-1} with body-frame derivatives up to `deriv`.
inline LieEvaluation eval_lie(const SplineTrajectory& spline, double t, int deriv = 0) {
  SegmentEvaluation e = detail::evaluate_at(spline, t, deriv, false);
  LieEvaluation out{std::move(e.value), std::nullopt, std::nullopt};
  if (deriv >= 1) out.velocity = TangentVector(spline.descriptor(), e.velocity);
  if (deriv >= 2) out.acceleration = TangentVector(spline.descriptor(), e.acceleration);
  return out;
}

/// Jacobians of the interpolated quantity of order `deriv` (value perturbation, velocity or
/// acceleration) w.r.t. right perturbations of each of the k control points of the segment.
inline std::vector<Eigen::MatrixXd> control_point_jacobians(const SplineTrajectory& spline, double t,
                                                            int deriv) {
  SegmentEvaluation e = detail::evaluate_at(spline, t, deriv, true);
  const Eigen::MatrixXd& J = deriv == 0 ? e.d_value : (deriv == 1 ? e.d_velocity : e.d_acceleration);
  const int d = spline.descriptor().dof();
  std::vector<Eigen::MatrixXd> out;
  for (int j = 0; j < spline.order(); ++j) out.emplace_back(J.middleCols(j * d, d));
  return out;
}

}  // namespace ctraj
