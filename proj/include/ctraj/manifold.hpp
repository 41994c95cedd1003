#pragma once

// Composite Lie-group algebra for continuous-time trajectories.
//
// Groups are described at runtime by a GroupDescriptor so that splines, GPs and
// factors can be written once for any state space. Conventions are right-handed
// throughout:
//
//   x (+) tau = x * Exp(tau)        y (-) x = Log(x^-1 * y)
//
// SO(2) is stored as an angle wrapped to (-pi, pi]. SE(2) is stored as (x, y, theta)
// with tangent (rho_x, rho_y, theta).

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctraj/detail/dual.hpp"
#include "ctraj/errors.hpp"

namespace ctraj {

enum class GroupKind { kVectorSpace, kSO2, kSE2, kProduct };

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * std::numbers::pi);
  if (w <= -std::numbers::pi) w += 2.0 * std::numbers::pi;
  return w;
}

class GroupDescriptor {
 public:
  /// A non-product factor of the (flattened) group with its offsets.
  struct Leaf {
    GroupKind kind;
    int dof;
    int ambient;
    int tangent_offset;
    int ambient_offset;
  };

  GroupDescriptor() : GroupDescriptor(vector_space(0)) {}

  static GroupDescriptor vector_space(int n) {
    if (n < 0) throw InvalidArgument("vector_space: negative dimension");
    return GroupDescriptor(GroupKind::kVectorSpace, n, {});
  }
  static GroupDescriptor so2() { return GroupDescriptor(GroupKind::kSO2, 1, {}); }
  static GroupDescriptor se2() { return GroupDescriptor(GroupKind::kSE2, 3, {}); }
  static GroupDescriptor product(std::vector<GroupDescriptor> parts) {
    if (parts.empty()) throw InvalidArgument("product: no parts");
    return GroupDescriptor(GroupKind::kProduct, 0, std::move(parts));
  }

  GroupKind kind() const { return impl_->kind; }
  int dof() const { return impl_->dof; }
  int ambient_dim() const { return impl_->ambient; }
  /// Declared parts of a product group; empty otherwise.
  const std::vector<GroupDescriptor>& parts() const { return impl_->parts; }
  std::span<const Leaf> leaves() const { return impl_->leaves; }

  /// True when every leaf is a vector space (Exp/Log are identities, J_r = I).
  bool is_vector_space() const {
    for (const Leaf& l : impl_->leaves)
      if (l.kind != GroupKind::kVectorSpace) return false;
    return true;
  }

  std::string name() const {
    std::string out;
    for (const Leaf& l : impl_->leaves) {
      if (!out.empty()) out += "x";
      switch (l.kind) {
        case GroupKind::kSO2:
          out += "SO2";
          break;
        case GroupKind::kSE2:
          out += "SE2";
          break;
        default:
          out += "R" + std::to_string(l.dof);
      }
    }
    return out;
  }

  friend bool operator==(const GroupDescriptor& a, const GroupDescriptor& b) {
    if (a.impl_ == b.impl_) return true;
    if (a.impl_->leaves.size() != b.impl_->leaves.size()) return false;
    for (std::size_t i = 0; i < a.impl_->leaves.size(); ++i) {
      const Leaf& la = a.impl_->leaves[i];
      const Leaf& lb = b.impl_->leaves[i];
      if (la.kind != lb.kind || la.dof != lb.dof) return false;
    }
    return true;
  }

 private:
  struct Impl {
    GroupKind kind;
    std::vector<GroupDescriptor> parts;
    std::vector<Leaf> leaves;
    int dof = 0;
    int ambient = 0;
  };

  GroupDescriptor(GroupKind kind, int n, std::vector<GroupDescriptor> parts) {
    auto impl = std::make_shared<Impl>();
    impl->kind = kind;
    impl->parts = std::move(parts);
    if (kind == GroupKind::kProduct) {
      for (const GroupDescriptor& p : impl->parts) {
        for (Leaf l : p.leaves()) {
          l.tangent_offset = impl->dof;
          l.ambient_offset = impl->ambient;
          impl->dof += l.dof;
          impl->ambient += l.ambient;
          impl->leaves.push_back(l);
        }
      }
    } else {
      impl->dof = n;
      impl->ambient = n;
      impl->leaves.push_back(Leaf{kind, n, n, 0, 0});
    }
    impl_ = std::move(impl);
  }

  std::shared_ptr<const Impl> impl_;
};

/// A point on a (possibly composite) group.
class ManifoldElement {
 public:
  ManifoldElement() = default;
  ManifoldElement(GroupDescriptor desc, Eigen::VectorXd data)
      : desc_(std::move(desc)), data_(std::move(data)) {
    if (data_.size() != desc_.ambient_dim())
      throw InvalidArgument("ManifoldElement: data length " + std::to_string(data_.size()) +
                            " does not match " + desc_.name());
    for (const auto& l : desc_.leaves()) {
      if (l.kind == GroupKind::kSO2) data_[l.ambient_offset] = wrap_angle(data_[l.ambient_offset]);
      if (l.kind == GroupKind::kSE2)
        data_[l.ambient_offset + 2] = wrap_angle(data_[l.ambient_offset + 2]);
    }
  }

  static ManifoldElement identity(const GroupDescriptor& desc) {
    return {desc, Eigen::VectorXd::Zero(desc.ambient_dim())};
  }

  const GroupDescriptor& descriptor() const { return desc_; }
  const Eigen::VectorXd& data() const { return data_; }
  double operator[](Eigen::Index i) const { return data_[i]; }

  /// Element of the i-th declared part of a product group.
  ManifoldElement part(std::size_t i) const {
    if (desc_.kind() != GroupKind::kProduct) throw InvalidArgument("part: not a product group");
    const auto& parts = desc_.parts();
    if (i >= parts.size()) throw InvalidArgument("part: index out of range");
    int off = 0;
    for (std::size_t p = 0; p < i; ++p) off += parts[p].ambient_dim();
    return {parts[i], data_.segment(off, parts[i].ambient_dim())};
  }

 private:
  GroupDescriptor desc_;
  Eigen::VectorXd data_;
};

/// Local coordinates in the tangent space of a descriptor.
class TangentVector {
 public:
  TangentVector() = default;
  TangentVector(GroupDescriptor desc, Eigen::VectorXd data)
      : desc_(std::move(desc)), data_(std::move(data)) {
    if (data_.size() != desc_.dof())
      throw InvalidArgument("TangentVector: length " + std::to_string(data_.size()) +
                            " does not match dof of " + desc_.name());
  }

  static TangentVector zero(const GroupDescriptor& desc) {
    return {desc, Eigen::VectorXd::Zero(desc.dof())};
  }

  const GroupDescriptor& descriptor() const { return desc_; }
  const Eigen::VectorXd& data() const { return data_; }
  double operator[](Eigen::Index i) const { return data_[i]; }
  Eigen::Index size() const { return data_.size(); }

  friend TangentVector operator*(double s, const TangentVector& v) { return {v.desc_, s * v.data_}; }
  friend TangentVector operator+(const TangentVector& a, const TangentVector& b) {
    check(a, b);
    return {a.desc_, a.data_ + b.data_};
  }
  friend TangentVector operator-(const TangentVector& a, const TangentVector& b) {
    check(a, b);
    return {a.desc_, a.data_ - b.data_};
  }

 private:
  static void check(const TangentVector& a, const TangentVector& b) {
    if (!(a.desc_ == b.desc_)) throw InvalidArgument("tangent arithmetic: descriptor mismatch");
  }

  GroupDescriptor desc_;
  Eigen::VectorXd data_;
};

/// Concatenates elements into an element of their product group.
inline ManifoldElement make_product(const std::vector<ManifoldElement>& parts) {
  std::vector<GroupDescriptor> descs;
  Eigen::Index n = 0;
  for (const auto& p : parts) {
    descs.push_back(p.descriptor());
    n += p.data().size();
  }
  Eigen::VectorXd data(n);
  n = 0;
  for (const auto& p : parts) {
    data.segment(n, p.data().size()) = p.data();
    n += p.data().size();
  }
  return {GroupDescriptor::product(std::move(descs)), std::move(data)};
}

namespace detail {

inline constexpr double kSmallAngle = 0.1;

// sum_n coeffs[n] * y^n by Horner's rule.
template <typename T, std::size_t N>
T horner(const T& y, const std::array<double, N>& coeffs) {
  T acc(coeffs[N - 1]);
  for (std::size_t n = N - 1; n-- > 0;) acc = acc * y + T(coeffs[n]);
  return acc;
}

// Coefficients of SE(2) Exp and J_r, with series expansions near theta = 0 (the closed forms
// lose precision to cancellation there, which matters for their derivatives):
//   s = sin(t)/t, c = (1 - cos t)/t, f1 = (t - sin t)/t^2, f2 = (1 - cos t)/t^2.
template <typename T>
struct Se2Coeffs {
  T s, c, f1, f2;
};

template <typename T>
Se2Coeffs<T> se2_coeffs(const T& th) {
  using std::abs;
  using std::cos;
  using std::sin;
  if (abs(scalar_value(th)) < kSmallAngle) {
    static constexpr std::array<double, 6> kS{1.0, -1.0 / 6, 1.0 / 120, -1.0 / 5040, 1.0 / 362880,
                                              -1.0 / 39916800};
    static constexpr std::array<double, 6> kF2{0.5,           -1.0 / 24,      1.0 / 720,
                                               -1.0 / 40320,  1.0 / 3628800, -1.0 / 479001600};
    static constexpr std::array<double, 6> kF1{1.0 / 6,        -1.0 / 120,      1.0 / 5040,
                                               -1.0 / 362880,  1.0 / 39916800, -1.0 / 6227020800};
    T y = th * th;
    T f2 = horner(y, kF2);
    return {horner(y, kS), th * f2, th * horner(y, kF1), f2};
  }
  T sn = sin(th);
  T cs = cos(th);
  T inv = T(1.0) / th;
  return {sn * inv, (T(1.0) - cs) * inv, (th - sn) * inv * inv, (T(1.0) - cs) * inv * inv};
}

template <typename T>
using Mat3 = std::array<std::array<T, 3>, 3>;

template <typename T>
Mat3<T> se2_jr(const T& r1, const T& r2, const T& th) {
  Se2Coeffs<T> k = se2_coeffs(th);
  return {{{k.s, k.c, r1 * k.f1 - r2 * k.f2},
           {-k.c, k.s, r1 * k.f2 + r2 * k.f1},
           {T(0.0), T(0.0), T(1.0)}}};
}

template <typename T>
Mat3<T> se2_jr_inv(const T& r1, const T& r2, const T& th) {
  Se2Coeffs<T> k = se2_coeffs(th);
  T b0 = r1 * k.f1 - r2 * k.f2;
  T b1 = r1 * k.f2 + r2 * k.f1;
  T det = k.s * k.s + k.c * k.c;
  T a00 = k.s / det, a01 = -k.c / det, a10 = k.c / det, a11 = k.s / det;
  return {{{a00, a01, -(a00 * b0 + a01 * b1)},
           {a10, a11, -(a10 * b0 + a11 * b1)},
           {T(0.0), T(0.0), T(1.0)}}};
}

template <typename T, typename F>
Eigen::Matrix3d to_matrix(const Mat3<T>& m, F&& get) {
  Eigen::Matrix3d out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out(r, c) = get(m[r][c]);
  return out;
}

inline Eigen::Matrix3d se2_jr_matrix(const Eigen::Vector3d& tau) {
  return to_matrix(se2_jr(tau[0], tau[1], tau[2]), [](double v) { return v; });
}

inline Eigen::Matrix3d se2_jr_inv_matrix(const Eigen::Vector3d& tau) {
  return to_matrix(se2_jr_inv(tau[0], tau[1], tau[2]), [](double v) { return v; });
}

inline Eigen::Matrix3d se2_djr_inv(const Eigen::Vector3d& tau, const Eigen::Vector3d& a) {
  using D = Dual<double>;
  return to_matrix(se2_jr_inv(D(tau[0], a[0]), D(tau[1], a[1]), D(tau[2], a[2])),
                   [](const D& v) { return v.d; });
}

inline Eigen::Matrix3d se2_d2jr_inv(const Eigen::Vector3d& tau, const Eigen::Vector3d& a,
                                    const Eigen::Vector3d& b) {
  using D = Dual<double>;
  using DD = Dual<D>;
  auto lift = [&](int i) { return DD(D(tau[i], b[i]), D(a[i], 0.0)); };
  return to_matrix(se2_jr_inv(lift(0), lift(1), lift(2)), [](const DD& v) { return v.d.d; });
}

inline void check_same(const GroupDescriptor& a, const GroupDescriptor& b, const char* op) {
  if (!(a == b))
    throw InvalidArgument(std::string(op) + ": descriptor mismatch (" + a.name() + " vs " + b.name() +
                          ")");
}

using Leaf = GroupDescriptor::Leaf;

inline void leaf_exp(const Leaf& l, const Eigen::VectorXd& tau, Eigen::VectorXd& out) {
  auto t = tau.segment(l.tangent_offset, l.dof);
  auto o = out.segment(l.ambient_offset, l.ambient);
  switch (l.kind) {
    case GroupKind::kSE2: {
      Se2Coeffs<double> k = se2_coeffs(t[2]);
      o[0] = k.s * t[0] - k.c * t[1];
      o[1] = k.c * t[0] + k.s * t[1];
      o[2] = t[2];
      break;
    }
    default:
      o = t;
  }
}

inline void leaf_log(const Leaf& l, const Eigen::VectorXd& x, Eigen::VectorXd& out) {
  auto a = x.segment(l.ambient_offset, l.ambient);
  auto o = out.segment(l.tangent_offset, l.dof);
  switch (l.kind) {
    case GroupKind::kSE2: {
      double th = wrap_angle(a[2]);
      Se2Coeffs<double> k = se2_coeffs(th);
      double det = k.s * k.s + k.c * k.c;
      o[0] = (k.s * a[0] + k.c * a[1]) / det;
      o[1] = (-k.c * a[0] + k.s * a[1]) / det;
      o[2] = th;
      break;
    }
    case GroupKind::kSO2:
      o[0] = wrap_angle(a[0]);
      break;
    default:
      o = a;
  }
}

inline void leaf_compose(const Leaf& l, const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                         Eigen::VectorXd& out) {
  auto x = a.segment(l.ambient_offset, l.ambient);
  auto y = b.segment(l.ambient_offset, l.ambient);
  auto o = out.segment(l.ambient_offset, l.ambient);
  if (l.kind == GroupKind::kSE2) {
    double c = std::cos(x[2]), s = std::sin(x[2]);
    o[0] = x[0] + c * y[0] - s * y[1];
    o[1] = x[1] + s * y[0] + c * y[1];
    o[2] = x[2] + y[2];
  } else {
    o = x + y;
  }
}

inline void leaf_inverse(const Leaf& l, const Eigen::VectorXd& a, Eigen::VectorXd& out) {
  auto x = a.segment(l.ambient_offset, l.ambient);
  auto o = out.segment(l.ambient_offset, l.ambient);
  if (l.kind == GroupKind::kSE2) {
    double c = std::cos(x[2]), s = std::sin(x[2]);
    o[0] = -(c * x[0] + s * x[1]);
    o[1] = -(-s * x[0] + c * x[1]);
    o[2] = -x[2];
  } else {
    o = -x;
  }
}

// Fills the leaf's diagonal block of a dof x dof matrix via f(leaf, tangent segment) for SE2
// leaves; other leaves get `other_value` * I.
template <typename F>
Eigen::MatrixXd block_diag(const GroupDescriptor& desc, double other_value, F&& se2_block) {
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(desc.dof(), desc.dof());
  for (const Leaf& l : desc.leaves()) {
    if (l.kind == GroupKind::kSE2)
      M.block<3, 3>(l.tangent_offset, l.tangent_offset) = se2_block(l);
    else
      M.block(l.tangent_offset, l.tangent_offset, l.dof, l.dof).diagonal().setConstant(other_value);
  }
  return M;
}

}  // namespace detail

inline ManifoldElement exp(const GroupDescriptor& desc, const TangentVector& tau) {
  detail::check_same(desc, tau.descriptor(), "exp");
  Eigen::VectorXd out(desc.ambient_dim());
  for (const auto& l : desc.leaves()) detail::leaf_exp(l, tau.data(), out);
  return {desc, std::move(out)};
}

inline TangentVector log(const ManifoldElement& x) {
  const GroupDescriptor& desc = x.descriptor();
  Eigen::VectorXd out(desc.dof());
  for (const auto& l : desc.leaves()) detail::leaf_log(l, x.data(), out);
  return {desc, std::move(out)};
}

inline ManifoldElement compose(const ManifoldElement& a, const ManifoldElement& b) {
  detail::check_same(a.descriptor(), b.descriptor(), "compose");
  Eigen::VectorXd out(a.data().size());
  for (const auto& l : a.descriptor().leaves()) detail::leaf_compose(l, a.data(), b.data(), out);
  return {a.descriptor(), std::move(out)};
}

inline ManifoldElement inverse(const ManifoldElement& a) {
  Eigen::VectorXd out(a.data().size());
  for (const auto& l : a.descriptor().leaves()) detail::leaf_inverse(l, a.data(), out);
  return {a.descriptor(), std::move(out)};
}

inline ManifoldElement boxplus(const ManifoldElement& x, const TangentVector& tau) {
  detail::check_same(x.descriptor(), tau.descriptor(), "boxplus");
  return compose(x, exp(x.descriptor(), tau));
}

inline TangentVector boxminus(const ManifoldElement& y, const ManifoldElement& x) {
  detail::check_same(y.descriptor(), x.descriptor(), "boxminus");
  return log(compose(inverse(x), y));
}

/// Right Jacobian J_r(tau) of Exp.
inline Eigen::MatrixXd right_jacobian(const GroupDescriptor& desc, const TangentVector& tau) {
  detail::check_same(desc, tau.descriptor(), "right_jacobian");
  const Eigen::VectorXd& t = tau.data();
  return detail::block_diag(desc, 1.0, [&](const detail::Leaf& l) {
    return detail::se2_jr_matrix(t.segment<3>(l.tangent_offset));
  });
}

inline Eigen::MatrixXd right_jacobian_inv(const GroupDescriptor& desc, const TangentVector& tau) {
  detail::check_same(desc, tau.descriptor(), "right_jacobian_inv");
  const Eigen::VectorXd& t = tau.data();
  return detail::block_diag(desc, 1.0, [&](const detail::Leaf& l) {
    return detail::se2_jr_inv_matrix(t.segment<3>(l.tangent_offset));
  });
}

/// d/dt J_r(xi(t))^-1 at xi = tau, xi' = tau_dot.
///
/// SO(2) and vector spaces have constant J_r, so this is zero. For SE(2) the closed-form
/// J_r^-1 is differentiated exactly by forward-mode dual numbers.
inline Eigen::MatrixXd djr_inv_dt(const GroupDescriptor& desc, const TangentVector& tau,
                                  const TangentVector& tau_dot) {
  detail::check_same(desc, tau.descriptor(), "djr_inv_dt");
  detail::check_same(desc, tau_dot.descriptor(), "djr_inv_dt");
  return detail::block_diag(desc, 0.0, [&](const detail::Leaf& l) {
    return detail::se2_djr_inv(tau.data().segment<3>(l.tangent_offset),
                               tau_dot.data().segment<3>(l.tangent_offset));
  });
}

/// Mixed second directional derivative D^2(J_r^-1)(tau)[a, b].
inline Eigen::MatrixXd d2jr_inv(const GroupDescriptor& desc, const TangentVector& tau,
                                const TangentVector& a, const TangentVector& b) {
  detail::check_same(desc, tau.descriptor(), "d2jr_inv");
  return detail::block_diag(desc, 0.0, [&](const detail::Leaf& l) {
    return detail::se2_d2jr_inv(tau.data().segment<3>(l.tangent_offset),
                                a.data().segment<3>(l.tangent_offset),
                                b.data().segment<3>(l.tangent_offset));
  });
}

/// Adjoint matrix Ad_x, so that x * Exp(tau) = Exp(Ad_x tau) * x.
inline Eigen::MatrixXd adjoint(const ManifoldElement& x) {
  const Eigen::VectorXd& d = x.data();
  return detail::block_diag(x.descriptor(), 1.0, [&](const detail::Leaf& l) {
    const int o = l.ambient_offset;
    double c = std::cos(d[o + 2]), s = std::sin(d[o + 2]);
    Eigen::Matrix3d A;
    A << c, -s, d[o + 1],  //
        s, c, -d[o],       //
        0.0, 0.0, 1.0;
    return A;
  });
}

/// Small adjoint ad_tau (Lie bracket [tau, .]); zero for abelian leaves.
inline Eigen::MatrixXd small_adjoint(const TangentVector& tau) {
  const Eigen::VectorXd& t = tau.data();
  return detail::block_diag(tau.descriptor(), 0.0, [&](const detail::Leaf& l) {
    const int o = l.tangent_offset;
    Eigen::Matrix3d A;
    A << 0.0, -t[o + 2], t[o + 1],  //
        t[o + 2], 0.0, -t[o],       //
        0.0, 0.0, 0.0;
    return A;
  });
}

/// Generalized linear interpolation x_i (+) alpha * (x_ip1 (-) x_i); alpha outside [0, 1]
/// extrapolates.
inline ManifoldElement glerp(const ManifoldElement& x_i, const ManifoldElement& x_ip1,
                             double alpha) {
  detail::check_same(x_i.descriptor(), x_ip1.descriptor(), "glerp");
  return boxplus(x_i, alpha * boxminus(x_ip1, x_i));
}

}  // namespace ctraj
