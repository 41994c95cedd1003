#pragma once

// Batch MAP estimation over a factor graph of manifold-valued variables.
//
// Gauss-Newton with Levenberg-Marquardt damping on rejected steps. The normal equations
// are assembled into a fixed sparse layout (one dense block per pair of variables that
// share a factor, lower triangle only) in factor order, so the numbers are independent of
// how many threads evaluate the factors. They are solved with a sparse LDL^T
// factorization under an AMD fill-reducing ordering.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ctraj/errors.hpp"
#include "ctraj/factors.hpp"

namespace ctraj {

class Problem {
 public:
  VariableId add_variable(ManifoldElement initial) {
    values_.push_back(std::move(initial));
    fixed_.push_back(false);
    return values_.size() - 1;
  }
  void add_factor(std::shared_ptr<const Factor> f) {
    for (VariableId k : f->keys())
      if (k >= values_.size()) throw InvalidArgument("Problem: factor binds an unknown variable");
    factors_.push_back(std::move(f));
  }
  void set_fixed(VariableId id, bool fixed = true) { fixed_.at(id) = fixed; }
  bool is_fixed(VariableId id) const { return fixed_.at(id); }

  const Values& values() const { return values_; }
  Values& mutable_values() { return values_; }
  const std::vector<std::shared_ptr<const Factor>>& factors() const { return factors_; }
  std::size_t size() const { return values_.size(); }

  double cost() const { return cost(values_); }
  double cost(const Values& values) const {
    double c = 0.0;
    for (const auto& f : factors_) c += f->cost(values);
    return c;
  }

 private:
  Values values_;
  std::vector<bool> fixed_;
  std::vector<std::shared_ptr<const Factor>> factors_;
};

struct SolverOptions {
  int max_iterations = 50;
  double cost_tolerance = 1e-10;
  double step_tolerance = 1e-10;
  double lambda_initial = 1e-4;
  double lambda_scale = 10.0;
  double lambda_max = 1e12;
  int threads = 1;
};

struct SolveReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::string termination;
  std::vector<double> cost_trace;  // cost after each accepted iteration
  double wall_time_s = 0.0;
};

class NoConvergence : public std::runtime_error {
 public:
  NoConvergence(const std::string& what, SolveReport report)
      : std::runtime_error(what), report_(std::move(report)) {}
  const SolveReport& report() const { return report_; }

 private:
  SolveReport report_;
};

/// Sparse symmetric system H delta = b in a fixed block layout.
class NormalEquations {
 public:
  NormalEquations() = default;

  /// Builds the layout from variable tangent dims (0 for fixed variables) and the
  /// variable cliques of the factors.
  NormalEquations(std::vector<int> block_dims, const std::vector<std::vector<VariableId>>& cliques)
      : dims_(std::move(block_dims)) {
    offsets_.resize(dims_.size());
    int n = 0;
    for (std::size_t v = 0; v < dims_.size(); ++v) {
      offsets_[v] = n;
      n += dims_[v];
    }
    dim_ = n;
    std::vector<std::pair<VariableId, VariableId>> pairs;
    for (std::size_t v = 0; v < dims_.size(); ++v)
      if (dims_[v] > 0) pairs.emplace_back(v, v);
    for (const auto& c : cliques)
      for (VariableId a : c)
        for (VariableId b : c)
          if (a > b && dims_[a] > 0 && dims_[b] > 0) pairs.emplace_back(a, b);
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

    std::vector<Eigen::Triplet<double>> trip;
    for (auto [a, b] : pairs)
      for (int c = 0; c < dims_[b]; ++c)
        for (int r = 0; r < dims_[a]; ++r) trip.emplace_back(offsets_[a] + r, offsets_[b] + c, 0.0);
    H_.resize(dim_, dim_);
    H_.setFromTriplets(trip.begin(), trip.end());
    H_.makeCompressed();
    // Position of each block's first row in every one of its columns.
    for (auto [a, b] : pairs) {
      std::vector<int> starts(static_cast<std::size_t>(dims_[b]));
      for (int c = 0; c < dims_[b]; ++c) {
        const int col = offsets_[b] + c;
        const int* begin = H_.innerIndexPtr() + H_.outerIndexPtr()[col];
        const int* end = H_.innerIndexPtr() + H_.outerIndexPtr()[col + 1];
        starts[static_cast<std::size_t>(c)] =
            static_cast<int>(std::lower_bound(begin, end, offsets_[a]) - H_.innerIndexPtr());
      }
      block_index_[{a, b}] = starts;
    }
    diag_pos_.resize(static_cast<std::size_t>(dim_));
    for (int j = 0; j < dim_; ++j) {
      const int* begin = H_.innerIndexPtr() + H_.outerIndexPtr()[j];
      const int* end = H_.innerIndexPtr() + H_.outerIndexPtr()[j + 1];
      diag_pos_[static_cast<std::size_t>(j)] = static_cast<int>(std::lower_bound(begin, end, j) - H_.innerIndexPtr());
    }
    b_ = Eigen::VectorXd::Zero(dim_);
  }

  int dim() const { return dim_; }
  int offset(VariableId v) const { return offsets_[v]; }
  int block_dim(VariableId v) const { return dims_[v]; }
  std::size_t blocks() const { return dims_.size(); }

  void set_zero() {
    std::fill(H_.valuePtr(), H_.valuePtr() + H_.nonZeros(), 0.0);
    b_.setZero();
  }

  /// Adds J^T J and -J^T e for one whitened factor with per-key Jacobian column blocks.
  void accumulate(const std::vector<VariableId>& keys, const Eigen::VectorXd& e, const Eigen::MatrixXd& J,
                  const std::vector<int>& key_cols) {
    for (std::size_t p = 0; p < keys.size(); ++p) {
      const VariableId a = keys[p];
      if (dims_[a] == 0) continue;
      auto Ja = J.middleCols(key_cols[p], dims_[a]);
      b_.segment(offsets_[a], dims_[a]).noalias() -= Ja.transpose() * e;
      for (std::size_t q = 0; q < keys.size(); ++q) {
        const VariableId b = keys[q];
        if (dims_[b] == 0 || a < b) continue;
        auto Jb = J.middleCols(key_cols[q], dims_[b]);
        add_block(a, b, Ja.transpose() * Jb);
      }
    }
  }

  void add_block(VariableId a, VariableId b, const Eigen::MatrixXd& blk) {
    const auto& starts = block_index_.at({a, b});
    double* v = H_.valuePtr();
    for (int c = 0; c < dims_[b]; ++c) {
      double* col = v + starts[static_cast<std::size_t>(c)];
      for (int r = 0; r < dims_[a]; ++r) col[r] += blk(r, c);
    }
  }

  /// Lower triangle of H (diagonal blocks are stored in full).
  const Eigen::SparseMatrix<double>& H() const { return H_; }
  Eigen::SparseMatrix<double>& mutable_H() { return H_; }
  const Eigen::VectorXd& b() const { return b_; }
  Eigen::VectorXd& mutable_b() { return b_; }
  const std::vector<int>& diagonal_positions() const { return diag_pos_; }
  bool has_block(VariableId a, VariableId b) const { return block_index_.count({a, b}) > 0; }

  /// Block of the layout as a dense matrix (a >= b).
  Eigen::MatrixXd block(VariableId a, VariableId b) const {
    const auto& starts = block_index_.at({a, b});
    Eigen::MatrixXd out(dims_[a], dims_[b]);
    for (int c = 0; c < dims_[b]; ++c)
      for (int r = 0; r < dims_[a]; ++r) out(r, c) = H_.valuePtr()[starts[static_cast<std::size_t>(c)] + r];
    return out;
  }

  /// Block index owning scalar row/column i.
  VariableId block_of(int i) const {
    auto it = std::upper_bound(offsets_.begin(), offsets_.end(), i);
    VariableId v = static_cast<VariableId>(it - offsets_.begin()) - 1;
    while (dims_[v] == 0) --v;
    return v;
  }

 private:
  std::vector<int> dims_;
  std::vector<int> offsets_;
  int dim_ = 0;
  Eigen::SparseMatrix<double> H_;
  Eigen::VectorXd b_;
  std::map<std::pair<VariableId, VariableId>, std::vector<int>> block_index_;
  std::vector<int> diag_pos_;
};

/// Sparse LDL^T of a NormalEquations layout, with rank-deficiency detection and selected
/// inversion (entries of H^-1 on the factor's sparsity pattern).
class Factorization {
 public:
  using Ldlt = Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>>;

  explicit Factorization(const NormalEquations& ne) : ne_(&ne) { ldlt_.analyzePattern(ne.H()); }

  /// Factorizes H; throws RankDeficient naming blocks with non-positive or negligible pivots.
  void factorize(const Eigen::SparseMatrix<double>& H) {
    ldlt_.factorize(H);
    const Eigen::VectorXd& D = ldlt_.vectorD();
    double dmax = 0.0;
    for (Eigen::Index i = 0; i < D.size(); ++i)
      if (std::isfinite(D[i])) dmax = std::max(dmax, std::abs(D[i]));
    const double tol = 1e-13 * std::max(dmax, 1e-300);
    std::vector<std::size_t> bad;
    // Blocks with an all-zero diagonal are unconstrained outright.
    for (int i = 0; i < H.cols(); ++i) {
      bool zero = true;
      for (Eigen::SparseMatrix<double>::InnerIterator it(H, i); it; ++it) zero = zero && it.value() == 0.0;
      if (zero) bad.push_back(ne_->block_of(i));
    }
    if (ldlt_.info() == Eigen::Success) {
      const auto& perm = ldlt_.permutationP().indices();
      for (Eigen::Index i = 0; i < D.size(); ++i) {
        double pivot = D[perm[i]];
        if (!std::isfinite(pivot) || !(pivot > tol)) bad.push_back(ne_->block_of(static_cast<int>(i)));
      }
    } else if (bad.empty()) {
      throw RankDeficient("normal equations are not positive definite", {});
    }
    if (!bad.empty()) {
      std::sort(bad.begin(), bad.end());
      bad.erase(std::unique(bad.begin(), bad.end()), bad.end());
      std::string msg = "normal equations are rank deficient; unconstrained variable blocks:";
      for (auto v : bad) msg += " " + std::to_string(v);
      throw RankDeficient(msg, bad);
    }
    selected_.reset();
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const { return ldlt_.solve(b); }

  /// Covariance block (H^-1)_{ab}.
  Eigen::MatrixXd covariance_block(VariableId a, VariableId b) {
    const int oa = ne_->offset(a), ob = ne_->offset(b), da = ne_->block_dim(a), db = ne_->block_dim(b);
    Eigen::MatrixXd out(da, db);
    if (!selected_) compute_selected_inverse();
    const auto& perm = ldlt_.permutationP().indices();
    bool inside = true;
    for (int c = 0; c < db && inside; ++c)
      for (int r = 0; r < da && inside; ++r) {
        auto v = selected_value(perm[oa + r], perm[ob + c]);
        if (!v) inside = false;
        else out(r, c) = *v;
      }
    if (inside) return out;
    // Outside the factor's pattern: solve for the needed columns.
    Eigen::MatrixXd E = Eigen::MatrixXd::Zero(ne_->dim(), db);
    for (int c = 0; c < db; ++c) E(ob + c, c) = 1.0;
    Eigen::MatrixXd X = ldlt_.solve(E);
    return X.middleRows(oa, da);
  }

  const Ldlt& ldlt() const { return ldlt_; }

 private:
  // Takahashi recurrences on the permuted factor: Z = P H^-1 P^T with
  //   Z_jj = 1/D_j - sum_k L_kj Z_kj,  Z_ij = -sum_k L_kj Z_ik  (k > j in column j's pattern).
  void compute_selected_inverse() {
    const auto& L = ldlt_.matrixL().nestedExpression();
    const Eigen::VectorXd& D = ldlt_.vectorD();
    const int n = static_cast<int>(L.cols());
    Lcol_ = L.outerIndexPtr();
    Lrow_ = L.innerIndexPtr();
    selected_.emplace(static_cast<std::size_t>(L.nonZeros()), 0.0);
    diag_.assign(static_cast<std::size_t>(n), 0.0);
    const double* Lval = L.valuePtr();
    std::vector<double>& Z = *selected_;
    for (int j = n - 1; j >= 0; --j) {
      const int begin = Lcol_[j], end = Lcol_[j + 1];
      // Off-diagonal entries of column j, processed in any order (they only read columns > j).
      for (int p = begin; p < end; ++p) {
        const int i = Lrow_[p];
        if (i == j) continue;
        double s = 0.0;
        for (int q = begin; q < end; ++q) {
          const int k = Lrow_[q];
          if (k == j) continue;
          s += Lval[q] * lookup(i, k);
        }
        Z[static_cast<std::size_t>(p)] = -s;
      }
      double s = 0.0;
      for (int q = begin; q < end; ++q) {
        const int k = Lrow_[q];
        if (k == j) continue;
        s += Lval[q] * Z[static_cast<std::size_t>(q)];
      }
      diag_[static_cast<std::size_t>(j)] = 1.0 / D[j] - s;
    }
  }

  double lookup(int i, int k) const {
    auto v = selected_value(i, k);
    return *v;  // always inside the pattern during the recurrence
  }

  std::optional<double> selected_value(int i, int k) const {
    if (i == k) return diag_[static_cast<std::size_t>(i)];
    if (i < k) std::swap(i, k);
    const int* begin = Lrow_ + Lcol_[k];
    const int* end = Lrow_ + Lcol_[k + 1];
    const int* it = std::lower_bound(begin, end, i);
    if (it == end || *it != i) return std::nullopt;
    return (*selected_)[static_cast<std::size_t>(it - Lrow_)];
  }

  const NormalEquations* ne_;
  Ldlt ldlt_;
  std::optional<std::vector<double>> selected_;
  std::vector<double> diag_;
  const int* Lcol_ = nullptr;
  const int* Lrow_ = nullptr;
};

/// Solves H delta = b for a standalone system with the given block partition.
inline Eigen::VectorXd solve_normal_equations(const Eigen::SparseMatrix<double>& H, const Eigen::VectorXd& b,
                                              const std::vector<int>& block_dims) {
  std::vector<std::vector<VariableId>> cliques;
  // Every structural non-zero couples its two blocks.
  std::vector<int> owner;
  for (std::size_t v = 0; v < block_dims.size(); ++v)
    for (int r = 0; r < block_dims[v]; ++r) owner.push_back(static_cast<int>(v));
  if (static_cast<Eigen::Index>(owner.size()) != H.rows()) throw InvalidArgument("solve_normal_equations: block sizes do not cover H");
  for (int c = 0; c < H.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator it(H, c); it; ++it)
      if (it.value() != 0.0)
        cliques.push_back({static_cast<VariableId>(owner[static_cast<std::size_t>(it.row())]),
                           static_cast<VariableId>(owner[static_cast<std::size_t>(c)])});
  NormalEquations ne(block_dims, cliques);
  Eigen::SparseMatrix<double> lower = H.triangularView<Eigen::Lower>();
  Eigen::SparseMatrix<double> full_lower = ne.H();
  for (int c = 0; c < lower.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator it(lower, c); it; ++it)
      full_lower.coeffRef(it.row(), it.col()) = it.value();
  Factorization f(ne);
  f.factorize(full_lower);
  return f.solve(b);
}

namespace detail {

struct Linearization {
  std::vector<Eigen::VectorXd> e;
  std::vector<Eigen::MatrixXd> J;
  std::vector<std::string> errors;
};

inline void linearize_range(const Problem& p, const Values& values, Linearization& out, std::size_t begin,
                            std::size_t end) {
  const auto& fs = p.factors();
  for (std::size_t i = begin; i < end; ++i) {
    try {
      fs[i]->linearize(values, out.e[i], &out.J[i]);
    } catch (const std::exception& ex) {
      out.errors[i] = std::string("factor ") + std::to_string(i) + " (" + to_string(fs[i]->kind()) + "): " + ex.what();
    }
  }
}

}  // namespace detail

/// Evaluates all factors (in parallel when threads > 1) and assembles them in factor order.
inline double linearize(const Problem& p, const Values& values, NormalEquations& ne, int threads = 1) {
  const std::size_t n = p.factors().size();
  detail::Linearization lin{std::vector<Eigen::VectorXd>(n), std::vector<Eigen::MatrixXd>(n),
                            std::vector<std::string>(n)};
  threads = std::max(1, std::min<int>(threads, static_cast<int>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    detail::linearize_range(p, values, lin, 0, n);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
      std::size_t b = n * static_cast<std::size_t>(t) / static_cast<std::size_t>(threads);
      std::size_t e = n * static_cast<std::size_t>(t + 1) / static_cast<std::size_t>(threads);
      pool.emplace_back([&, b, e] { detail::linearize_range(p, values, lin, b, e); });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& msg : lin.errors)
    if (!msg.empty()) throw InvalidArgument("cannot linearize " + msg);

  ne.set_zero();
  double cost = 0.0;
  std::vector<int> cols;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& keys = p.factors()[i]->keys();
    cols.assign(keys.size(), 0);
    int c = 0;
    for (std::size_t k = 0; k < keys.size(); ++k) {
      cols[k] = c;
      c += values[keys[k]].descriptor().dof();
    }
    ne.accumulate(keys, lin.e[i], lin.J[i], cols);
    cost += lin.e[i].squaredNorm();
  }
  return cost;
}

inline NormalEquations make_normal_equations(const Problem& p) {
  std::vector<int> dims;
  for (VariableId v = 0; v < p.size(); ++v) dims.push_back(p.is_fixed(v) ? 0 : p.values()[v].descriptor().dof());
  std::vector<std::vector<VariableId>> cliques;
  for (const auto& f : p.factors()) cliques.push_back(f->keys());
  return NormalEquations(std::move(dims), cliques);
}

inline Values retract(const Problem& p, const Values& values, const NormalEquations& ne, const Eigen::VectorXd& delta) {
  Values out = values;
  for (VariableId v = 0; v < values.size(); ++v) {
    if (p.is_fixed(v)) continue;
    const GroupDescriptor& d = values[v].descriptor();
    out[v] = boxplus(values[v], TangentVector(d, delta.segment(ne.offset(v), ne.block_dim(v))));
  }
  return out;
}

/// Gauss-Newton with Levenberg-Marquardt damping (H + lambda diag(H)) applied after a
/// rejected step. lambda starts at zero, becomes lambda_initial on the first rejection,
/// and is scaled by lambda_scale on each further rejection / divided on acceptance
/// (falling back to zero once below lambda_initial).
inline SolveReport optimize(Problem& p, const SolverOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  SolveReport rep;
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  std::vector<bool> touched(p.size(), false);
  for (const auto& f : p.factors())
    for (VariableId k : f->keys()) touched[k] = true;
  for (VariableId v = 0; v < p.size(); ++v)
    if (!p.is_fixed(v) && !touched[v])
      throw RankDeficient("variable " + std::to_string(v) + " is not bound by any factor", {v});
  NormalEquations ne = make_normal_equations(p);
  Factorization fact(ne);
  // Candidates are linearized directly; on acceptance (the common case) that
  // linearization is reused for the next iteration.
  NormalEquations cand = ne;
  Values values = p.values();
  double cost = linearize(p, values, ne, opt.threads);
  rep.initial_cost = cost;
  double lambda = 0.0;
  rep.termination = "max_iterations";
  while (rep.iterations < opt.max_iterations) {
    const Eigen::SparseMatrix<double> H0 = ne.H();
    bool accepted = false;
    bool small_step = false;
    Values candidate;
    double new_cost = 0.0;
    // Only the first trial step of an iteration can signal convergence; steps shrunk by
    // rejections within the iteration are damping, not progress.
    bool first_trial = true;
    while (!accepted) {
      Eigen::SparseMatrix<double> H = H0;
      if (lambda > 0.0)
        for (int pos : ne.diagonal_positions()) H.valuePtr()[pos] *= 1.0 + lambda;
      fact.factorize(H);
      Eigen::VectorXd delta = fact.solve(ne.b());
      if (!delta.allFinite()) throw RankDeficient("normal equations produced a non-finite step", {});
      if (first_trial && delta.norm() < opt.step_tolerance) {
        small_step = true;
        break;
      }
      first_trial = false;
      candidate = retract(p, values, ne, delta);
      new_cost = linearize(p, candidate, cand, opt.threads);
      if (std::isfinite(new_cost) && new_cost <= cost) {
        accepted = true;
      } else {
        lambda = lambda == 0.0 ? opt.lambda_initial : lambda * opt.lambda_scale;
        if (lambda > opt.lambda_max) {
          p.mutable_values() = values;
          rep.final_cost = cost;
          rep.termination = "diverged";
          rep.wall_time_s = elapsed();
          throw NoConvergence("Levenberg-Marquardt damping exceeded its limit", rep);
        }
      }
    }
    if (small_step) {
      rep.termination = "step_tolerance";
      break;
    }
    ++rep.iterations;
    const double rel = (cost - new_cost) / std::max(cost, 1e-300);
    values = std::move(candidate);
    rep.cost_trace.push_back(new_cost);
    lambda = lambda / opt.lambda_scale;
    if (lambda < opt.lambda_initial) lambda = 0.0;
    if (rel < opt.cost_tolerance || new_cost == 0.0) {
      cost = new_cost;
      rep.termination = "cost_tolerance";
      break;
    }
    cost = new_cost;
    std::swap(ne, cand);
  }
  p.mutable_values() = values;
  rep.final_cost = p.cost(values);
  rep.wall_time_s = elapsed();
  return rep;
}

/// Laplace covariance of the current estimate: H^-1 blocks at the problem's values.
class CovarianceRecovery {
 public:
  explicit CovarianceRecovery(const Problem& p, int threads = 1)
      : ne_(make_normal_equations(p)), fact_(std::make_unique<Factorization>(ne_)) {
    linearize(p, p.values(), ne_, threads);
    fact_->factorize(ne_.H());
  }
  CovarianceRecovery(const CovarianceRecovery&) = delete;
  CovarianceRecovery& operator=(const CovarianceRecovery&) = delete;

  Eigen::MatrixXd block(VariableId a, VariableId b) { return fact_->covariance_block(a, b); }

  /// Joint covariance of the listed (free) variables, in listed order.
  Eigen::MatrixXd joint(const std::vector<VariableId>& ids) {
    int n = 0;
    for (auto v : ids) n += ne_.block_dim(v);
    Eigen::MatrixXd out(n, n);
    int r = 0;
    for (auto a : ids) {
      int c = 0;
      for (auto b : ids) {
        out.block(r, c, ne_.block_dim(a), ne_.block_dim(b)) = block(a, b);
        c += ne_.block_dim(b);
      }
      r += ne_.block_dim(a);
    }
    return 0.5 * (out + out.transpose());
  }

 private:
  NormalEquations ne_;
  std::unique_ptr<Factorization> fact_;
};

inline Eigen::MatrixXd recover_covariance(const Problem& p, const std::vector<VariableId>& ids) {
  for (auto v : ids)
    if (p.is_fixed(v)) throw InvalidArgument("recover_covariance: variable " + std::to_string(v) + " is fixed");
  CovarianceRecovery rec(p);
  return rec.joint(ids);
}

}  // namespace ctraj
