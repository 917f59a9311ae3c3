#pragma once

#include <chrono>
#include <optional>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "qpdg/linear_solve.hpp"
#include "qpdg/swip_tensor.hpp"

namespace qpdg {

/// u = sum_k meso.col(k) (x) cell.col(k).
struct SeparatedTensor {
  Mat meso;  ///< #I x n
  Mat cell;  ///< dim V_h(Y) x n

  SeparatedTensor() = default;
  SeparatedTensor(Index n_cells, Index n_dofs) : meso(n_cells, 0), cell(n_dofs, 0) {}

  Index rank() const { return meso.cols(); }
  Mat to_dense() const { return meso * cell.transpose(); }

  void append(const Vec& ui, const Vec& uy) {
    meso.conservativeResize(Eigen::NoChange, meso.cols() + 1);
    cell.conservativeResize(Eigen::NoChange, cell.cols() + 1);
    meso.col(meso.cols() - 1) = ui;
    cell.col(cell.cols() - 1) = uy;
  }

  /// Remove terms with ||u^I_k|| ||u^Y_k|| below rel * ||u||_F.
  void prune(double rel = 1e-14) {
    const double total = to_dense().norm();
    std::vector<Index> keep;
    for (Index k = 0; k < rank(); ++k)
      if (meso.col(k).norm() * cell.col(k).norm() > rel * total) keep.push_back(k);
    if (static_cast<Index>(keep.size()) == rank()) return;
    Mat m(meso.rows(), static_cast<Index>(keep.size())), c(cell.rows(), static_cast<Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
      m.col(static_cast<Index>(k)) = meso.col(keep[k]);
      c.col(static_cast<Index>(k)) = cell.col(keep[k]);
    }
    meso = std::move(m);
    cell = std::move(c);
  }
};

/// One record per greedy step.
struct SolveStep {
  Index rank = 0;
  double residual = 0.0;
  double energy = 0.0;  ///< J(u_n) = a(u_n, u_n) / 2 - b(u_n)
  int als_iterations = 0;
  double seconds = 0.0;  ///< cumulative wall time
  double meso_orthogonality = 0.0;
  double cell_orthogonality = 0.0;
};

struct SolveTrace {
  std::vector<SolveStep> steps;
  std::vector<double> energy_log;  ///< J after every ALS sweep and every update
  bool converged = false;

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "rank,residual,J,als_iters,seconds\n";
    for (const auto& s : steps)
      os << s.rank << ',' << s.residual << ',' << s.energy << ',' << s.als_iterations << ',' << s.seconds << '\n';
    return os.str();
  }
};

struct GreedyConfig {
  double tolerance = 1e-3;
  Index max_rank = 64;
  int als_max_iterations = 10;
  double als_tolerance = 1e-4;  ///< relative change of J over one sweep
  std::uint64_t seed = 0;
  bool update_meso = true;
  bool update_cell = true;
  double energy_slack = 1e-12;  ///< allowed relative J increase before aborting
  double time_limit = 0.0;      ///< wall seconds after which the run stops unconverged; 0 for none
};

/// The operator, rhs and the precomputed factor stacks shared by all the
/// reduced problems of one greedy run.
class TensorSystem {
 public:
  TensorSystem(const SeparatedOperator& op, const SeparatedRHS& rhs)
      : TensorSystem(op, rhs.to_dense(op.n_cells(), op.n_dofs())) {}

  TensorSystem(const SeparatedOperator& op, Mat rhs) : op_(op.combined()), b_(std::move(rhs)) {
    if (!op.jump_penalties.empty()) {
      smooth_ = op.restricted({FormPart::diffusion, FormPart::consistency, FormPart::consistency_transpose,
                               FormPart::mean})
                    .combined();
      jumps_ = op.jump_penalties;
    } else {
      smooth_ = op_;
    }
    if (b_.rows() != op_.n_cells() || b_.cols() != op_.n_dofs())
      throw std::invalid_argument("TensorSystem: rhs dimensions do not match the operator");
    if (op_.terms().empty()) throw std::invalid_argument("TensorSystem: empty operator");
    if (op_.rank_one_terms().size() > 1) throw std::invalid_argument("TensorSystem: at most one rank-one term");
    std::vector<const SpMat*> mm, cc;
    for (const auto& t : op_.terms()) {
      mm.push_back(&t.meso);
      cc.push_back(&t.cell);
    }
    meso_stack_.emplace(mm);
    cell_stack_.emplace(cc);
    if (!op_.rank_one_terms().empty()) {
      g_meso_ = op_.rank_one_terms().front().meso;
      g_cell_ = op_.rank_one_terms().front().cell;
    } else {
      g_meso_ = Vec::Zero(op_.n_cells());
      g_cell_ = Vec::Zero(op_.n_dofs());
    }
  }

  const SeparatedOperator& op() const { return op_; }
  const Mat& rhs() const { return b_; }
  Index n_cells() const { return op_.n_cells(); }
  Index n_dofs() const { return op_.n_dofs(); }
  Index term_count() const { return static_cast<Index>(op_.terms().size()); }

  /// A u, the penalty part from explicit jumps when available.
  Mat apply(const Mat& u) const {
    Mat out = smooth_.apply(u);
    add_jump_penalty(jumps_, u, out);
    return out;
  }
  Mat residual(const Mat& u) const { return b_ - apply(u); }

  /// J(u) = a(u, u) / 2 - <b, u>, with the penalty part evaluated from jumps.
  double energy(const Mat& u) const {
    const double a = smooth_.form(u, u) + jump_penalty_form(jumps_, u);
    return 0.5 * a - (u.array() * b_.array()).sum();
  }

  /// Solve for the meso factors of sum_k uI_k (x) F_k with F fixed (dim V_h(Y) x n),
  /// rhs contracted as rhs * F.
  Mat solve_meso(const Mat& fixed_cell, const Mat& rhs) const {
    return solve_block(fixed_cell, rhs * fixed_cell, true);
  }
  /// Mirror image: cell factors for fixed meso factors (#I x n), rhs^T * F.
  Mat solve_cell(const Mat& fixed_meso, const Mat& rhs) const {
    return solve_block(fixed_meso, rhs.transpose() * fixed_meso, false);
  }

 private:
  Mat solve_block(const Mat& fixed, const Mat& contracted, bool meso_unknown) const {
    const Index nb = fixed.cols();
    const Index n = meso_unknown ? n_cells() : n_dofs();
    std::vector<Mat> coeff;
    coeff.reserve(op_.terms().size());
    for (const auto& t : op_.terms()) {
      const SpMat& a = meso_unknown ? t.cell : t.meso;
      coeff.push_back(fixed.transpose() * (a * fixed));
    }
    const PatternStack& stack = meso_unknown ? *meso_stack_ : *cell_stack_;
    const SpMat s = nb == 1 ? stack.combine(gather_scalars(coeff)) : stack.block_combine(coeff);
    const Vec& g_fixed = meso_unknown ? g_cell_ : g_meso_;
    const Vec& g_free = meso_unknown ? g_meso_ : g_cell_;
    Vec h = Vec::Zero(nb * n);
    if (g_fixed.squaredNorm() > 0.0)
      for (Index l = 0; l < nb; ++l) h.segment(l * n, n) = g_fixed.dot(fixed.col(l)) * g_free;
    const Vec rhs = Vec::Map(contracted.data(), contracted.size());
    RankOneSpdSolver::Options opt;
    opt.block_size = n;
    RankOneSpdSolver solver(s, h, opt);
    const Vec x = solver.solve(rhs);
    return Mat::Map(x.data(), n, nb);
  }

  static Vec gather_scalars(const std::vector<Mat>& coeff) {
    Vec w(static_cast<Index>(coeff.size()));
    for (std::size_t k = 0; k < coeff.size(); ++k) w(static_cast<Index>(k)) = coeff[k](0, 0);
    return w;
  }

  SeparatedOperator op_;
  SeparatedOperator smooth_;  ///< every part except the penalty
  std::vector<JumpPenalty> jumps_;
  Mat b_;
  std::optional<PatternStack> meso_stack_, cell_stack_;
  Vec g_meso_, g_cell_;
};

/// Result of one alternating minimisation.
struct RankOneCorrection {
  Vec meso;
  Vec cell;
  int iterations = 0;
  std::vector<double> energy;  ///< J(u_prev + correction) after each sweep
};

/// min over v = vI (x) vY of J(u_prev + v), by alternating exact minimisation
/// over each factor. `r` is the residual b - A u_prev and `j_prev` = J(u_prev);
/// `u_prev` is in matrix form.
inline RankOneCorrection als_rank_one(const TensorSystem& sys, const Mat& u_prev, const Mat& r, double j_prev,
                                      int max_iters, double rel_tol, std::uint64_t seed) {
  RankOneCorrection out;
  const double rn = r.norm();
  Vec vi = Vec::Ones(sys.n_cells());
  Vec vy = Vec::Zero(sys.n_dofs());
  if (rn == 0.0) {
    out.meso = Vec::Zero(sys.n_cells());
    out.cell = vy;
    out.energy.push_back(j_prev);
    return out;
  }
  bool meso_first = false;
  const Vec start_rhs = r.transpose() * vi;
  if (start_rhs.norm() <= 1e-12 * rn * vi.norm()) {
    meso_first = true;
    for (Index d = 0; d < vy.size(); ++d) vy(d) = uniform01(seed ^ 0x9e3779b97f4a7c15ULL, static_cast<std::uint64_t>(d)) - 0.5;
    vy.normalize();
  }
  double j_old = j_prev;
  for (int it = 0; it < std::max(1, max_iters); ++it) {
    if (!meso_first || it > 0) vy = sys.solve_cell(vi, r).col(0);
    vi = sys.solve_meso(vy, r).col(0);
    const double j_new = sys.energy(u_prev + vi * vy.transpose());
    out.energy.push_back(j_new);
    out.iterations = it + 1;
    if (std::abs(j_new - j_old) <= rel_tol * std::abs(j_new - j_prev)) break;
    j_old = j_new;
  }
  const double s = vi.norm();
  if (s > 0.0) {
    vi /= s;
    vy *= s;
  }
  out.meso = vi;
  out.cell = vy;
  return out;
}

namespace detail {
/// Orthonormal basis of the span of the columns of f, with numerically
/// dependent directions (relative singular value below tol) dropped.
inline Mat orthonormal_basis(const Mat& f, double tol = 1e-8) {
  const Vec norms = f.colwise().norm().transpose();
  if ((norms.array() == 0.0).any()) throw SolverError("orthonormal_basis: zero factor");
  const Mat unit = f * norms.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Mat> qr(unit);
  qr.setThreshold(tol);
  const Index r = std::max<Index>(1, qr.rank());
  Mat q = qr.householderQ() * Mat::Identity(f.rows(), r);
  return q;
}
}  // namespace detail

/// Galerkin projection onto R^I (x) span{u^Y_k}: all meso factors at once.
inline SeparatedTensor update_meso(const TensorSystem& sys, SeparatedTensor u) {
  if (u.rank() == 0) return u;
  u.cell = detail::orthonormal_basis(u.cell);
  u.meso = sys.solve_meso(u.cell, sys.rhs());
  return u;
}

/// Galerkin projection onto span{u^I_k} (x) V_h(Y): all cell factors at once.
inline SeparatedTensor update_cell(const TensorSystem& sys, SeparatedTensor u) {
  if (u.rank() == 0) return u;
  u.meso = detail::orthonormal_basis(u.meso);
  u.cell = sys.solve_cell(u.meso, sys.rhs());
  return u;
}

/// ||b - A u|| / ||b|| in the Euclidean norm of nodal coefficients; the
/// absolute residual when b = 0.
inline double relative_residual(const TensorSystem& sys, const SeparatedTensor& u) {
  const double bn = sys.rhs().norm();
  const double rn = sys.residual(u.to_dense()).norm();
  return bn > 0.0 ? rn / bn : rn;
}

struct GreedyResult {
  SeparatedTensor solution;
  SolveTrace trace;
  bool converged = false;
};

/// Greedy rank-one corrections with alternating minimisation, each followed by
/// the meso and cell Galerkin updates, until the relative residual drops to
/// the tolerance.
inline GreedyResult greedy_solve(const TensorSystem& sys, const GreedyConfig& cfg) {
  if (!(cfg.tolerance >= 0.0)) throw std::invalid_argument("greedy_solve: tolerance must be non-negative");
  if (cfg.max_rank < 1) throw std::invalid_argument("greedy_solve: max_rank must be positive");
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  GreedyResult res;
  res.solution = SeparatedTensor(sys.n_cells(), sys.n_dofs());
  const Mat& b = sys.rhs();
  const double bn = b.norm();
  if (bn == 0.0) {
    res.converged = res.trace.converged = true;
    return res;
  }
  Mat u = Mat::Zero(sys.n_cells(), sys.n_dofs());
  Mat r = b;
  double j = 0.0;
  res.trace.energy_log.push_back(j);

  auto record = [&](double j_new, const char* what) {
    if (j_new > j + cfg.energy_slack * std::max(std::abs(j), std::abs(j_new)))
      throw SolverError(std::string("greedy_solve: energy increased during ") + what + " (" + fmt_double(j) +
                        " -> " + fmt_double(j_new) + "); the operator is not positive definite (penalty too small?)");
    res.trace.energy_log.push_back(j_new);
    j = j_new;
  };
  auto refresh = [&](const SeparatedTensor& s) {
    u = s.to_dense();
    r = sys.residual(u);
    return sys.energy(u);
  };

  for (Index n = 1; n <= cfg.max_rank; ++n) {
    SolveStep step;
    const auto corr = als_rank_one(sys, u, r, j, cfg.als_max_iterations, cfg.als_tolerance,
                                   mix64(cfg.seed ^ static_cast<std::uint64_t>(n)));
    step.als_iterations = corr.iterations;
    for (double e : corr.energy) record(e, "alternating minimisation");
    if (corr.meso.norm() * corr.cell.norm() == 0.0) break;
    res.solution.append(corr.meso, corr.cell);
    record(refresh(res.solution), "rank-one correction");

    if (cfg.update_meso) {
      res.solution = update_meso(sys, std::move(res.solution));
      record(refresh(res.solution), "meso update");
      const double ref = (b * res.solution.cell).norm();
      step.meso_orthogonality = ref > 0.0 ? (r * res.solution.cell).norm() / ref : 0.0;
    }
    if (cfg.update_cell) {
      res.solution = update_cell(sys, std::move(res.solution));
      record(refresh(res.solution), "cell update");
      const double ref = (b.transpose() * res.solution.meso).norm();
      step.cell_orthogonality = ref > 0.0 ? (r.transpose() * res.solution.meso).norm() / ref : 0.0;
    }
    res.solution.prune();

    step.rank = res.solution.rank();
    step.residual = r.norm() / bn;
    step.energy = j;
    step.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    res.trace.steps.push_back(step);
    if (step.residual <= cfg.tolerance) {
      res.converged = true;
      break;
    }
    if (cfg.time_limit > 0.0 && step.seconds > cfg.time_limit) break;
  }
  res.trace.converged = res.converged;
  return res;
}

inline GreedyResult greedy_solve(const SeparatedOperator& op, const SeparatedRHS& rhs, const GreedyConfig& cfg) {
  return greedy_solve(TensorSystem(op, rhs), cfg);
}

}  // namespace qpdg
