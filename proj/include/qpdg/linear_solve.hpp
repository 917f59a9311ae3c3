#pragma once

#include <cmath>
#include <functional>
#include <memory>

#include <Eigen/LU>
#include <Eigen/SparseCholesky>
#ifdef QPDG_USE_CHOLMOD
#include <Eigen/CholmodSupport>
#endif

#include "qpdg/common.hpp"

namespace qpdg {

/// Solver for (S + h h^T) x = b with S sparse, symmetric positive
/// semidefinite and the sum positive definite.
///
/// The only possible kernel of S is the global constant, which in any of the
/// block coordinates used here is constant within each block. Masking h to one
/// entry per block gives a sparse e with e^T z proportional to h^T z != 0, so
/// Q = S + tau e e^T is positive definite. Q is factorised and
/// S + h h^T = Q + h h^T - tau e e^T is inverted by a rank-two Woodbury
/// correction, followed by a few conjugate gradient refinement steps.
class RankOneSpdSolver {
 public:
  struct Options {
    Index block_size = 0;      ///< length of one block; 0 means a single block
    Index pin_offset = 0;      ///< position of the pinned entry inside each block
    double tolerance = 1e-14;  ///< target relative residual of the refinement
    double failure = 1e-10;    ///< normwise backward error above which the solve fails
    int max_iterations = 20;
  };

  RankOneSpdSolver() = default;
  RankOneSpdSolver(const SpMat& s, const Vec& h) { compute(s, h, Options{}); }
  RankOneSpdSolver(const SpMat& s, const Vec& h, Options opt) { compute(s, h, opt); }

  void compute(const SpMat& s, const Vec& h, Options opt) {
    if (s.rows() != s.cols()) throw std::invalid_argument("RankOneSpdSolver: matrix must be square");
    if (h.size() != 0 && h.size() != s.rows()) throw std::invalid_argument("RankOneSpdSolver: rank-one size mismatch");
    const Index n = s.rows();
    opt_ = opt;
    s_ = &s;
    h_ = h.size() == 0 ? Vec::Zero(n) : h;
    has_h_ = h_.squaredNorm() > 0.0;
    norm_ = 0.0;
    for (Index c = 0; c < s.outerSize(); ++c) {
      double col = 0.0;
      for (SpMat::InnerIterator it(s, c); it; ++it) col += std::abs(it.value());
      norm_ = std::max(norm_, col);
    }
    norm_ += h_.squaredNorm();
    SpMat q = s;
    if (has_h_) {
      const Index bs = opt.block_size > 0 ? opt.block_size : n;
      if (n % bs != 0 || opt.pin_offset < 0 || opt.pin_offset >= bs)
        throw std::invalid_argument("RankOneSpdSolver: bad block layout");
      e_ = Vec::Zero(n);
      std::vector<Index> pins;
      for (Index b = 0; b < n / bs; ++b) {
        const Index k = b * bs + opt.pin_offset;
        if (h_(k) != 0.0) {
          e_(k) = h_(k);
          pins.push_back(k);
        }
      }
      if (pins.empty()) throw SolverError("RankOneSpdSolver: rank-one term vanishes at the pinned entries");
      tau_ = s.diagonal().cwiseAbs().mean() / e_.squaredNorm();
      std::vector<Triplet> t;
      for (Index a : pins)
        for (Index b : pins) t.emplace_back(a, b, tau_ * e_(a) * e_(b));
      q += from_triplets(n, n, t);
    }
    chol_ = std::make_unique<Factor>();
    chol_->compute(q);
    if (chol_->info() != Eigen::Success) throw SolverError("RankOneSpdSolver: factorisation failed (operator not SPD)");
    if (has_h_) {
      qw_.resize(n, 2);
      qw_.col(0) = chol_->solve(h_);
      qw_.col(1) = chol_->solve(e_);
      Eigen::Matrix2d k;
      k << 1.0 + h_.dot(qw_.col(0)), h_.dot(qw_.col(1)), e_.dot(qw_.col(0)), -1.0 / tau_ + e_.dot(qw_.col(1));
      k_inv_ = k.inverse();
      if (!k_inv_.allFinite()) throw SolverError("RankOneSpdSolver: singular capacitance matrix");
    }
  }

  Index size() const { return h_.size(); }
  int last_iterations() const { return iterations_; }
  double last_residual() const { return residual_; }
  double last_backward_error() const { return backward_; }

  /// Replace the operator used for residuals and refinement; it must equal
  /// S + h h^T up to rounding (a more accurate evaluation of it).
  void set_operator(std::function<Vec(const Vec&)> op) { op_ = std::move(op); }

  /// Supply an accurate evaluation of b - A x (for example in extended
  /// precision). solve() then uses plain iterative refinement driven by it.
  void set_residual(std::function<Vec(const Vec&, const Vec&)> res) { res_ = std::move(res); }

  Vec apply(const Vec& x) const { return op_ ? op_(x) : Vec((*s_) * x + h_ * h_.dot(x)); }

  /// Direct solve refined by preconditioned conjugate gradients. Stops at the
  /// tolerance or when the recursive residual stalls. The relative residual of
  /// a stable solve can be as large as cond(A) * eps, so failure is judged on
  /// the backward error ||r|| / (||A|| ||x|| + ||b||) with a 1-norm bound of A.
  Vec solve(const Vec& b) const {
    const double bn = b.norm();
    iterations_ = 0;
    residual_ = 0.0;
    if (bn == 0.0) return Vec::Zero(b.size());
    Vec x = precondition(b);
    if (res_) return refine(b, std::move(x));
    Vec r = b - apply(x);
    residual_ = r.norm() / bn;
    Vec z = precondition(r);
    Vec p = z;
    double rz = r.dot(z);
    for (iterations_ = 1; iterations_ <= opt_.max_iterations && residual_ > opt_.tolerance; ++iterations_) {
      const Vec ap = apply(p);
      const double pap = p.dot(ap);
      if (!(pap > 0.0)) break;
      const double alpha = rz / pap;
      x += alpha * p;
      r -= alpha * ap;
      residual_ = r.norm() / bn;
      if (residual_ <= opt_.tolerance) break;
      z = precondition(r);
      const double rz_new = r.dot(z);
      p = z + (rz_new / rz) * p;
      rz = rz_new;
    }
    finish(b, x, (b - apply(x)).norm());
    return x;
  }

 private:
#ifdef QPDG_USE_CHOLMOD
  using Factor = Eigen::CholmodSupernodalLLT<SpMat, Eigen::Lower>;
#else
  using Factor = Eigen::SimplicialLLT<SpMat, Eigen::Lower>;
#endif

  Vec refine(const Vec& b, Vec x) const {
    const double bn = b.norm();
    Vec r = res_(x, b);
    double rn = r.norm();
    for (iterations_ = 1; iterations_ <= opt_.max_iterations && rn > opt_.tolerance * bn; ++iterations_) {
      const Vec x_new = x + precondition(r);
      const Vec r_new = res_(x_new, b);
      const double rn_new = r_new.norm();
      if (!(rn_new < rn)) break;
      x = x_new;
      r = r_new;
      rn = rn_new;
    }
    finish(b, x, rn);
    return x;
  }

  void finish(const Vec& b, const Vec& x, double rn) const {
    const double bn = b.norm();
    residual_ = rn / bn;
    backward_ = rn / (norm_ * x.norm() + bn);
    if (!(backward_ <= opt_.failure))
      throw SolverError("RankOneSpdSolver: solve failed (backward error " + fmt_double(backward_) +
                        ", relative residual " + fmt_double(residual_) + ")");
  }

  /// (Q + h h^T - tau e e^T)^{-1} r.
  Vec precondition(const Vec& r) const {
    Vec y = chol_->solve(r);
    if (has_h_) {
      const Eigen::Vector2d t(h_.dot(y), e_.dot(y));
      y -= qw_ * (k_inv_ * t);
    }
    return y;
  }

  Options opt_;
  const SpMat* s_ = nullptr;
  std::function<Vec(const Vec&)> op_;
  std::function<Vec(const Vec&, const Vec&)> res_;
  Vec h_, e_;
  bool has_h_ = false;
  double tau_ = 0.0;
  double norm_ = 0.0;
  Mat qw_;
  Eigen::Matrix2d k_inv_;
  std::unique_ptr<Factor> chol_;
  mutable int iterations_ = 0;
  mutable double residual_ = 0.0;
  mutable double backward_ = 0.0;
};

/// One-shot convenience wrapper.
inline Vec solve_rank_one_spd(const SpMat& s, const Vec& h, const Vec& b) {
  RankOneSpdSolver solver(s, h);
  return solver.solve(b);
}

/// Several sparse matrices of the same size stored as value columns over the
/// union of their sparsity patterns, so that any linear combination costs one
/// matrix product.
class PatternStack {
 public:
  explicit PatternStack(const std::vector<const SpMat*>& mats) {
    if (mats.empty()) throw std::invalid_argument("PatternStack: no matrices");
    const Index n = mats.front()->rows();
    SpMat pattern(n, mats.front()->cols());
    for (const SpMat* m : mats) {
      if (m->rows() != n || m->cols() != pattern.cols()) throw std::invalid_argument("PatternStack: size mismatch");
      pattern += m->cwiseAbs();
    }
    pattern.makeCompressed();
    pattern_ = pattern;
    values_ = Mat::Zero(pattern_.nonZeros(), static_cast<Index>(mats.size()));
    for (std::size_t k = 0; k < mats.size(); ++k) {
      SpMat m = *mats[k];
      m.makeCompressed();
      for (Index c = 0; c < m.outerSize(); ++c) {
        Index pos = pattern_.outerIndexPtr()[c];
        for (SpMat::InnerIterator it(m, c); it; ++it) {
          while (pattern_.innerIndexPtr()[pos] != it.row()) ++pos;
          values_(pos, static_cast<Index>(k)) = it.value();
        }
      }
    }
  }

  const SpMat& pattern() const { return pattern_; }
  const Mat& values() const { return values_; }
  Index count() const { return values_.cols(); }

  /// sum_k w_k A_k.
  SpMat combine(const Vec& w) const {
    SpMat out = pattern_;
    Eigen::Map<Vec>(out.valuePtr(), out.nonZeros()) = values_ * w;
    return out;
  }

  /// Block matrix with block (l, m) = sum_k coeff[k](l, m) A_k, unknowns
  /// ordered block-major (l * size + row).
  SpMat block_combine(const std::vector<Mat>& coeff) const {
    if (static_cast<Index>(coeff.size()) != count()) throw std::invalid_argument("PatternStack: coefficient count");
    const Index nb = coeff.front().rows();
    const Index n = pattern_.rows();
    Mat c(count(), nb * nb);
    for (Index k = 0; k < count(); ++k)
      for (Index m = 0; m < nb; ++m)
        for (Index l = 0; l < nb; ++l) c(k, l + nb * m) = coeff[static_cast<std::size_t>(k)](l, m);
    const Mat w = values_ * c;  // nnz x nb^2
    const Index nnz = pattern_.nonZeros();
    SpMat out(nb * n, nb * pattern_.cols());
    out.resizeNonZeros(nnz * nb * nb);
    auto* outer = out.outerIndexPtr();
    auto* inner = out.innerIndexPtr();
    auto* val = out.valuePtr();
    Index pos = 0;
    outer[0] = 0;
    for (Index m = 0; m < nb; ++m)
      for (Index col = 0; col < pattern_.cols(); ++col) {
        const Index beg = pattern_.outerIndexPtr()[col];
        const Index end = pattern_.outerIndexPtr()[col + 1];
        for (Index l = 0; l < nb; ++l)
          for (Index e = beg; e < end; ++e) {
            inner[pos] = static_cast<SpMat::StorageIndex>(l * n + pattern_.innerIndexPtr()[e]);
            val[pos] = w(e, l + nb * m);
            ++pos;
          }
        outer[m * pattern_.cols() + col + 1] = static_cast<SpMat::StorageIndex>(pos);
      }
    return out;
  }

 private:
  SpMat pattern_;
  Mat values_;
};

}  // namespace qpdg
