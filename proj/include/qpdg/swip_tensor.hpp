#pragma once

#include <initializer_list>

#include "qpdg/cell_fem.hpp"
#include "qpdg/media.hpp"
#include "qpdg/meso_grid.hpp"

namespace qpdg {

/// How the constant mode of the periodic problem is fixed.
enum class MeanVariant {
  mean_penalty,  ///< m(u, v) = phi(u) phi(v), phi(v) = int_D v
  cell_mass      ///< m = identity (x) M, the full L2 inner product
};

inline MeanVariant parse_mean_variant(std::string_view s) {
  if (s == "mean_penalty") return MeanVariant::mean_penalty;
  if (s == "cell_mass") return MeanVariant::cell_mass;
  throw std::invalid_argument("unknown m_variant '" + std::string(s) + "'");
}
inline std::string to_string(MeanVariant v) { return v == MeanVariant::mean_penalty ? "mean_penalty" : "cell_mass"; }

/// Which bilinear form of a^swip = a - c - c^T + s + m a term belongs to.
enum class FormPart { diffusion, consistency, consistency_transpose, penalty, mean, combined };

/// SWIP face weights: omega_F and the average weights of both traces.
struct SwipWeights {
  Vec omega;           ///< per face, in grid.faces() order
  Vec beta_owner;      ///< weight of the trace from the owner cell
  Vec beta_neighbor;   ///< weight of the trace from the neighbour cell
  double beta_max = 0.0;
  double omega_min = 0.0;
  double k_plus_max = 0.0;
  double k_minus_min = 0.0;
  double face_measure_max = 0.0;
  int faces_per_cell = MesoGrid::faces_per_cell;
};

/// omega_F = 2 k_i k_j / (k_i + k_j); each trace is weighted by its own
/// cell's upper bound, beta = k_self / (k_i + k_j).
inline SwipWeights compute_weights(const MesoGrid& grid, const CellBounds& bounds) {
  if (bounds.k_plus.size() != grid.size() || bounds.k_minus.size() != grid.size())
    throw std::invalid_argument("compute_weights: bounds size mismatch");
  if ((bounds.k_minus.array() <= 0.0).any() || (bounds.k_plus.array() < bounds.k_minus.array()).any())
    throw std::invalid_argument("compute_weights: bounds must satisfy 0 < k- <= k+");
  const auto& faces = grid.faces();
  const auto nf = static_cast<Index>(faces.size());
  SwipWeights w;
  w.omega.resize(nf);
  w.beta_owner.resize(nf);
  w.beta_neighbor.resize(nf);
  for (Index f = 0; f < nf; ++f) {
    const double ki = bounds.k_plus(faces[static_cast<std::size_t>(f)].owner);
    const double kj = bounds.k_plus(faces[static_cast<std::size_t>(f)].neighbor);
    w.omega(f) = 2.0 * ki * kj / (ki + kj);
    w.beta_owner(f) = ki / (ki + kj);
    w.beta_neighbor(f) = kj / (ki + kj);
  }
  w.beta_max = std::max(w.beta_owner.maxCoeff(), w.beta_neighbor.maxCoeff());
  w.omega_min = w.omega.minCoeff();
  w.k_plus_max = bounds.k_plus.maxCoeff();
  w.k_minus_min = bounds.k_minus.minCoeff();
  w.face_measure_max = grid.max_face_measure();
  return w;
}

/// Penalty threshold above which a^swip is provably coercive:
/// C^2 beta_max^2 N_F |F|+ (k+max / omega_min) (k+max / k-min).
inline double sigma_lower_bound(double trace_const, const SwipWeights& w) {
  return trace_const * trace_const * w.beta_max * w.beta_max * w.faces_per_cell * w.face_measure_max *
         (w.k_plus_max / w.omega_min) * (w.k_plus_max / w.k_minus_min);
}

/// meso (x) cell with both factors sparse (test, trial) matrices.
struct KroneckerTerm {
  SpMat meso;
  SpMat cell;
  FormPart part;
};

/// (meso meso^T) (x) (cell cell^T), kept factored because it is dense.
struct RankOneTerm {
  Vec meso;
  Vec cell;
  FormPart part;
};

/// The penalty form of one face orientation q, kept as data so that s(u, u)
/// can be evaluated from explicit jumps. Summing the Kronecker terms instead
/// cancels O(sigma |u|^2) contributions and loses all accuracy in s.
struct JumpPenalty {
  std::vector<Index> neighbor;  ///< cell across the q face of cell i
  Vec weight;                   ///< sigma omega_F / |F| per owner cell
  std::vector<Index> trace;     ///< dofs on dY_q, ordered along the face
  std::vector<Index> image;     ///< their images on dY_-q
  Mat face_mass;                ///< 1D mass matrix along the face
};

namespace detail {
template <class Fn>
void for_each_jump(const JumpPenalty& jp, const Mat& u, Fn&& fn) {
  const auto nf = static_cast<Index>(jp.trace.size());
  Vec jump(nf);
  for (Index i = 0; i < u.rows(); ++i) {
    const Index j = jp.neighbor[static_cast<std::size_t>(i)];
    for (Index a = 0; a < nf; ++a)
      jump(a) = u(i, jp.trace[static_cast<std::size_t>(a)]) - u(j, jp.image[static_cast<std::size_t>(a)]);
    fn(i, j, jump);
  }
}
}  // namespace detail

/// out += S u for the penalty part S, from explicit jumps.
inline void add_jump_penalty(const std::vector<JumpPenalty>& jps, const Mat& u, Mat& out) {
  for (const auto& jp : jps)
    detail::for_each_jump(jp, u, [&](Index i, Index j, const Vec& jump) {
      const Vec mj = jp.weight(i) * (jp.face_mass * jump);
      for (Index a = 0; a < mj.size(); ++a) {
        out(i, jp.trace[static_cast<std::size_t>(a)]) += mj(a);
        out(j, jp.image[static_cast<std::size_t>(a)]) -= mj(a);
      }
    });
}

/// s(u, u) from explicit jumps.
inline double jump_penalty_form(const std::vector<JumpPenalty>& jps, const Mat& u) {
  double total = 0.0;
  for (const auto& jp : jps)
    detail::for_each_jump(jp, u, [&](Index i, Index, const Vec& jump) {
      total += jp.weight(i) * jump.dot(jp.face_mass * jump);
    });
  return total;
}

/// An operator on R^I (x) V_h(Y) held as a sum of Kronecker products.
///
/// Tensors are handled in matrix form: U(i, d) is the coefficient of cell dof d
/// in cell i, and (A (x) B) acts as U -> A U B^T.
class SeparatedOperator {
 public:
  SeparatedOperator() = default;
  SeparatedOperator(Index n_cells, Index n_dofs) : n_cells_(n_cells), n_dofs_(n_dofs) {}

  Index n_cells() const { return n_cells_; }
  Index n_dofs() const { return n_dofs_; }
  double sigma = 0.0;
  MeanVariant variant = MeanVariant::mean_penalty;
  std::vector<JumpPenalty> jump_penalties;  ///< optional copy of the penalty part

  const std::vector<KroneckerTerm>& terms() const { return terms_; }
  const std::vector<RankOneTerm>& rank_one_terms() const { return rank_one_; }
  std::size_t term_count() const { return terms_.size() + rank_one_.size(); }

  void add(SpMat meso, SpMat cell, FormPart part) {
    if (meso.rows() != n_cells_ || meso.cols() != n_cells_ || cell.rows() != n_dofs_ || cell.cols() != n_dofs_)
      throw std::invalid_argument("SeparatedOperator::add: factor dimensions mismatch");
    meso.prune(0.0);
    cell.prune(0.0);
    if (meso.nonZeros() == 0 || cell.nonZeros() == 0) return;
    for (auto& t : terms_) {
      if (t.part == part && same_matrix(t.meso, meso)) {
        t.cell = SpMat(t.cell + cell);
        return;
      }
    }
    terms_.push_back({std::move(meso), std::move(cell), part});
  }

  void add_rank_one(Vec meso, Vec cell, FormPart part) {
    rank_one_.push_back({std::move(meso), std::move(cell), part});
  }

  Mat apply(const Mat& u) const {
    Mat out = Mat::Zero(n_cells_, n_dofs_);
    for (const auto& t : terms_) {
      const Mat tmp = t.meso * u;
      out.noalias() += tmp * t.cell.transpose();
    }
    for (const auto& r : rank_one_) out.noalias() += (r.meso.dot(u * r.cell)) * r.meso * r.cell.transpose();
    return out;
  }

  /// <V, A U> in the Frobenius inner product, i.e. the bilinear form a(U, V).
  double form(const Mat& u, const Mat& v) const { return (v.array() * apply(u).array()).sum(); }

  /// Terms belonging to the listed parts only.
  SeparatedOperator restricted(std::initializer_list<FormPart> parts) const {
    SeparatedOperator out(n_cells_, n_dofs_);
    out.sigma = sigma;
    out.variant = variant;
    auto keep = [&](FormPart p) {
      for (auto q : parts)
        if (p == q) return true;
      return false;
    };
    for (const auto& t : terms_)
      if (keep(t.part)) out.terms_.push_back(t);
    for (const auto& r : rank_one_)
      if (keep(r.part)) out.rank_one_.push_back(r);
    if (keep(FormPart::penalty)) out.jump_penalties = jump_penalties;
    return out;
  }

  /// Merge terms with identical meso factors regardless of their part; the
  /// representation used by the solver.
  SeparatedOperator combined() const {
    SeparatedOperator out(n_cells_, n_dofs_);
    out.sigma = sigma;
    out.variant = variant;
    for (const auto& t : terms_) out.add(t.meso, t.cell, FormPart::combined);
    out.rank_one_ = rank_one_;
    return out;
  }

  /// A u with the penalty part applied through explicit jumps when
  /// jump_penalties is set; same value as apply() up to rounding.
  Mat accurate_apply(const Mat& u) const {
    if (jump_penalties.empty()) return apply(u);
    Mat out = Mat::Zero(n_cells_, n_dofs_);
    for (const auto& t : terms_) {
      if (t.part == FormPart::penalty) continue;
      const Mat tmp = t.meso * u;
      out.noalias() += tmp * t.cell.transpose();
    }
    for (const auto& r : rank_one_) out.noalias() += (r.meso.dot(u * r.cell)) * r.meso * r.cell.transpose();
    add_jump_penalty(jump_penalties, u, out);
    return out;
  }

  /// a(u, u), penalty part from explicit jumps when available.
  double energy_form(const Mat& u) const {
    if (jump_penalties.empty()) return form(u, u);
    double total = 0.0;
    for (const auto& t : terms_) {
      if (t.part == FormPart::penalty) continue;
      const Mat tmp = t.meso * u;
      total += (tmp.array() * (u * t.cell).array()).sum();
    }
    for (const auto& r : rank_one_) {
      const double g = r.meso.dot(u * r.cell);
      total += g * g;
    }
    return total + jump_penalty_form(jump_penalties, u);
  }

  /// Explicit matrix over the broken space, global index i * n_dofs + d.
  Mat expand_dense() const {
    const Index n = n_cells_ * n_dofs_;
    Mat a = Mat::Zero(n, n);
    for (const auto& t : terms_) {
      const Mat m = Mat(t.meso);
      const Mat c = Mat(t.cell);
      for (Index i = 0; i < n_cells_; ++i)
        for (Index j = 0; j < n_cells_; ++j)
          if (m(i, j) != 0.0) a.block(i * n_dofs_, j * n_dofs_, n_dofs_, n_dofs_) += m(i, j) * c;
    }
    for (const auto& r : rank_one_) {
      Vec g(n);
      for (Index i = 0; i < n_cells_; ++i) g.segment(i * n_dofs_, n_dofs_) = r.meso(i) * r.cell;
      a.noalias() += g * g.transpose();
    }
    return a;
  }

 private:
  static bool same_matrix(const SpMat& a, const SpMat& b) {
    if (a.nonZeros() != b.nonZeros()) return false;
    return SpMat(a - b).norm() == 0.0;
  }

  Index n_cells_ = 0, n_dofs_ = 0;
  std::vector<KroneckerTerm> terms_;
  std::vector<RankOneTerm> rank_one_;
};

/// Right-hand side b = sum_k b^I_k (x) b^Y_k.
struct SeparatedRHS {
  std::vector<Vec> meso;
  std::vector<Vec> cell;
  Index rank() const { return static_cast<Index>(meso.size()); }
  Mat to_dense(Index n_cells, Index n_dofs) const {
    Mat b = Mat::Zero(n_cells, n_dofs);
    for (std::size_t k = 0; k < meso.size(); ++k) b.noalias() += meso[k] * cell[k].transpose();
    return b;
  }
};

/// Everything the assembly needs to know about the conductivity.
struct SwipSetup {
  CellBounds bounds;
  SwipWeights weights;
  double trace_constant = 0.0;
  double sigma_minus = 0.0;
};

inline SwipSetup swip_setup(const MesoGrid& grid, const CellSpace& space, const SeparatedField& k) {
  SwipSetup s;
  s.bounds = cell_bounds(k, grid.size(), space.num_dofs());
  s.weights = compute_weights(grid, s.bounds);
  s.trace_constant = trace_constant(space);
  s.sigma_minus = sigma_lower_bound(s.trace_constant, s.weights);
  return s;
}

namespace detail {
inline Index face_index(Index owner, Side s) { return 2 * owner + (s == Side::x_plus ? 0 : 1); }
}  // namespace detail

/// Separated representation of a^swip = a - c - c^T + s + m.
///
/// The SWIP average weights depend on the face, so they are folded into the
/// meso pair weights 2 beta K^I_n(trace cell) while the cell flux forms keep
/// their factor 1/2.
inline SeparatedOperator assemble_operator(const MesoGrid& grid, const CellSpace& space, const SeparatedField& k,
                                           const SwipWeights& w, double sigma, MeanVariant variant) {
  if (!(sigma > 0.0)) throw std::invalid_argument("assemble_operator: sigma must be positive");
  if (k.rank() == 0) throw std::invalid_argument("assemble_operator: empty conductivity");
  SeparatedOperator op(grid.size(), space.num_dofs());
  op.sigma = sigma;
  op.variant = variant;

  for (Index n = 0; n < k.rank(); ++n) {
    const Vec& km = k.meso[static_cast<std::size_t>(n)];
    const Vec& kc = k.cell[static_cast<std::size_t>(n)];
    op.add(diag_matrix(km), stiffness_matrix(space, kc), FormPart::diffusion);
  }

  for (Side s : {Side::x_plus, Side::y_plus}) {
    const Side o = opposite(s);
    for (Index n = 0; n < k.rank(); ++n) {
      const Vec& km = k.meso[static_cast<std::size_t>(n)];
      const Vec& kc = k.cell[static_cast<std::size_t>(n)];
      const SpMat own = chi_matrix(grid, s, [&](Index i, Index) {
        return 2.0 * w.beta_owner(detail::face_index(i, s)) * km(i);
      });
      const SpMat nbr = chi_matrix(grid, s, [&](Index i, Index j) {
        return 2.0 * w.beta_neighbor(detail::face_index(i, s)) * km(j);
      });
      const SpMat n0 = boundary_flux(space, s, kc);
      const SpMat n0o = boundary_flux(space, o, kc);
      const SpMat n1 = boundary_flux_coupling(space, s, kc);
      const SpMat n1o = boundary_flux_coupling(space, o, kc);
      // c as (test, trial) Kronecker pieces; a^swip takes -c and -c^T.
      const std::array<std::pair<SpMat, SpMat>, 4> c_terms = {{
          {row_sum_diag(own), n0},
          {SpMat(-SpMat(own.transpose())), n1},
          {SpMat(-nbr), n1o},
          {row_sum_diag(SpMat(nbr.transpose())), n0o},
      }};
      for (const auto& [m, c] : c_terms) {
        op.add(SpMat(-m), c, FormPart::consistency);
        op.add(SpMat(-SpMat(m.transpose())), SpMat(c.transpose()), FormPart::consistency_transpose);
      }
    }
    const SpMat pen = chi_matrix(grid, s, [&](Index i, Index) {
      const Index f = detail::face_index(i, s);
      return sigma * w.omega(f) / grid.faces()[static_cast<std::size_t>(f)].measure;
    });
    const SpMat m1 = boundary_coupling(space, s);
    op.add(row_sum_diag(pen), boundary_mass(space, s), FormPart::penalty);
    op.add(row_sum_diag(SpMat(pen.transpose())), boundary_mass(space, o), FormPart::penalty);
    op.add(SpMat(-SpMat(pen.transpose())), m1, FormPart::penalty);
    op.add(SpMat(-pen), SpMat(m1.transpose()), FormPart::penalty);

    JumpPenalty jp;
    jp.trace = space.boundary_dofs(s);
    jp.image = space.boundary_dofs(o);
    jp.weight.resize(grid.size());
    for (Index i = 0; i < grid.size(); ++i) {
      jp.neighbor.push_back(grid.neighbor(i, s));
      const Index f = detail::face_index(i, s);
      jp.weight(i) = sigma * w.omega(f) / grid.faces()[static_cast<std::size_t>(f)].measure;
    }
    const Mat m0 = Mat(boundary_mass(space, s));
    const auto nf = static_cast<Index>(jp.trace.size());
    jp.face_mass.resize(nf, nf);
    for (Index a = 0; a < nf; ++a)
      for (Index c = 0; c < nf; ++c)
        jp.face_mass(a, c) = m0(jp.trace[static_cast<std::size_t>(a)], jp.trace[static_cast<std::size_t>(c)]);
    op.jump_penalties.push_back(std::move(jp));
  }

  const SpMat mass = mass_matrix(space);
  if (variant == MeanVariant::mean_penalty) {
    op.add_rank_one(Vec::Ones(grid.size()), mass * space.ones(), FormPart::mean);
  } else {
    SpMat eye(grid.size(), grid.size());
    eye.setIdentity();
    op.add(eye, mass, FormPart::mean);
  }
  return op;
}

inline SeparatedOperator assemble_operator(const MesoGrid& grid, const CellSpace& space, const SeparatedField& k,
                                           double sigma, MeanVariant variant) {
  const auto b = cell_bounds(k, grid.size(), space.num_dofs());
  return assemble_operator(grid, space, k, compute_weights(grid, b), sigma, variant);
}

/// b(v) = sum_k f^I_k(i) int_Y f^Y_k v.
inline SeparatedRHS assemble_rhs(const MesoGrid& grid, const CellSpace& space, const SeparatedField& f) {
  SeparatedRHS b;
  const SpMat mass = mass_matrix(space);
  for (Index k = 0; k < f.rank(); ++k) {
    const Vec& fm = f.meso[static_cast<std::size_t>(k)];
    if (fm.size() != grid.size()) throw std::invalid_argument("assemble_rhs: meso size mismatch");
    Vec load = mass * f.cell[static_cast<std::size_t>(k)];
    if (fm.norm() == 0.0 || load.norm() == 0.0) continue;
    b.meso.push_back(fm);
    b.cell.push_back(std::move(load));
  }
  return b;
}

/// ||v||_E^2 = a(v, v) + s(v, v) + m(v, v), with v in matrix form.
inline double energy_norm(const SeparatedOperator& op, const Mat& v) {
  const auto parts = op.restricted({FormPart::diffusion, FormPart::penalty, FormPart::mean});
  return std::sqrt(std::max(0.0, parts.energy_form(v)));
}

/// The broken-space system matrix assembled directly, without tensor structure.
/// The mean term of the mean_penalty variant is kept as the functional phi.
struct MonolithicSystem {
  Index n_cells = 0, n_dofs = 0;
  SpMat matrix;          ///< a - c - c^T + s, plus I (x) M for cell_mass
  SpMat smooth;          ///< the same without s
  SpMat jump;            ///< [v] at every face quadrature point
  Vec jump_weight;       ///< quadrature weight times sigma omega_F / |F|
  Vec mean_functional;   ///< phi(v) = g^T v; empty for cell_mass
  Index size() const { return n_cells * n_dofs; }
  bool has_mean_term() const { return mean_functional.size() > 0; }

  /// Matrix-vector product with s applied as J^T W J x, which keeps the
  /// O(sigma) contributions from cancelling.
  Vec apply(const Vec& x) const {
    Vec y = smooth * x;
    y += jump.transpose() * jump_weight.cwiseProduct(jump * x);
    if (has_mean_term()) y += mean_functional * mean_functional.dot(x);
    return y;
  }

  /// b - A x accumulated in extended precision and rounded once, so that
  /// iterative refinement is not limited by cancellation in the O(sigma) terms.
  Vec residual(const Vec& x, const Vec& b) const {
    using Ld = long double;
    std::vector<Ld> r(static_cast<std::size_t>(b.size()));
    for (Index k = 0; k < b.size(); ++k) r[static_cast<std::size_t>(k)] = b(k);
    auto sub_product = [&](const SpMat& m, auto&& value_of, auto&& scale) {
      for (Index c = 0; c < m.outerSize(); ++c) {
        const Ld xc = value_of(c);
        if (xc == 0.0L) continue;
        for (SpMat::InnerIterator it(m, c); it; ++it)
          r[static_cast<std::size_t>(scale(it))] -= static_cast<Ld>(it.value()) * xc;
      }
    };
    sub_product(smooth, [&](Index c) { return static_cast<Ld>(x(c)); }, [](const SpMat::InnerIterator& it) { return it.row(); });
    std::vector<Ld> jx(static_cast<std::size_t>(jump.rows()), 0.0L);
    for (Index c = 0; c < jump.outerSize(); ++c)
      for (SpMat::InnerIterator it(jump, c); it; ++it)
        jx[static_cast<std::size_t>(it.row())] += static_cast<Ld>(it.value()) * static_cast<Ld>(x(c));
    for (Index q = 0; q < jump.rows(); ++q) jx[static_cast<std::size_t>(q)] *= static_cast<Ld>(jump_weight(q));
    for (Index c = 0; c < jump.outerSize(); ++c)
      for (SpMat::InnerIterator it(jump, c); it; ++it)
        r[static_cast<std::size_t>(c)] -= static_cast<Ld>(it.value()) * jx[static_cast<std::size_t>(it.row())];
    if (has_mean_term()) {
      Ld gx = 0.0L;
      for (Index k = 0; k < x.size(); ++k) gx += static_cast<Ld>(mean_functional(k)) * static_cast<Ld>(x(k));
      for (Index k = 0; k < x.size(); ++k) r[static_cast<std::size_t>(k)] -= static_cast<Ld>(mean_functional(k)) * gx;
    }
    Vec out(b.size());
    for (Index k = 0; k < b.size(); ++k) out(k) = static_cast<double>(r[static_cast<std::size_t>(k)]);
    return out;
  }

  Mat to_dense() const {
    Mat a = Mat(matrix);
    if (has_mean_term()) a.noalias() += mean_functional * mean_functional.transpose();
    return a;
  }
};

/// Largest broken-space dimension monolithic_assemble accepts by default.
inline constexpr Index default_max_dofs = 2'000'000;

/// Cell-by-cell volume terms and face-by-face SWIP terms with the weighted
/// average and jump evaluated at each face quadrature point.
inline MonolithicSystem monolithic_assemble(const MesoGrid& grid, const CellSpace& space, const SeparatedField& k,
                                            const SwipWeights& w, double sigma, MeanVariant variant,
                                            Index max_dofs = default_max_dofs) {
  if (!(sigma > 0.0)) throw std::invalid_argument("monolithic_assemble: sigma must be positive");
  const Index ny = space.num_dofs();
  const Index n = grid.size() * ny;
  if (n > max_dofs)
    throw std::length_error("monolithic_assemble: " + std::to_string(n) + " dofs exceed the cap of " +
                            std::to_string(max_dofs));
  const Mat kd = k.to_dense(grid.size(), ny);
  if ((kd.array() <= 0.0).any()) throw std::invalid_argument("monolithic_assemble: conductivity is not positive");
  const auto gp = CellSpace::gauss_points();
  const double wvol = CellSpace::gauss_weight * CellSpace::gauss_weight * space.h()[0] * space.h()[1];
  std::vector<Triplet> t, tj;
  std::vector<double> jw;
  t.reserve(static_cast<std::size_t>(grid.size() * space.elements()[0] * space.elements()[1] * 16 * 2 +
                                     grid.faces().size() * static_cast<std::size_t>(space.elements()[0] + space.elements()[1]) * 128));
  Vec g = Vec::Zero(variant == MeanVariant::mean_penalty ? n : 0);

  for (Index i = 0; i < grid.size(); ++i) {
    const Vec ki = kd.row(i).transpose();
    const Index off = i * ny;
    for (Index ey = 0; ey < space.elements()[1]; ++ey)
      for (Index ex = 0; ex < space.elements()[0]; ++ex) {
        const auto dofs = space.element_dofs(ex, ey);
        for (double xi : gp)
          for (double eta : gp) {
            const auto phi = CellSpace::shape(xi, eta);
            const auto dphi = space.grad(xi, eta);
            double kq = 0.0;
            for (std::size_t a = 0; a < 4; ++a) kq += phi[a] * ki(dofs[a]);
            for (std::size_t a = 0; a < 4; ++a) {
              if (g.size() > 0) g(off + dofs[a]) += wvol * phi[a];
              for (std::size_t b = 0; b < 4; ++b) {
                double v = wvol * kq * (dphi[a][0] * dphi[b][0] + dphi[a][1] * dphi[b][1]);
                if (variant == MeanVariant::cell_mass) v += wvol * phi[a] * phi[b];
                t.emplace_back(off + dofs[a], off + dofs[b], v);
              }
            }
          }
      }
  }

  struct TraceEntry {
    Index index;
    double jump;  // coefficient in [v] = v_owner - v_neighbour
    double flux;  // coefficient in {K grad v . n}_beta
  };
  const auto& faces = grid.faces();
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const Face& face = faces[f];
    const int ax = axis_of(face.side);
    const double bo = w.beta_owner(static_cast<Index>(f));
    const double bn = w.beta_neighbor(static_cast<Index>(f));
    const double pen = sigma * w.omega(static_cast<Index>(f)) / face.measure;
    for (const auto& p : space.edge_points(face.side)) {
      // The same physical point seen from the neighbour, on its opposite face.
      CellSpace::EdgePoint q = p;
      if (ax == 0) {
        q.ex = 0;
        q.xi = 0.0;
      } else {
        q.ey = 0;
        q.eta = 0.0;
      }
      std::array<TraceEntry, 8> e{};
      const auto side_entries = [&](Index cell, const CellSpace::EdgePoint& pt, double sign, double beta,
                                    std::size_t base) {
        const auto dofs = space.element_dofs(pt.ex, pt.ey);
        const auto phi = CellSpace::shape(pt.xi, pt.eta);
        const auto dphi = space.grad(pt.xi, pt.eta);
        double kq = 0.0;
        for (std::size_t a = 0; a < 4; ++a) kq += phi[a] * kd(cell, dofs[a]);
        for (std::size_t a = 0; a < 4; ++a)
          e[base + a] = {cell * ny + dofs[a], sign * phi[a], beta * kq * dphi[a][static_cast<std::size_t>(ax)]};
      };
      side_entries(face.owner, p, 1.0, bo, 0);
      side_entries(face.neighbor, q, -1.0, bn, 4);
      for (const auto& te : e)
        for (const auto& tr : e) {
          const double v = -p.weight * (tr.flux * te.jump + te.flux * tr.jump);
          if (v != 0.0) t.emplace_back(te.index, tr.index, v);
        }
      const auto row = static_cast<Index>(jw.size());
      for (const auto& te : e)
        if (te.jump != 0.0) tj.emplace_back(row, te.index, te.jump);
      jw.push_back(p.weight * pen);
    }
  }
  MonolithicSystem sys;
  sys.n_cells = grid.size();
  sys.n_dofs = ny;
  sys.smooth = from_triplets(n, n, t);
  sys.jump = from_triplets(static_cast<Index>(jw.size()), n, tj);
  sys.jump_weight = Vec::Map(jw.data(), static_cast<Index>(jw.size()));
  sys.matrix = SpMat(sys.smooth + SpMat(sys.jump.transpose() * sys.jump_weight.asDiagonal() * sys.jump));
  sys.mean_functional = std::move(g);
  return sys;
}

inline MonolithicSystem monolithic_assemble(const MesoGrid& grid, const CellSpace& space, const SeparatedField& k,
                                            double sigma, MeanVariant variant, Index max_dofs = default_max_dofs) {
  const auto b = cell_bounds(k, grid.size(), space.num_dofs());
  return monolithic_assemble(grid, space, k, compute_weights(grid, b), sigma, variant, max_dofs);
}

/// Row-major reshape between the broken-space vector and the matrix form.
inline Mat to_matrix(const Vec& x, Index n_cells, Index n_dofs) {
  if (x.size() != n_cells * n_dofs) throw std::invalid_argument("to_matrix: size mismatch");
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(x.data(), n_cells,
                                                                                                   n_dofs);
}

inline Vec to_vector(const Mat& u) {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> r = u;
  return Eigen::Map<const Vec>(r.data(), r.size());
}

}  // namespace qpdg
