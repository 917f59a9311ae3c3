#pragma once

#include <chrono>
#include <string>

#include "qpdg/linear_solve.hpp"
#include "qpdg/swip_tensor.hpp"

namespace qpdg {

/// A solution given by all of its coefficients.
struct FullSolution {
  std::string method;
  Vec coefficients;       ///< broken space, index i * n_dofs + d
  Index n_cells = 0;
  Index n_dofs = 0;
  Index system_size = 0;  ///< unknowns of the system actually solved
  double seconds = 0.0;
  double residual = 0.0;  ///< relative residual of the linear solve

  Mat as_matrix() const { return to_matrix(coefficients, n_cells, n_dofs); }
};

/// Direct solve of the monolithic SWIP system with right-hand side in matrix
/// form (#I x dim V_h(Y)).
inline FullSolution direct_dg_solve(const MesoGrid& grid, const CellSpace& space, const SeparatedField& k,
                                    const SwipWeights& w, const Mat& rhs, double sigma, MeanVariant variant,
                                    Index max_dofs = default_max_dofs) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto sys = monolithic_assemble(grid, space, k, w, sigma, variant, max_dofs);
  if (rhs.rows() != grid.size() || rhs.cols() != space.num_dofs())
    throw std::invalid_argument("direct_dg_solve: rhs dimensions mismatch");
  const Vec b = to_vector(rhs);
  RankOneSpdSolver solver(sys.matrix, sys.mean_functional);
  solver.set_operator([&sys](const Vec& x) { return sys.apply(x); });
  solver.set_residual([&sys](const Vec& x, const Vec& r) { return sys.residual(x, r); });
  FullSolution out;
  out.method = "direct_dg";
  out.coefficients = solver.solve(b);
  out.n_cells = grid.size();
  out.n_dofs = space.num_dofs();
  out.system_size = sys.size();
  // The solver already failed on a backward error above 1e-10; with large
  // penalties the relative residual itself can stall slightly above that.
  const double bn = b.norm();
  out.residual = bn > 0.0 ? sys.residual(out.coefficients, b).norm() / bn : 0.0;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline FullSolution direct_dg_solve(const MesoGrid& grid, const CellSpace& space, const SeparatedField& k,
                                    const SeparatedField& f, double sigma, MeanVariant variant,
                                    Index max_dofs = default_max_dofs) {
  const auto bounds = cell_bounds(k, grid.size(), space.num_dofs());
  const Mat rhs = assemble_rhs(grid, space, f).to_dense(grid.size(), space.num_dofs());
  return direct_dg_solve(grid, space, k, compute_weights(grid, bounds), rhs, sigma, variant, max_dofs);
}

/// Node counts of the continuous Q1 space on the glued global mesh: before
/// and after identification of opposite boundary nodes.
struct CgDofCount {
  Index raw = 0;
  Index identified = 0;
};

inline CgDofCount cg_dof_count(const MesoGrid& grid, const CellSpace& space) {
  const Index gx = grid.nx() * space.elements()[0];
  const Index gy = grid.ny() * space.elements()[1];
  return {(gx + 1) * (gy + 1), gx * gy};
}

/// Continuous Galerkin baseline: periodic Q1 on the global mesh with the same
/// phi-penalty fixing the constant. K and f are taken per element from the
/// owning cell; the solution is injected into the broken space by duplicating
/// interface values.
inline FullSolution cg_fem_solve(const MesoGrid& grid, const CellSpace& space, const SeparatedField& k,
                                 const Mat& f_nodal, Index max_dofs = default_max_dofs) {
  const auto t0 = std::chrono::steady_clock::now();
  const Index nex = space.elements()[0], ney = space.elements()[1];
  const Index gx = grid.nx() * nex, gy = grid.ny() * ney;
  const Index n = gx * gy;
  if (n > max_dofs) throw std::length_error("cg_fem_solve: problem exceeds the dof cap");
  if (f_nodal.rows() != grid.size() || f_nodal.cols() != space.num_dofs())
    throw std::invalid_argument("cg_fem_solve: source dimensions mismatch");
  const Mat kd = k.to_dense(grid.size(), space.num_dofs());
  if ((kd.array() <= 0.0).any()) throw std::invalid_argument("cg_fem_solve: conductivity is not positive");

  // Global identified node of local dof d in cell i.
  auto global = [&](Index i, Index d) {
    const auto [ix, iy] = grid.coords(i);
    const auto nd = space.node(d);
    return ((ix * nex + nd[0]) % gx) + gx * ((iy * ney + nd[1]) % gy);
  };

  const auto gp = CellSpace::gauss_points();
  const double wvol = CellSpace::gauss_weight * CellSpace::gauss_weight * space.h()[0] * space.h()[1];
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(n) * 64);
  Vec g = Vec::Zero(n), b = Vec::Zero(n);
  for (Index i = 0; i < grid.size(); ++i)
    for (Index ey = 0; ey < ney; ++ey)
      for (Index ex = 0; ex < nex; ++ex) {
        const auto dofs = space.element_dofs(ex, ey);
        std::array<Index, 4> gl{};
        for (std::size_t a = 0; a < 4; ++a) gl[a] = global(i, dofs[a]);
        for (double xi : gp)
          for (double eta : gp) {
            const auto phi = CellSpace::shape(xi, eta);
            const auto dphi = space.grad(xi, eta);
            double kq = 0.0, fq = 0.0;
            for (std::size_t a = 0; a < 4; ++a) {
              kq += phi[a] * kd(i, dofs[a]);
              fq += phi[a] * f_nodal(i, dofs[a]);
            }
            for (std::size_t a = 0; a < 4; ++a) {
              g(gl[a]) += wvol * phi[a];
              b(gl[a]) += wvol * fq * phi[a];
              for (std::size_t c = 0; c < 4; ++c)
                t.emplace_back(gl[a], gl[c], wvol * kq * (dphi[a][0] * dphi[c][0] + dphi[a][1] * dphi[c][1]));
            }
          }
      }
  const SpMat a = from_triplets(n, n, t);
  RankOneSpdSolver solver(a, g);
  const Vec x = solver.solve(b);

  FullSolution out;
  out.method = "cg_fem";
  out.n_cells = grid.size();
  out.n_dofs = space.num_dofs();
  out.system_size = n;
  const double bn = b.norm();
  out.residual = bn > 0.0 ? (b - solver.apply(x)).norm() / bn : 0.0;
  out.coefficients.resize(grid.size() * space.num_dofs());
  for (Index i = 0; i < grid.size(); ++i)
    for (Index d = 0; d < space.num_dofs(); ++d) out.coefficients(i * space.num_dofs() + d) = x(global(i, d));
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline FullSolution cg_fem_solve(const MesoGrid& grid, const CellSpace& space, const SeparatedField& k,
                                 const SeparatedField& f, Index max_dofs = default_max_dofs) {
  return cg_fem_solve(grid, space, k, f.to_dense(grid.size(), space.num_dofs()), max_dofs);
}

struct ErrorMetrics {
  double energy = 0.0;  ///< ||a - b||_E / ||b||_E
  double l2 = 0.0;      ///< ||a - b||_L2 / ||b||_L2
  bool absolute = false;  ///< set when ||b|| = 0 and the values are absolute
};

/// Relative errors of `a` against the reference `b`, both in matrix form.
inline ErrorMetrics compare(const Mat& a, const Mat& b, const SeparatedOperator& op, const CellSpace& space) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("compare: shape mismatch");
  const Mat e = a - b;
  const SpMat mass = mass_matrix(space);
  auto l2 = [&](const Mat& v) { return std::sqrt(std::max(0.0, (v.array() * (v * mass).array()).sum())); };
  ErrorMetrics m;
  const double en = energy_norm(op, b);
  const double ln = l2(b);
  m.absolute = en == 0.0 || ln == 0.0;
  m.energy = energy_norm(op, e) / (m.absolute ? 1.0 : en);
  m.l2 = l2(e) / (m.absolute ? 1.0 : ln);
  return m;
}

inline ErrorMetrics compare(const FullSolution& a, const FullSolution& b, const SeparatedOperator& op,
                            const CellSpace& space) {
  return compare(a.as_matrix(), b.as_matrix(), op, space);
}

}  // namespace qpdg
