#pragma once

#include <array>
#include <cmath>
#include <functional>

#include <Eigen/Eigenvalues>

#include "qpdg/common.hpp"

namespace qpdg {

/// Bilinear (Q1) finite element space on a structured grid of the reference
/// cell Y = ]0, Lx[ x ]0, Ly[.
///
/// Node (a, b), 0 <= a <= nex, 0 <= b <= ney, carries dof a + (nex + 1) b.
/// All matrices built from a CellSpace are indexed (test, trial), so that the
/// bilinear form evaluates as form(u, v) = v^T A u.
class CellSpace {
 public:
  CellSpace(std::array<Index, 2> n_el, std::array<double, 2> extent)
      : n_el_(n_el), extent_(extent) {
    if (n_el[0] < 1 || n_el[1] < 1)
      throw std::invalid_argument("CellSpace: element counts must be positive");
    if (!(extent[0] > 0.0) || !(extent[1] > 0.0) || !std::isfinite(extent[0]) ||
        !std::isfinite(extent[1]))
      throw std::invalid_argument("CellSpace: degenerate cell extent");
    h_ = {extent[0] / static_cast<double>(n_el[0]), extent[1] / static_cast<double>(n_el[1])};
  }

  const std::array<Index, 2>& elements() const { return n_el_; }
  const std::array<double, 2>& extent() const { return extent_; }
  const std::array<double, 2>& h() const { return h_; }
  double measure() const { return extent_[0] * extent_[1]; }
  Index nodes_x() const { return n_el_[0] + 1; }
  Index nodes_y() const { return n_el_[1] + 1; }
  Index num_dofs() const { return nodes_x() * nodes_y(); }

  Index dof(Index a, Index b) const { return a + nodes_x() * b; }
  std::array<Index, 2> node(Index d) const { return {d % nodes_x(), d / nodes_x()}; }
  std::array<double, 2> point(Index d) const {
    const auto n = node(d);
    return {static_cast<double>(n[0]) * h_[0], static_cast<double>(n[1]) * h_[1]};
  }

  /// Local node order (0,0), (1,0), (0,1), (1,1).
  std::array<Index, 4> element_dofs(Index ex, Index ey) const {
    return {dof(ex, ey), dof(ex + 1, ey), dof(ex, ey + 1), dof(ex + 1, ey + 1)};
  }

  double face_measure(Side s) const { return axis_of(s) == 0 ? extent_[1] : extent_[0]; }

  /// Dofs on the face, ordered by increasing tangential coordinate.
  std::vector<Index> boundary_dofs(Side s) const {
    std::vector<Index> out;
    switch (s) {
      case Side::x_minus:
      case Side::x_plus: {
        const Index a = s == Side::x_plus ? n_el_[0] : 0;
        for (Index b = 0; b < nodes_y(); ++b) out.push_back(dof(a, b));
        break;
      }
      case Side::y_minus:
      case Side::y_plus: {
        const Index b = s == Side::y_plus ? n_el_[1] : 0;
        for (Index a = 0; a < nodes_x(); ++a) out.push_back(dof(a, b));
        break;
      }
    }
    return out;
  }

  bool on_side(Index d, Side s) const {
    const auto n = node(d);
    switch (s) {
      case Side::x_minus: return n[0] == 0;
      case Side::x_plus: return n[0] == n_el_[0];
      case Side::y_minus: return n[1] == 0;
      case Side::y_plus: return n[1] == n_el_[1];
    }
    return false;
  }

  /// tau_s: maps a dof on face s to its periodic image on the opposite face.
  Index translate(Index d, Side s) const {
    if (!on_side(d, s)) throw std::invalid_argument("CellSpace::translate: dof not on face");
    auto n = node(d);
    switch (s) {
      case Side::x_minus: n[0] = n_el_[0]; break;
      case Side::x_plus: n[0] = 0; break;
      case Side::y_minus: n[1] = n_el_[1]; break;
      case Side::y_plus: n[1] = 0; break;
    }
    return dof(n[0], n[1]);
  }

  Vec interpolate(const std::function<double(double, double)>& g) const {
    Vec out(num_dofs());
    for (Index d = 0; d < num_dofs(); ++d) {
      const auto p = point(d);
      out(d) = g(p[0], p[1]);
    }
    return out;
  }

  Vec ones() const { return Vec::Ones(num_dofs()); }

  /// Evaluate a nodal field at a point of the closed reference cell.
  double evaluate(const Vec& field, double x, double y) const {
    Index ex = std::min<Index>(static_cast<Index>(std::floor(x / h_[0])), n_el_[0] - 1);
    Index ey = std::min<Index>(static_cast<Index>(std::floor(y / h_[1])), n_el_[1] - 1);
    ex = std::max<Index>(ex, 0);
    ey = std::max<Index>(ey, 0);
    const double xi = x / h_[0] - static_cast<double>(ex);
    const double eta = y / h_[1] - static_cast<double>(ey);
    const auto dofs = element_dofs(ex, ey);
    const auto phi = shape(xi, eta);
    double v = 0.0;
    for (int k = 0; k < 4; ++k) v += phi[static_cast<std::size_t>(k)] * field(dofs[static_cast<std::size_t>(k)]);
    return v;
  }

  // Element-level helpers on the unit parent square.
  static std::array<double, 4> shape(double xi, double eta) {
    return {(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta};
  }
  /// Physical gradients of the four shape functions.
  std::array<std::array<double, 2>, 4> grad(double xi, double eta) const {
    return {{{-(1 - eta) / h_[0], -(1 - xi) / h_[1]},
             {(1 - eta) / h_[0], -xi / h_[1]},
             {-eta / h_[0], (1 - xi) / h_[1]},
             {eta / h_[0], xi / h_[1]}}};
  }

  /// Two-point Gauss rule on [0, 1].
  static constexpr std::array<double, 2> gauss_points() {
    return {0.5 - 0.28867513459481287, 0.5 + 0.28867513459481287};
  }
  static constexpr double gauss_weight = 0.5;

  /// One quadrature point on a face: parent coordinates, physical weight and
  /// the element holding it.
  struct EdgePoint {
    Index ex, ey;
    double xi, eta, weight;
  };

  std::vector<EdgePoint> edge_points(Side s) const {
    std::vector<EdgePoint> pts;
    const auto g = gauss_points();
    if (axis_of(s) == 0) {
      const Index ex = s == Side::x_plus ? n_el_[0] - 1 : 0;
      const double xi = s == Side::x_plus ? 1.0 : 0.0;
      for (Index ey = 0; ey < n_el_[1]; ++ey)
        for (double t : g) pts.push_back({ex, ey, xi, t, gauss_weight * h_[1]});
    } else {
      const Index ey = s == Side::y_plus ? n_el_[1] - 1 : 0;
      const double eta = s == Side::y_plus ? 1.0 : 0.0;
      for (Index ex = 0; ex < n_el_[0]; ++ex)
        for (double t : g) pts.push_back({ex, ey, t, eta, gauss_weight * h_[0]});
    }
    return pts;
  }

 private:
  std::array<Index, 2> n_el_;
  std::array<double, 2> extent_;
  std::array<double, 2> h_;
};

namespace detail {

template <class Kernel>
SpMat assemble_volume(const CellSpace& space, Kernel&& kernel) {
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(16 * space.elements()[0] * space.elements()[1] * 4));
  const auto g = CellSpace::gauss_points();
  const double w = CellSpace::gauss_weight * CellSpace::gauss_weight * space.h()[0] * space.h()[1];
  for (Index ey = 0; ey < space.elements()[1]; ++ey)
    for (Index ex = 0; ex < space.elements()[0]; ++ex) {
      const auto dofs = space.element_dofs(ex, ey);
      for (double xi : g)
        for (double eta : g)
          for (std::size_t te = 0; te < 4; ++te)
            for (std::size_t tr = 0; tr < 4; ++tr)
              t.emplace_back(dofs[te], dofs[tr], w * kernel(dofs, xi, eta, te, tr));
    }
  return from_triplets(space.num_dofs(), space.num_dofs(), t);
}

inline double interp(const Vec& f, const std::array<Index, 4>& dofs, const std::array<double, 4>& phi) {
  return phi[0] * f(dofs[0]) + phi[1] * f(dofs[1]) + phi[2] * f(dofs[2]) + phi[3] * f(dofs[3]);
}

/// Face integrals of trace(test) x (trial kernel). When `shift_test` is set the
/// test function is composed with the periodic translation (row dofs land on
/// the opposite face).
template <class TrialKernel>
SpMat assemble_face(const CellSpace& space, Side s, bool shift_test, TrialKernel&& trial) {
  std::vector<Triplet> t;
  for (const auto& p : space.edge_points(s)) {
    const auto dofs = space.element_dofs(p.ex, p.ey);
    const auto phi = CellSpace::shape(p.xi, p.eta);
    for (std::size_t te = 0; te < 4; ++te) {
      if (phi[te] == 0.0 || !space.on_side(dofs[te], s)) continue;
      const Index row = shift_test ? space.translate(dofs[te], s) : dofs[te];
      for (std::size_t tr = 0; tr < 4; ++tr)
        t.emplace_back(row, dofs[tr], p.weight * phi[te] * trial(dofs, p, phi, tr));
    }
  }
  return from_triplets(space.num_dofs(), space.num_dofs(), t);
}

}  // namespace detail

/// M(u, v) = int_Y u v.
inline SpMat mass_matrix(const CellSpace& space) {
  return detail::assemble_volume(space, [](const auto&, double xi, double eta, std::size_t te, std::size_t tr) {
    const auto phi = CellSpace::shape(xi, eta);
    return phi[te] * phi[tr];
  });
}

/// N[psi](u, v) = int_Y psi grad u . grad v, psi given by nodal values.
inline SpMat stiffness_matrix(const CellSpace& space, const Vec& psi) {
  if (psi.size() != space.num_dofs()) throw std::invalid_argument("stiffness_matrix: field size mismatch");
  return detail::assemble_volume(space, [&](const auto& dofs, double xi, double eta, std::size_t te, std::size_t tr) {
    const auto phi = CellSpace::shape(xi, eta);
    const auto dphi = space.grad(xi, eta);
    return detail::interp(psi, dofs, phi) * (dphi[te][0] * dphi[tr][0] + dphi[te][1] * dphi[tr][1]);
  });
}

/// M0^s(u, v) = int_{dY_s} u v.
inline SpMat boundary_mass(const CellSpace& space, Side s) {
  return detail::assemble_face(space, s, false, [](const auto&, const auto&, const auto& phi, std::size_t tr) {
    return phi[tr];
  });
}

/// M1^s(u, v) = int_{dY_s} u (v o tau_s).
inline SpMat boundary_coupling(const CellSpace& space, Side s) {
  return detail::assemble_face(space, s, true, [](const auto&, const auto&, const auto& phi, std::size_t tr) {
    return phi[tr];
  });
}

/// N0^s[psi](u, v) = int_{dY_s} psi (e_s / 2) . grad u  v, gradient taken inside Y.
inline SpMat boundary_flux(const CellSpace& space, Side s, const Vec& psi) {
  if (psi.size() != space.num_dofs()) throw std::invalid_argument("boundary_flux: field size mismatch");
  const int ax = axis_of(s);
  const double half = 0.5 * sign_of(s);
  return detail::assemble_face(space, s, false, [&](const auto& dofs, const auto& p, const auto& phi, std::size_t tr) {
    return detail::interp(psi, dofs, phi) * half * space.grad(p.xi, p.eta)[tr][static_cast<std::size_t>(ax)];
  });
}

/// N1^s[psi](u, v) = int_{dY_s} psi (e_s / 2) . grad u  (v o tau_s).
inline SpMat boundary_flux_coupling(const CellSpace& space, Side s, const Vec& psi) {
  if (psi.size() != space.num_dofs()) throw std::invalid_argument("boundary_flux_coupling: field size mismatch");
  const int ax = axis_of(s);
  const double half = 0.5 * sign_of(s);
  return detail::assemble_face(space, s, true, [&](const auto& dofs, const auto& p, const auto& phi, std::size_t tr) {
    return detail::interp(psi, dofs, phi) * half * space.grad(p.xi, p.eta)[tr][static_cast<std::size_t>(ax)];
  });
}

/// int_{dY_s} grad u . grad v (full one-sided gradient on the face).
inline SpMat face_gradient_form(const CellSpace& space, Side s) {
  std::vector<Triplet> t;
  for (const auto& p : space.edge_points(s)) {
    const auto dofs = space.element_dofs(p.ex, p.ey);
    const auto dphi = space.grad(p.xi, p.eta);
    for (std::size_t te = 0; te < 4; ++te)
      for (std::size_t tr = 0; tr < 4; ++tr)
        t.emplace_back(dofs[te], dofs[tr],
                       p.weight * (dphi[te][0] * dphi[tr][0] + dphi[te][1] * dphi[tr][1]));
  }
  return from_triplets(space.num_dofs(), space.num_dofs(), t);
}

/// b(v) = int_Y g v for a nodal field g.
inline Vec load_vector(const CellSpace& space, const Vec& g) {
  if (g.size() != space.num_dofs()) throw std::invalid_argument("load_vector: field size mismatch");
  return mass_matrix(space) * g;
}

/// Element-wise derivative along `axis`, projected back to the nodes with the
/// lumped mass matrix.
inline Vec lumped_derivative(const CellSpace& space, const Vec& g, int axis) {
  Vec num = Vec::Zero(space.num_dofs());
  Vec lump = Vec::Zero(space.num_dofs());
  const auto gp = CellSpace::gauss_points();
  const double w = CellSpace::gauss_weight * CellSpace::gauss_weight * space.h()[0] * space.h()[1];
  for (Index ey = 0; ey < space.elements()[1]; ++ey)
    for (Index ex = 0; ex < space.elements()[0]; ++ex) {
      const auto dofs = space.element_dofs(ex, ey);
      for (double xi : gp)
        for (double eta : gp) {
          const auto phi = CellSpace::shape(xi, eta);
          const auto dphi = space.grad(xi, eta);
          double dg = 0.0;
          for (std::size_t k = 0; k < 4; ++k) dg += dphi[k][static_cast<std::size_t>(axis)] * g(dofs[k]);
          for (std::size_t k = 0; k < 4; ++k) {
            num(dofs[k]) += w * dg * phi[k];
            lump(dofs[k]) += w * phi[k];
          }
        }
    }
  return num.cwiseQuotient(lump);
}

/// Discrete trace constant C(V_h(Y), dY_s): the smallest C with
/// ||grad v||_{L2(dY_s)} <= C ||grad v||_{L2(Y)} for all v in V_h(Y).
///
/// Computed as the square root of the largest generalised eigenvalue of the
/// pencil (face gradient form, volume gradient form). The volume form is made
/// definite by adding a multiple of 1 1^T, which leaves the maximum unchanged
/// because both forms annihilate constants.
inline double trace_constant(const CellSpace& space, Side s) {
  const Mat face = Mat(face_gradient_form(space, s));
  Mat vol = Mat(stiffness_matrix(space, space.ones()));
  const double n = static_cast<double>(space.num_dofs());
  vol.array() += vol.trace() / (n * n);
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(face, vol, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw SolverError("trace_constant: generalised eigen-solver failed");
  const double lmax = es.eigenvalues().maxCoeff();
  if (!std::isfinite(lmax) || lmax <= 0.0) throw SolverError("trace_constant: non-finite or non-positive result");
  return std::sqrt(lmax);
}

/// max over the four faces of trace_constant(space, s).
inline double trace_constant(const CellSpace& space) {
  double c = 0.0;
  for (Side s : all_sides) c = std::max(c, trace_constant(space, s));
  return c;
}

}  // namespace qpdg
