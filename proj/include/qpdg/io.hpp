#pragma once

#include <ostream>

#include "qpdg/cell_fem.hpp"
#include "qpdg/lowrank_solver.hpp"
#include "qpdg/meso_grid.hpp"

namespace qpdg {

/// x,y,cell,value rows of a broken field in matrix form (#I x dim V_h(Y)),
/// one per cell dof, in global coordinates. Interface nodes appear once per
/// adjacent cell.
inline void write_field_table(std::ostream& os, const MesoGrid& grid, const CellSpace& space, const Mat& u) {
  if (u.rows() != grid.size() || u.cols() != space.num_dofs())
    throw std::invalid_argument("write_field_table: field dimensions mismatch");
  os << "x,y,cell,value\n";
  for (Index i = 0; i < grid.size(); ++i) {
    const auto o = grid.origin(i);
    for (Index d = 0; d < space.num_dofs(); ++d) {
      const auto y = space.point(d);
      os << fmt_double(o[0] + y[0]) << ',' << fmt_double(o[1] + y[1]) << ',' << i << ',' << fmt_double(u(i, d))
         << '\n';
    }
  }
}

/// Factors of a separated solution: a header line, then one row per term of
/// the form kind,k,values... with kind meso or cell.
inline void write_separated(std::ostream& os, const SeparatedTensor& u) {
  os << "# rank " << u.rank() << " n_cells " << u.meso.rows() << " n_dofs " << u.cell.rows() << '\n';
  auto row = [&](const char* kind, Index k, const auto& v) {
    os << kind << ',' << k;
    for (Index a = 0; a < v.size(); ++a) os << ',' << fmt_double(v(a));
    os << '\n';
  };
  for (Index k = 0; k < u.rank(); ++k) {
    row("meso", k, u.meso.col(k));
    row("cell", k, u.cell.col(k));
  }
}

}  // namespace qpdg
