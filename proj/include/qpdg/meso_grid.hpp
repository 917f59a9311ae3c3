#pragma once

#include <algorithm>
#include <array>
#include <functional>

#include "qpdg/common.hpp"

namespace qpdg {

/// A face between two cells of the periodic mesoscopic grid.
///
/// The face is the `side` face of `owner` (outward normal e_side, side is
/// x_plus or y_plus) and the opposite face of `neighbor`. External faces are
/// identified with their periodic image and flagged `wrapped`; on grids with a
/// single cell along an axis the face wraps onto its own cell.
struct Face {
  Index owner = 0;
  Index neighbor = 0;
  Side side = Side::x_plus;
  bool wrapped = false;
  double measure = 0.0;
};

/// Mesoscopic partition of a rectangular domain into nx-by-ny translated
/// copies of a reference cell, with periodic face identification.
///
/// Cells are numbered row-major over (ix, iy): i = ix * ny + iy.
class MesoGrid {
 public:
  MesoGrid(Index nx, Index ny, std::array<double, 2> cell_extent)
      : nx_(nx), ny_(ny), extent_(cell_extent) {
    if (nx < 1 || ny < 1) throw std::invalid_argument("MesoGrid: cell counts must be positive");
    if (!(cell_extent[0] > 0.0) || !(cell_extent[1] > 0.0))
      throw std::invalid_argument("MesoGrid: cell extent must be positive");
    faces_.reserve(static_cast<std::size_t>(2 * size()));
    for (Index i = 0; i < size(); ++i) {
      for (Side s : {Side::x_plus, Side::y_plus}) {
        Face f;
        f.owner = i;
        f.neighbor = neighbor(i, s);
        f.side = s;
        const auto [ix, iy] = coords(i);
        f.wrapped = s == Side::x_plus ? ix == nx_ - 1 : iy == ny_ - 1;
        f.measure = s == Side::x_plus ? extent_[1] : extent_[0];
        faces_.push_back(f);
      }
    }
  }

  Index nx() const { return nx_; }
  Index ny() const { return ny_; }
  Index size() const { return nx_ * ny_; }
  const std::array<double, 2>& cell_extent() const { return extent_; }
  std::array<double, 2> domain_extent() const { return {nx_ * extent_[0], ny_ * extent_[1]}; }
  double domain_measure() const { return static_cast<double>(size()) * extent_[0] * extent_[1]; }

  Index index(Index ix, Index iy) const { return ix * ny_ + iy; }
  std::pair<Index, Index> coords(Index i) const { return {i / ny_, i % ny_}; }

  /// Translation offset of cell i: x = origin(i) + y for y in the reference cell.
  std::array<double, 2> origin(Index i) const {
    const auto [ix, iy] = coords(i);
    return {static_cast<double>(ix) * extent_[0], static_cast<double>(iy) * extent_[1]};
  }

  /// The cell across the `s` face of cell i, periodic wrap included.
  Index neighbor(Index i, Side s) const {
    auto [ix, iy] = coords(i);
    switch (s) {
      case Side::x_plus: ix = (ix + 1) % nx_; break;
      case Side::x_minus: ix = (ix + nx_ - 1) % nx_; break;
      case Side::y_plus: iy = (iy + 1) % ny_; break;
      case Side::y_minus: iy = (iy + ny_ - 1) % ny_; break;
    }
    return index(ix, iy);
  }

  const std::vector<Face>& faces() const { return faces_; }

  /// Every cell of a periodic 2D grid has four faces.
  static constexpr int faces_per_cell = 4;

  double max_face_measure() const { return std::max(extent_[0], extent_[1]); }

 private:
  Index nx_, ny_;
  std::array<double, 2> extent_;
  std::vector<Face> faces_;
};

/// Pair-weight callback (i, j) -> weight used to fill neighbour matrices.
using PairWeight = std::function<double(Index, Index)>;

/// Neighbour matrix: entry (i, j) = w(i, j) when j is the cell across the
/// `s` face of cell i, zero elsewhere. Zero weights are not stored.
inline SpMat chi_matrix(const MesoGrid& grid, Side s, const PairWeight& w) {
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(grid.size()));
  for (Index i = 0; i < grid.size(); ++i) {
    const Index j = grid.neighbor(i, s);
    const double v = w(i, j);
    if (v != 0.0) t.emplace_back(i, j, v);
  }
  return from_triplets(grid.size(), grid.size(), t);
}

/// Diagonal matrix of the row sums of A.
inline SpMat row_sum_diag(const SpMat& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("row_sum_diag: matrix must be square");
  Vec sums = Vec::Zero(a.rows());
  for (Index k = 0; k < a.outerSize(); ++k)
    for (SpMat::InnerIterator it(a, k); it; ++it) sums(it.row()) += it.value();
  std::vector<Triplet> t;
  for (Index i = 0; i < a.rows(); ++i)
    if (sums(i) != 0.0) t.emplace_back(i, i, sums(i));
  return from_triplets(a.rows(), a.cols(), t);
}

inline SpMat diag_matrix(const Vec& d) {
  std::vector<Triplet> t;
  for (Index i = 0; i < d.size(); ++i)
    if (d(i) != 0.0) t.emplace_back(i, i, d(i));
  return from_triplets(d.size(), d.size(), t);
}

}  // namespace qpdg
