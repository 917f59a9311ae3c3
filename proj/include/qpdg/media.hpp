#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include <Eigen/SVD>

#include "qpdg/cell_fem.hpp"
#include "qpdg/meso_grid.hpp"

namespace qpdg {

/// A scalar field on I x Y held as a sum of products
/// (vector over cells) x (nodal field on the reference cell).
struct SeparatedField {
  std::vector<Vec> meso;
  std::vector<Vec> cell;

  Index rank() const { return static_cast<Index>(meso.size()); }

  void add(Vec m, Vec c) {
    if (!meso.empty() && (m.size() != meso.front().size() || c.size() != cell.front().size()))
      throw std::invalid_argument("SeparatedField::add: inconsistent term sizes");
    meso.push_back(std::move(m));
    cell.push_back(std::move(c));
  }

  /// Nodal values as a (#I x dim V_h(Y)) matrix.
  Mat to_dense(Index n_cells, Index n_dofs) const {
    Mat out = Mat::Zero(n_cells, n_dofs);
    for (std::size_t k = 0; k < meso.size(); ++k) out.noalias() += meso[k] * cell[k].transpose();
    return out;
  }

  double operator()(Index i, Index node) const {
    double v = 0.0;
    for (std::size_t k = 0; k < meso.size(); ++k) v += meso[k](i) * cell[k](node);
    return v;
  }
};

/// Per-cell bounds of the conductivity.
struct CellBounds {
  Vec k_minus;
  Vec k_plus;
};

enum class PatternKind { missing_fibre, undulating_fibre, missing_inclusion };

inline PatternKind parse_pattern(std::string_view name) {
  if (name == "missing_fibre" || name == "missing_fibres") return PatternKind::missing_fibre;
  if (name == "undulating_fibre" || name == "undulating_fibres") return PatternKind::undulating_fibre;
  if (name == "missing_inclusion" || name == "missing_inclusions") return PatternKind::missing_inclusion;
  throw std::invalid_argument("unknown pattern '" + std::string(name) + "'");
}

inline std::string to_string(PatternKind k) {
  switch (k) {
    case PatternKind::missing_fibre: return "missing_fibres";
    case PatternKind::undulating_fibre: return "undulating_fibres";
    case PatternKind::missing_inclusion: return "missing_inclusions";
  }
  return "?";
}

/// Reference-cell extent each pattern is defined on.
inline std::array<double, 2> pattern_extent(PatternKind k) {
  return k == PatternKind::missing_fibre ? std::array<double, 2>{1.0, 5.0} : std::array<double, 2>{1.0, 1.0};
}

/// Sound (first) and faulty (second) conductivity of a cell.
struct PatternPair {
  Vec sound;
  Vec faulty;
};

namespace detail {
inline constexpr double geometry_eps = 1e-12;
inline constexpr double contrast = 99.0;

inline Vec indicator(const CellSpace& space, const std::function<bool(double, double)>& inside) {
  return space.interpolate([&](double x, double y) { return inside(x, y) ? 1.0 : 0.0; });
}
}  // namespace detail

/// Fibre half-width of the cross patterns: arms of width 1 - 2^{-1/2} cover
/// half of the unit cell.
inline double cross_arm_width() { return 1.0 - 1.0 / std::sqrt(2.0); }

/// Centreline of the bent fibre in the faulty cross pattern.
inline double bent_fibre_centre(double y) {
  const double s = std::sin(M_PI * y);
  return 0.5 + 0.25 * s * s;
}

/// Nodal interpolants of the two cell conductivities of a test pattern.
/// Features are closed sets; a node inside gets 100, outside 1.
inline PatternPair pattern(PatternKind kind, const CellSpace& space) {
  const auto want = pattern_extent(kind);
  if (std::abs(space.extent()[0] - want[0]) > 1e-12 || std::abs(space.extent()[1] - want[1]) > 1e-12)
    throw std::invalid_argument("pattern: cell extent does not match pattern " + to_string(kind));
  using detail::geometry_eps;
  const Vec one = space.ones();
  switch (kind) {
    case PatternKind::missing_fibre: {
      const Vec chi = detail::indicator(space, [](double x, double) {
        return x >= 0.25 - geometry_eps && x <= 0.75 + geometry_eps;
      });
      return {one + detail::contrast * chi, one};
    }
    case PatternKind::undulating_fibre: {
      const double half = 0.5 * cross_arm_width() + geometry_eps;
      const Vec straight = detail::indicator(space, [half](double x, double y) {
        return std::abs(x - 0.5) <= half || std::abs(y - 0.5) <= half;
      });
      const Vec bent = detail::indicator(space, [half](double x, double y) {
        return std::abs(x - bent_fibre_centre(y)) <= half || std::abs(y - 0.5) <= half;
      });
      return {one + detail::contrast * straight, one + detail::contrast * bent};
    }
    case PatternKind::missing_inclusion: {
      const double lo = (2.0 - std::sqrt(2.0)) / 4.0 - geometry_eps;
      const double hi = (2.0 + std::sqrt(2.0)) / 4.0 + geometry_eps;
      const Vec chi = detail::indicator(space, [lo, hi](double x, double y) {
        return x >= lo && x <= hi && y >= lo && y <= hi;
      });
      return {one + detail::contrast * chi, one};
    }
  }
  throw std::invalid_argument("pattern: unknown kind");
}

/// B(i) in {0, 1} with P(B(i) = 0) = p. Draws are indexed by cell id, so grids
/// of different sizes sharing a seed share their leading draws.
inline Vec sound_mask(Index n_cells, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("defect probability must lie in [0, 1]");
  Vec b(n_cells);
  for (Index i = 0; i < n_cells; ++i)
    b(i) = uniform01(seed, static_cast<std::uint64_t>(i)) >= p ? 1.0 : 0.0;
  return b;
}

/// K = B (x) K1 + (1 - B) (x) K2 with i.i.d. Bernoulli B. Collapses to a single
/// term when B is constant.
inline SeparatedField bernoulli_conductivity(const MesoGrid& grid, const Vec& sound, const Vec& faulty, double p,
                                             std::uint64_t seed) {
  if (sound.size() != faulty.size()) throw std::invalid_argument("bernoulli_conductivity: field size mismatch");
  if ((sound.array() <= 0.0).any() || (faulty.array() <= 0.0).any())
    throw std::invalid_argument("bernoulli_conductivity: conductivities must be strictly positive");
  const Vec b = sound_mask(grid.size(), p, seed);
  SeparatedField k;
  const Vec ones = Vec::Ones(grid.size());
  if (b.sum() == static_cast<double>(grid.size())) {
    k.add(ones, sound);
  } else if (b.sum() == 0.0) {
    k.add(ones, faulty);
  } else {
    k.add(b, sound);
    k.add(ones - b, faulty);
  }
  return k;
}

/// Nodal min / max of K in each cell; exact bounds for Q1 interpolants.
inline CellBounds cell_bounds(const SeparatedField& k, Index n_cells, Index n_dofs) {
  const Mat values = k.to_dense(n_cells, n_dofs);
  CellBounds b{values.rowwise().minCoeff(), values.rowwise().maxCoeff()};
  if ((b.k_minus.array() <= 0.0).any()) throw std::invalid_argument("cell_bounds: conductivity is not positive");
  return b;
}

/// f = div(K e_1) realised cell by cell; the interface part is dropped.
inline SeparatedField corrector_source(const SeparatedField& k, const CellSpace& space) {
  SeparatedField f;
  for (Index n = 0; n < k.rank(); ++n)
    f.add(k.meso[static_cast<std::size_t>(n)], lumped_derivative(space, k.cell[static_cast<std::size_t>(n)], 0));
  return f;
}

inline SeparatedField uniform_source(const MesoGrid& grid, const CellSpace& space) {
  SeparatedField f;
  f.add(Vec::Ones(grid.size()), space.ones());
  return f;
}

/// Nodal values of exp(-decay |x - centre|) on I x Y (full rank in general).
inline Mat peak_source(const MesoGrid& grid, const CellSpace& space, std::array<double, 2> centre, double decay) {
  Mat f(grid.size(), space.num_dofs());
  for (Index i = 0; i < grid.size(); ++i) {
    const auto o = grid.origin(i);
    for (Index d = 0; d < space.num_dofs(); ++d) {
      const auto y = space.point(d);
      f(i, d) = std::exp(-decay * std::hypot(o[0] + y[0] - centre[0], o[1] + y[1] - centre[1]));
    }
  }
  return f;
}

inline Mat peak_source(const MesoGrid& grid, const CellSpace& space) {
  const auto e = grid.domain_extent();
  return peak_source(grid, space, {0.5 * e[0], 0.5 * e[1]}, 10.0);
}

/// Truncated SVD: the smallest rank r with ||full - approx||_F <= tol ||full||_F.
/// Terms are ordered by decreasing singular value; cell factors are unit vectors.
inline SeparatedField svd_compress(const Mat& full, double tol) {
  if (!(tol > 0.0 && tol < 1.0)) throw std::invalid_argument("svd_compress: tolerance must lie in (0, 1)");
  SeparatedField out;
  const double total = full.norm();
  if (total == 0.0) return out;
  Eigen::BDCSVD<Mat> svd(full, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec& s = svd.singularValues();
  // tail(r) = sqrt(sum_{k >= r} s_k^2)
  Vec tail(s.size() + 1);
  tail(s.size()) = 0.0;
  for (Index k = s.size() - 1; k >= 0; --k) tail(k) = std::hypot(tail(k + 1), s(k));
  Index r = 0;
  while (r < s.size() && tail(r) > tol * total) ++r;
  for (Index k = 0; k < r; ++k) out.add(svd.matrixU().col(k) * s(k), svd.matrixV().col(k));
  return out;
}

}  // namespace qpdg
