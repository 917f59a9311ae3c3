#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace qpdg {

using Index = Eigen::Index;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// Thrown when a numerical procedure cannot deliver a trustworthy result
/// (singular reduced system, loss of positivity, eigen-solver failure).
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Face of the reference cell, named by its outward normal.
enum class Side : int { x_minus = -1, x_plus = 1, y_minus = -2, y_plus = 2 };

inline constexpr Side all_sides[4] = {Side::x_plus, Side::x_minus, Side::y_plus,
                                      Side::y_minus};

inline constexpr int axis_of(Side s) { return (static_cast<int>(s) > 0 ? static_cast<int>(s) : -static_cast<int>(s)) - 1; }
inline constexpr double sign_of(Side s) { return static_cast<int>(s) > 0 ? 1.0 : -1.0; }
inline constexpr Side opposite(Side s) { return static_cast<Side>(-static_cast<int>(s)); }

inline std::string to_string(Side s) {
  switch (s) {
    case Side::x_minus: return "x-";
    case Side::x_plus: return "x+";
    case Side::y_minus: return "y-";
    case Side::y_plus: return "y+";
  }
  return "?";
}

/// Shortest round-trip decimal form of a double.
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline SpMat from_triplets(Index rows, Index cols, const std::vector<Triplet>& t) {
  SpMat m(rows, cols);
  m.setFromTriplets(t.begin(), t.end());
  m.makeCompressed();
  return m;
}

/// SplitMix64 finaliser; the basis of every seeded draw in the library.
inline constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based uniform draw in [0, 1): stream `seed`, position `counter`.
inline double uniform01(std::uint64_t seed, std::uint64_t counter) {
  const std::uint64_t bits = mix64(mix64(seed) ^ mix64(counter + 0x632be59bd9b4e019ULL));
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace qpdg
