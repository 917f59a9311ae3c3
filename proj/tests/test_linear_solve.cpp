#include <gtest/gtest.h>

#include <Eigen/Cholesky>
#include <random>

#include "qpdg/linear_solve.hpp"

using namespace qpdg;

namespace {
// periodic path Laplacian: semidefinite with the constants as kernel
SpMat ring_laplacian(Index n, double scale = 1.0) {
  std::vector<Triplet> t;
  for (Index i = 0; i < n; ++i) {
    const Index j = (i + 1) % n;
    t.emplace_back(i, i, scale);
    t.emplace_back(j, j, scale);
    t.emplace_back(i, j, -scale);
    t.emplace_back(j, i, -scale);
  }
  return from_triplets(n, n, t);
}

// I (x) L + L (x) I on an n x n torus, block-major
SpMat torus_laplacian(Index n) {
  const Mat l = Mat(ring_laplacian(n));
  const Mat id = Mat::Identity(n, n);
  Mat a = Mat::Zero(n * n, n * n);
  for (Index b = 0; b < n; ++b) {
    a.block(b * n, b * n, n, n) += l;
    for (Index c = 0; c < n; ++c) a.block(b * n, c * n, n, n) += l(b, c) * id;
  }
  return a.sparseView();
}

Vec random_vec(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Vec v(n);
  for (Index i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}
}  // namespace

TEST(RankOneSpdSolver, MatchesDenseSolveOnSemidefiniteMatrix) {
  const SpMat s = ring_laplacian(30);
  const Vec h = Vec::Constant(30, 0.2) + 0.01 * random_vec(30, 1).cwiseAbs();
  const Vec b = random_vec(30, 2);
  const Mat a = Mat(s) + h * h.transpose();
  const Vec ref = a.ldlt().solve(b);
  RankOneSpdSolver solver(s, h);
  const Vec x = solver.solve(b);
  EXPECT_LE((x - ref).norm(), 1e-10 * ref.norm());
  EXPECT_LE(solver.last_backward_error(), 1e-14);
  EXPECT_LE((solver.apply(x) - b).norm(), 1e-12 * b.norm());
}

TEST(RankOneSpdSolver, DefiniteMatrixWithoutRankOneTerm) {
  SpMat s = ring_laplacian(12);
  for (Index i = 0; i < 12; ++i) s.coeffRef(i, i) += 1.0;
  const Vec b = random_vec(12, 3);
  const Vec x = RankOneSpdSolver(s, Vec()).solve(b);
  EXPECT_LE((Mat(s) * x - b).norm(), 1e-12 * b.norm());
  EXPECT_EQ(RankOneSpdSolver(s, Vec()).solve(Vec::Zero(12)).norm(), 0.0);
}

TEST(RankOneSpdSolver, BlockPinning) {
  // C (x) L + D (x) I with D = [1 -1; -1 1]: the kernel is the global
  // constant only, and h changes sign between the blocks
  const Index n = 5, nb = 2, m = n * n;
  const Mat l = Mat(torus_laplacian(n));
  Eigen::Matrix2d c;
  c << 2.0, 0.7, 0.7, 1.0;
  Mat a = Mat::Zero(nb * m, nb * m);
  for (Index p = 0; p < nb; ++p)
    for (Index q = 0; q < nb; ++q)
      a.block(p * m, q * m, m, m) = c(p, q) * l + (p == q ? 1.0 : -1.0) * Mat::Identity(m, m);
  const SpMat s = a.sparseView();
  Vec h(nb * m);
  h.head(m).setConstant(0.3);
  h.tail(m).setConstant(-0.8);
  RankOneSpdSolver::Options opt;
  opt.block_size = m;
  opt.pin_offset = 7;
  RankOneSpdSolver solver(s, h, opt);
  const Vec b = random_vec(nb * m, 5);
  const Vec x = solver.solve(b);
  const Vec ref = (a + h * h.transpose()).ldlt().solve(b);
  EXPECT_LE((x - ref).norm(), 1e-9 * ref.norm());
}

TEST(RankOneSpdSolver, IllConditionedStillBackwardStable) {
  // smooth part of size 1 against an O(1e7) penalty, as in the SWIP systems
  const Index n = 40;
  SpMat s = ring_laplacian(n, 1.0);
  for (Index i = 0; i < n; i += 8) {
    const Index j = (i + 1) % n;
    s.coeffRef(i, i) += 1e7;
    s.coeffRef(j, j) += 1e7;
    s.coeffRef(i, j) -= 1e7;
    s.coeffRef(j, i) -= 1e7;
  }
  const Vec h = Vec::Constant(n, 1.0 / n);
  RankOneSpdSolver solver(s, h);
  const Vec b = random_vec(n, 8);
  const Vec x = solver.solve(b);
  EXPECT_LE(solver.last_backward_error(), 1e-14);
  const Vec ref = (Mat(s) + h * h.transpose()).ldlt().solve(b);
  EXPECT_LE((x - ref).norm(), 1e-6 * ref.norm());
}

TEST(RankOneSpdSolver, AccurateResidualDrivesRefinement) {
  const SpMat s = ring_laplacian(20);
  const Vec h = Vec::Constant(20, 0.5);
  RankOneSpdSolver solver(s, h);
  int calls = 0;
  solver.set_residual([&](const Vec& x, const Vec& b) {
    ++calls;
    return Vec(b - (s * x + h * h.dot(x)));
  });
  const Vec b = random_vec(20, 9);
  const Vec x = solver.solve(b);
  EXPECT_GE(calls, 1);
  EXPECT_LE(solver.last_residual(), 1e-12);
  EXPECT_LE((solver.apply(x) - b).norm(), 1e-12 * b.norm());
}

TEST(RankOneSpdSolver, Errors) {
  const SpMat s = ring_laplacian(6);
  EXPECT_THROW(RankOneSpdSolver(SpMat(3, 4), Vec()), std::invalid_argument);
  EXPECT_THROW(RankOneSpdSolver(s, Vec::Ones(5)), std::invalid_argument);
  // singular without a rank-one term
  EXPECT_THROW(RankOneSpdSolver(s, Vec()), SolverError);
  RankOneSpdSolver::Options opt;
  opt.block_size = 4;
  EXPECT_THROW(RankOneSpdSolver(s, Vec::Ones(6), opt), std::invalid_argument);
  Vec h = Vec::Ones(6);
  h(0) = 0.0;
  EXPECT_THROW(RankOneSpdSolver(s, h), SolverError);
}

TEST(PatternStack, CombineIsLinearCombination) {
  const SpMat a = ring_laplacian(8);
  SpMat b(8, 8);
  b.insert(0, 5) = 2.0;
  b.insert(3, 3) = -1.0;
  b.makeCompressed();
  const PatternStack st({&a, &b});
  Vec w(2);
  w << 0.5, 3.0;
  EXPECT_TRUE(Mat(st.combine(w)).isApprox(0.5 * Mat(a) + 3.0 * Mat(b)));
  EXPECT_EQ(st.count(), 2);
  EXPECT_THROW(PatternStack({}), std::invalid_argument);
}

TEST(PatternStack, BlockCombineIsKroneckerSum) {
  const SpMat a = ring_laplacian(4);
  SpMat b(4, 4);
  b.insert(1, 2) = 1.5;
  b.makeCompressed();
  const PatternStack st({&a, &b});
  Mat c0(2, 2), c1(2, 2);
  c0 << 1, 2, 3, 4;
  c1 << -1, 0.5, 0, 2;
  const Mat got = Mat(st.block_combine({c0, c1}));
  Mat expect = Mat::Zero(8, 8);
  for (Index l = 0; l < 2; ++l)
    for (Index m = 0; m < 2; ++m) expect.block(l * 4, m * 4, 4, 4) = c0(l, m) * Mat(a) + c1(l, m) * Mat(b);
  EXPECT_TRUE(got.isApprox(expect));
}
