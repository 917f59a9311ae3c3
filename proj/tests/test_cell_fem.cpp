#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <random>

#include "qpdg/cell_fem.hpp"

using namespace qpdg;

namespace {
double bilinear(const Vec& u, const SpMat& a, const Vec& v) { return v.dot(a * u); }

// max over faces of sqrt(lambda_max) of the dense pencil (face form, volume form + 1 1^T)
double dense_trace_constant(const CellSpace& s) {
  double c = 0.0;
  const Mat vol = Mat(stiffness_matrix(s, s.ones())) + Mat::Ones(s.num_dofs(), s.num_dofs());
  for (Side side : all_sides) {
    Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(Mat(face_gradient_form(s, side)), vol);
    c = std::max(c, std::sqrt(es.eigenvalues().maxCoeff()));
  }
  return c;
}
}  // namespace

TEST(CellSpace, NumberingAndPoints) {
  const CellSpace s({4, 3}, {2.0, 1.5});
  EXPECT_EQ(s.num_dofs(), 20);
  EXPECT_EQ(s.dof(2, 1), 2 + 5 * 1);
  const auto p = s.point(s.dof(4, 3));
  EXPECT_DOUBLE_EQ(p[0], 2.0);
  EXPECT_DOUBLE_EQ(p[1], 1.5);
  EXPECT_THROW(CellSpace({0, 2}, {1.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(CellSpace({2, 2}, {1.0, -1.0}), std::invalid_argument);
}

TEST(CellSpace, TranslateIsPeriodicImage) {
  const CellSpace s({3, 4}, {1.0, 1.0});
  for (Side side : all_sides) {
    const auto a = s.boundary_dofs(side);
    const auto b = s.boundary_dofs(opposite(side));
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      EXPECT_EQ(s.translate(a[k], side), b[k]);
      EXPECT_EQ(s.translate(b[k], opposite(side)), a[k]);
    }
  }
  EXPECT_THROW(s.translate(s.dof(1, 1), Side::x_plus), std::invalid_argument);
}

TEST(CellSpace, BilinearFieldsAreReproduced) {
  const CellSpace s({5, 7}, {1.0, 2.0});
  auto g = [](double x, double y) { return 1.0 + 2.0 * x - y + 3.0 * x * y; };
  const Vec v = s.interpolate(g);
  for (double x : {0.0, 0.13, 0.5, 0.99, 1.0})
    for (double y : {0.0, 0.41, 1.7, 2.0}) EXPECT_NEAR(s.evaluate(v, x, y), g(x, y), 1e-13);
}

TEST(CellMatrices, MassIntegratesExactly) {
  const CellSpace s({6, 4}, {1.0, 5.0});
  const SpMat m = mass_matrix(s);
  EXPECT_NEAR(bilinear(s.ones(), m, s.ones()), 5.0, 1e-12);
  const Vec x = s.interpolate([](double x, double) { return x; });
  const Vec y = s.interpolate([](double, double y) { return y; });
  EXPECT_NEAR(bilinear(x, m, y), 0.5 * 12.5, 1e-12);  // int x y
  EXPECT_NEAR(bilinear(x, m, x), 5.0 / 3.0, 1e-12);
  EXPECT_TRUE(Mat(m).isApprox(Mat(m).transpose(), 1e-15));
  EXPECT_TRUE(load_vector(s, x).isApprox(m * x, 1e-14));
}

TEST(CellMatrices, StiffnessEnergies) {
  const CellSpace s({5, 5}, {1.0, 1.0});
  const SpMat n1 = stiffness_matrix(s, s.ones());
  EXPECT_LT((n1 * s.ones()).norm(), 1e-12);
  const Vec x = s.interpolate([](double x, double) { return x; });
  const Vec xy = s.interpolate([](double x, double y) { return x * y; });
  EXPECT_NEAR(bilinear(x, n1, x), 1.0, 1e-12);
  // int x^2 + y^2 over the unit square
  EXPECT_NEAR(bilinear(xy, n1, xy), 2.0 / 3.0, 1e-12);
  // psi = 1 + x, Q1 interpolation is exact and the 2-point rule integrates (1 + x) exactly
  const SpMat nx = stiffness_matrix(s, s.interpolate([](double x, double) { return 1.0 + x; }));
  EXPECT_NEAR(bilinear(x, nx, x), 1.5, 1e-12);
  EXPECT_THROW(stiffness_matrix(s, Vec::Ones(3)), std::invalid_argument);
}

TEST(CellMatrices, FaceForms) {
  const CellSpace s({4, 6}, {1.0, 2.0});
  const Vec one = s.ones();
  const Vec y = s.interpolate([](double, double y) { return y; });
  const Vec x = s.interpolate([](double x, double) { return x; });
  EXPECT_NEAR(bilinear(one, boundary_mass(s, Side::x_plus), one), 2.0, 1e-12);
  EXPECT_NEAR(bilinear(one, boundary_mass(s, Side::y_minus), one), 1.0, 1e-12);
  // int_0^2 y * y dy along x = 1, the test function translated to x = 0
  EXPECT_NEAR(bilinear(y, boundary_coupling(s, Side::x_plus), y), 8.0 / 3.0, 1e-12);
  // trial lives on the face, test on the opposite face
  const SpMat m1 = boundary_coupling(s, Side::x_plus);
  for (Index d : s.boundary_dofs(Side::x_minus)) EXPECT_GT(Mat(m1).row(d).norm(), 0.0);
  for (Index d : s.boundary_dofs(Side::x_plus)) EXPECT_EQ(Mat(m1).row(d).norm(), 0.0);
  // (e_x / 2) . grad x = 1/2 on x = 1, so the flux form against 1 gives |face| / 2
  EXPECT_NEAR(bilinear(x, boundary_flux(s, Side::x_plus, one), one), 1.0, 1e-12);
  EXPECT_NEAR(bilinear(x, boundary_flux(s, Side::x_minus, one), one), -1.0, 1e-12);
  EXPECT_NEAR(bilinear(x, boundary_flux_coupling(s, Side::x_plus, one), one), 1.0, 1e-12);
  EXPECT_NEAR(bilinear(y, boundary_flux(s, Side::x_plus, one), one), 0.0, 1e-12);
}

TEST(CellMatrices, LumpedDerivativeOfLinearField) {
  const CellSpace s({7, 3}, {1.0, 5.0});
  const Vec f = s.interpolate([](double x, double y) { return 3.0 * x - 2.0 * y; });
  EXPECT_TRUE(lumped_derivative(s, f, 0).isApprox(3.0 * s.ones(), 1e-12));
  EXPECT_TRUE(lumped_derivative(s, f, 1).isApprox(-2.0 * s.ones(), 1e-12));
}

TEST(TraceConstant, SingleElementClosedForm) {
  // max eigenvalue of the pencil on span{x, y, x y}: (3 + sqrt 7) / 2
  const CellSpace s({1, 1}, {1.0, 1.0});
  EXPECT_NEAR(trace_constant(s), std::sqrt(1.5 + 0.5 * std::sqrt(7.0)), 1e-10);
}

TEST(TraceConstant, MatchesDenseEigenOracle) {
  for (auto [n, ey] : {std::pair<Index, double>{4, 1.0}, {6, 5.0}, {8, 1.0}}) {
    const CellSpace s({n, n}, {1.0, ey});
    EXPECT_NEAR(trace_constant(s), dense_trace_constant(s), 1e-9) << n << " " << ey;
  }
}

TEST(TraceConstant, FrozenReferenceValues) {
  EXPECT_NEAR(trace_constant(CellSpace({20, 20}, {1.0, 1.0})), 7.357353465205, 1e-8);
  EXPECT_NEAR(trace_constant(CellSpace({20, 20}, {1.0, 5.0})), 5.096793605611, 1e-8);
  EXPECT_NEAR(trace_constant(CellSpace({10, 10}, {1.0, 1.0})), 5.202434526833, 1e-8);
}

TEST(TraceConstant, BoundsEveryRayleighQuotient) {
  const CellSpace s({6, 6}, {1.0, 1.0});
  const double c = trace_constant(s);
  const SpMat vol = stiffness_matrix(s, s.ones());
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  for (int k = 0; k < 50; ++k) {
    Vec v(s.num_dofs());
    for (Index d = 0; d < v.size(); ++d) v(d) = nd(rng);
    for (Side side : all_sides)
      EXPECT_LE(bilinear(v, face_gradient_form(s, side), v), c * c * bilinear(v, vol, v) * (1.0 + 1e-12));
  }
}

TEST(TraceConstant, ScalesLikeInverseMeshSize) {
  const double c10 = trace_constant(CellSpace({10, 10}, {1.0, 1.0}));
  const double c20 = trace_constant(CellSpace({20, 20}, {1.0, 1.0}));
  EXPECT_NEAR(c20 * c20 / (c10 * c10), 2.0, 0.05);
}
