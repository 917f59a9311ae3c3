#include <gtest/gtest.h>

#include <random>

#include "qpdg/swip_tensor.hpp"

using namespace qpdg;

namespace {
struct Small {
  MesoGrid grid{3, 3, {1.0, 1.0}};
  CellSpace space{{4, 4}, {1.0, 1.0}};
  SeparatedField k;
  SwipSetup setup;
  explicit Small(double p = 0.4, std::uint64_t seed = 2) {
    const auto pat = pattern(PatternKind::missing_inclusion, space);
    k = bernoulli_conductivity(grid, pat.sound, pat.faulty, p, seed);
    setup = swip_setup(grid, space, k);
  }
  double sigma() const { return 2.0 * setup.sigma_minus; }
  SeparatedOperator op(MeanVariant v) const { return assemble_operator(grid, space, k, setup.weights, sigma(), v); }
};

Mat random_field(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Mat m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = nd(rng);
  return m;
}
}  // namespace

TEST(SwipWeights, HarmonicMeanAndAverageWeights) {
  const MesoGrid g(2, 1, {1.0, 1.0});
  CellBounds b{Vec::Constant(2, 1.0), Vec(2)};
  b.k_plus << 100.0, 1.0;
  const auto w = compute_weights(g, b);
  // face 0: x_plus of cell 0 against cell 1; face 1: y_plus of cell 0 onto itself
  EXPECT_DOUBLE_EQ(w.omega(0), 200.0 / 101.0);
  EXPECT_DOUBLE_EQ(w.beta_owner(0), 100.0 / 101.0);
  EXPECT_DOUBLE_EQ(w.beta_neighbor(0), 1.0 / 101.0);
  EXPECT_DOUBLE_EQ(w.omega(1), 100.0);
  EXPECT_DOUBLE_EQ(w.beta_owner(1), 0.5);
  EXPECT_DOUBLE_EQ(w.omega(3), 1.0);
  EXPECT_DOUBLE_EQ(w.omega_min, 1.0);
  EXPECT_DOUBLE_EQ(w.beta_max, 100.0 / 101.0);
  for (Index f = 0; f < 4; ++f) EXPECT_DOUBLE_EQ(w.beta_owner(f) + w.beta_neighbor(f), 1.0);
  EXPECT_THROW(compute_weights(g, CellBounds{Vec::Constant(2, 2.0), Vec::Constant(2, 1.0)}), std::invalid_argument);
}

TEST(SwipWeights, SigmaLowerBoundFormula) {
  SwipWeights w;
  w.beta_max = 100.0 / 101.0;
  w.omega_min = 1.0;
  w.k_plus_max = 100.0;
  w.k_minus_min = 1.0;
  w.face_measure_max = 5.0;
  const double c = 5.096793605611;
  EXPECT_NEAR(sigma_lower_bound(c, w), c * c * w.beta_max * w.beta_max * 4.0 * 5.0 * 100.0 * 100.0, 1e-6);
  EXPECT_NEAR(sigma_lower_bound(c, w), 5.093090e6, 1.0);
}

TEST(SeparatedOperator, KroneckerExpansionMatchesMonolithic) {
  const Small s;
  for (auto v : {MeanVariant::mean_penalty, MeanVariant::cell_mass}) {
    const Mat a = s.op(v).expand_dense();
    const Mat m = monolithic_assemble(s.grid, s.space, s.k, s.setup.weights, s.sigma(), v).to_dense();
    EXPECT_LE((a - m).cwiseAbs().maxCoeff(), 1e-12 * m.cwiseAbs().maxCoeff()) << to_string(v);
  }
}

TEST(SeparatedOperator, Symmetric) {
  const Small s;
  const Mat a = s.op(MeanVariant::mean_penalty).expand_dense();
  EXPECT_LE((a - a.transpose()).cwiseAbs().maxCoeff(), 1e-12 * a.cwiseAbs().maxCoeff());
}

TEST(SeparatedOperator, ConstantsOnlySeeTheMeanTerm) {
  const Small s;
  const Mat one = Mat::Ones(9, s.space.num_dofs());
  const double d = s.grid.domain_measure();
  const auto mp = s.op(MeanVariant::mean_penalty);
  EXPECT_NEAR(mp.form(one, one), d * d, 1e-8 * s.sigma());
  EXPECT_NEAR(mp.energy_form(one), d * d, 1e-9 * d * d);
  EXPECT_NEAR(energy_norm(mp, one), d, 1e-9 * d);
  EXPECT_NEAR(energy_norm(s.op(MeanVariant::cell_mass), one), std::sqrt(d), 1e-9);
}

TEST(SeparatedOperator, JumpEvaluationAgreesWithKroneckerPenalty) {
  const Small s;
  const auto op = s.op(MeanVariant::mean_penalty);
  ASSERT_FALSE(op.jump_penalties.empty());
  const Mat u = random_field(9, s.space.num_dofs(), 3);
  const Mat a = op.apply(u), b = op.accurate_apply(u);
  EXPECT_LE((a - b).norm(), 1e-10 * b.norm());
  EXPECT_NEAR(op.energy_form(u), op.form(u, u), 1e-9 * std::abs(op.form(u, u)));
}

TEST(SeparatedOperator, ContinuousPeriodicFieldHasNoPenalty) {
  const Small s;
  const auto pen = s.op(MeanVariant::mean_penalty).restricted({FormPart::penalty});
  Mat u(9, s.space.num_dofs());
  const double lx = s.grid.domain_extent()[0], ly = s.grid.domain_extent()[1];
  for (Index i = 0; i < 9; ++i) {
    const auto o = s.grid.origin(i);
    for (Index d = 0; d < s.space.num_dofs(); ++d) {
      const auto y = s.space.point(d);
      u(i, d) = std::sin(2 * M_PI * (o[0] + y[0]) / lx) + std::cos(2 * M_PI * (o[1] + y[1]) / ly);
    }
  }
  EXPECT_LE(std::abs(pen.energy_form(u)), 1e-20 * s.sigma());
  Mat broken = u;
  broken(4, 0) += 1.0;
  EXPECT_GT(pen.energy_form(broken), 0.0);
}

TEST(SeparatedOperator, CoerciveAtTwiceTheThreshold) {
  const Small s;
  const auto op = s.op(MeanVariant::mean_penalty);
  const double c = 1.0 - std::sqrt(0.5);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Mat v = random_field(9, s.space.num_dofs(), 100 + seed);
    const double en = energy_norm(op, v);
    EXPECT_GE(op.energy_form(v), c * en * en);
  }
}

TEST(SeparatedOperator, RestrictedPartsSumToWhole) {
  const Small s;
  const auto op = s.op(MeanVariant::mean_penalty);
  const Mat u = random_field(9, s.space.num_dofs(), 9);
  Mat sum = Mat::Zero(9, s.space.num_dofs());
  for (auto p : {FormPart::diffusion, FormPart::consistency, FormPart::consistency_transpose, FormPart::penalty,
                 FormPart::mean})
    sum += op.restricted({p}).apply(u);
  EXPECT_LE((sum - op.apply(u)).norm(), 1e-12 * op.apply(u).norm() + 1e-9);
  EXPECT_LE((op.combined().apply(u) - op.apply(u)).norm(), 1e-10 * op.apply(u).norm());
  EXPECT_LE(op.combined().terms().size(), op.terms().size());
}

TEST(SeparatedOperator, RankOneMediumGivesFewTerms) {
  const Small periodic(0.0);
  const Small mixed(0.4);
  EXPECT_LT(periodic.op(MeanVariant::mean_penalty).combined().term_count(),
            mixed.op(MeanVariant::mean_penalty).combined().term_count());
}

TEST(SeparatedOperator, RejectsBadInput) {
  const Small s;
  EXPECT_THROW(assemble_operator(s.grid, s.space, s.k, s.setup.weights, 0.0, MeanVariant::mean_penalty),
               std::invalid_argument);
  EXPECT_THROW(assemble_operator(s.grid, s.space, SeparatedField{}, s.setup.weights, 1.0, MeanVariant::mean_penalty),
               std::invalid_argument);
  EXPECT_THROW(parse_mean_variant("none"), std::invalid_argument);
  EXPECT_EQ(parse_mean_variant("cell_mass"), MeanVariant::cell_mass);
}

TEST(Rhs, LoadIsMassTimesNodalSource) {
  const Small s;
  const auto f = corrector_source(s.k, s.space);
  const auto b = assemble_rhs(s.grid, s.space, f);
  const SpMat m = mass_matrix(s.space);
  const Mat expect = f.to_dense(9, s.space.num_dofs()) * Mat(m);
  EXPECT_LE((b.to_dense(9, s.space.num_dofs()) - expect).norm(), 1e-13 * expect.norm());
}

TEST(Monolithic, ApplyAndResidualAgreeWithDense) {
  const Small s;
  const auto sys = monolithic_assemble(s.grid, s.space, s.k, s.setup.weights, s.sigma(), MeanVariant::mean_penalty);
  const Vec x = to_vector(random_field(9, s.space.num_dofs(), 4));
  const Vec b = to_vector(random_field(9, s.space.num_dofs(), 5));
  const Vec ax = sys.to_dense() * x;
  EXPECT_LE((sys.apply(x) - ax).norm(), 1e-12 * ax.norm());
  EXPECT_LE((sys.residual(x, b) - (b - ax)).norm(), 1e-12 * ax.norm());
  EXPECT_EQ(sys.size(), 9 * 25);
  EXPECT_THROW(monolithic_assemble(s.grid, s.space, s.k, s.setup.weights, s.sigma(), MeanVariant::mean_penalty, 100),
               std::length_error);
}

TEST(Monolithic, MatrixVectorLayout) {
  Mat u(2, 3);
  u << 1, 2, 3, 4, 5, 6;
  const Vec x = to_vector(u);
  EXPECT_DOUBLE_EQ(x(1 * 3 + 2), 6.0);
  EXPECT_TRUE(to_matrix(x, 2, 3) == u);
}
