#include <gtest/gtest.h>

#include "qpdg/media.hpp"

using namespace qpdg;

TEST(Patterns, NamesRoundTrip) {
  for (auto k : {PatternKind::missing_fibre, PatternKind::undulating_fibre, PatternKind::missing_inclusion})
    EXPECT_EQ(parse_pattern(to_string(k)), k);
  EXPECT_EQ(parse_pattern("missing_fibre"), PatternKind::missing_fibre);
  EXPECT_EQ(parse_pattern("missing_inclusion"), PatternKind::missing_inclusion);
  EXPECT_THROW(parse_pattern("checkerboard"), std::invalid_argument);
}

TEST(Patterns, ExtentIsChecked) {
  const CellSpace unit({4, 4}, {1.0, 1.0});
  EXPECT_THROW(pattern(PatternKind::missing_fibre, unit), std::invalid_argument);
  EXPECT_NO_THROW(pattern(PatternKind::missing_inclusion, unit));
}

TEST(Patterns, ContrastAndSupport) {
  for (auto k : {PatternKind::missing_fibre, PatternKind::undulating_fibre, PatternKind::missing_inclusion}) {
    const CellSpace s({20, 20}, pattern_extent(k));
    const auto p = pattern(k, s);
    EXPECT_DOUBLE_EQ(p.sound.maxCoeff(), 100.0);
    EXPECT_DOUBLE_EQ(p.sound.minCoeff(), 1.0);
    EXPECT_DOUBLE_EQ(p.faulty.minCoeff(), 1.0);
    for (Index d = 0; d < s.num_dofs(); ++d) {
      const double v = p.sound(d);
      EXPECT_TRUE(v == 1.0 || v == 100.0);
    }
  }
}

TEST(Patterns, FibreCoversMiddleHalf) {
  const CellSpace s({20, 20}, {1.0, 5.0});
  const auto p = pattern(PatternKind::missing_fibre, s);
  for (Index d = 0; d < s.num_dofs(); ++d) {
    const double x = s.point(d)[0];
    EXPECT_DOUBLE_EQ(p.sound(d), x >= 0.25 - 1e-12 && x <= 0.75 + 1e-12 ? 100.0 : 1.0);
  }
  EXPECT_TRUE(p.faulty.isApprox(s.ones()));
}

TEST(Patterns, InclusionIsCentredSquareOfHalfArea) {
  const double side = std::sqrt(0.5);
  const CellSpace s({40, 40}, {1.0, 1.0});
  const auto p = pattern(PatternKind::missing_inclusion, s);
  for (Index d = 0; d < s.num_dofs(); ++d) {
    const auto y = s.point(d);
    const bool in = std::abs(y[0] - 0.5) <= side / 2 && std::abs(y[1] - 0.5) <= side / 2;
    EXPECT_DOUBLE_EQ(p.sound(d), in ? 100.0 : 1.0);
  }
}

TEST(Patterns, UndulatingCrossesShareHorizontalArm) {
  const CellSpace s({20, 20}, {1.0, 1.0});
  const auto p = pattern(PatternKind::undulating_fibre, s);
  const double half = 0.5 * cross_arm_width();
  for (Index d = 0; d < s.num_dofs(); ++d) {
    const auto y = s.point(d);
    if (std::abs(y[1] - 0.5) <= half) {
      EXPECT_DOUBLE_EQ(p.sound(d), 100.0);
      EXPECT_DOUBLE_EQ(p.faulty(d), 100.0);
    }
  }
  // the bent arm meets the straight one on the cell boundary, so the pattern stays periodic
  EXPECT_DOUBLE_EQ(bent_fibre_centre(0.0), 0.5);
  EXPECT_DOUBLE_EQ(bent_fibre_centre(1.0), 0.5);
  EXPECT_DOUBLE_EQ(bent_fibre_centre(0.5), 0.75);
  EXPECT_NEAR(2.0 * cross_arm_width() - cross_arm_width() * cross_arm_width(), 0.5, 1e-15);
}

TEST(Bernoulli, EndpointsAndPrefix) {
  EXPECT_TRUE(sound_mask(50, 0.0, 3).isApprox(Vec::Ones(50)));
  EXPECT_EQ(sound_mask(50, 1.0, 3).sum(), 0.0);
  const Vec a = sound_mask(25, 0.3, 11), b = sound_mask(400, 0.3, 11);
  EXPECT_TRUE(b.head(25) == a);
  EXPECT_FALSE(sound_mask(400, 0.3, 12) == b);
  EXPECT_THROW(sound_mask(5, 1.5, 1), std::invalid_argument);
}

TEST(Bernoulli, FrequencyMatchesProbability) {
  const Vec b = sound_mask(20000, 0.3, 5);
  EXPECT_NEAR(1.0 - b.mean(), 0.3, 0.015);
}

TEST(Bernoulli, ConductivityRank) {
  const MesoGrid g(5, 5, {1.0, 1.0});
  const CellSpace s({4, 4}, {1.0, 1.0});
  const auto p = pattern(PatternKind::missing_inclusion, s);
  EXPECT_EQ(bernoulli_conductivity(g, p.sound, p.faulty, 0.0, 1).rank(), 1);
  EXPECT_EQ(bernoulli_conductivity(g, p.sound, p.faulty, 1.0, 1).rank(), 1);
  const auto k = bernoulli_conductivity(g, p.sound, p.faulty, 0.3, 1);
  EXPECT_EQ(k.rank(), 2);
  const Vec mask = sound_mask(25, 0.3, 1);
  const Mat dense = k.to_dense(25, s.num_dofs());
  for (Index i = 0; i < 25; ++i)
    EXPECT_TRUE(dense.row(i).transpose().isApprox(mask(i) == 1.0 ? p.sound : p.faulty));
  EXPECT_DOUBLE_EQ(k(3, 7), dense(3, 7));
  EXPECT_THROW(bernoulli_conductivity(g, p.sound, Vec::Zero(p.sound.size()), 0.3, 1), std::invalid_argument);
}

TEST(Bernoulli, CellBounds) {
  const MesoGrid g(3, 3, {1.0, 1.0});
  const CellSpace s({4, 4}, {1.0, 1.0});
  const auto p = pattern(PatternKind::missing_inclusion, s);
  const auto k = bernoulli_conductivity(g, p.sound, p.faulty, 0.5, 4);
  const auto b = cell_bounds(k, 9, s.num_dofs());
  const Vec mask = sound_mask(9, 0.5, 4);
  for (Index i = 0; i < 9; ++i) {
    EXPECT_DOUBLE_EQ(b.k_minus(i), 1.0);
    EXPECT_DOUBLE_EQ(b.k_plus(i), mask(i) == 1.0 ? 100.0 : 1.0);
  }
}

TEST(Sources, CorrectorIsDerivativeOfEachTerm) {
  const MesoGrid g(2, 2, {1.0, 1.0});
  const CellSpace s({6, 6}, {1.0, 1.0});
  SeparatedField k;
  k.add(Vec::Ones(4), s.interpolate([](double x, double) { return 1.0 + 2.0 * x; }));
  const auto f = corrector_source(k, s);
  ASSERT_EQ(f.rank(), 1);
  EXPECT_TRUE(f.cell[0].isApprox(2.0 * s.ones(), 1e-12));
}

TEST(Sources, UniformAndPeak) {
  const MesoGrid g(3, 3, {1.0, 1.0});
  const CellSpace s({4, 4}, {1.0, 1.0});
  const auto u = uniform_source(g, s);
  EXPECT_EQ(u.rank(), 1);
  EXPECT_TRUE(u.to_dense(9, 25).isApprox(Mat::Ones(9, 25)));
  const Mat pk = peak_source(g, s);
  // the domain centre (1.5, 1.5) is the middle node of cell (1, 1)
  EXPECT_DOUBLE_EQ(pk(g.index(1, 1), s.dof(2, 2)), 1.0);
  EXPECT_DOUBLE_EQ(pk.maxCoeff(), 1.0);
  EXPECT_NEAR(pk(g.index(0, 0), s.dof(0, 0)), std::exp(-10.0 * std::hypot(1.5, 1.5)), 1e-15);
}

TEST(Sources, SvdCompressionMeetsTolerance) {
  const MesoGrid g(6, 6, {1.0, 1.0});
  const CellSpace s({6, 6}, {1.0, 1.0});
  const Mat full = peak_source(g, s);
  for (double tol : {1e-2, 1e-4, 1e-6}) {
    const auto c = svd_compress(full, tol);
    EXPECT_LE((c.to_dense(36, 49) - full).norm(), tol * full.norm());
    if (c.rank() > 1) {
      const auto c2 = svd_compress(full, tol * 1e3 < 1.0 ? tol * 1e3 : 0.5);
      EXPECT_LE(c2.rank(), c.rank());
    }
    for (const auto& v : c.cell) EXPECT_NEAR(v.norm(), 1.0, 1e-12);
  }
  EXPECT_EQ(svd_compress(Mat::Zero(3, 3), 1e-3).rank(), 0);
  EXPECT_EQ(svd_compress(Vec::Ones(4) * Vec::LinSpaced(5, 0, 1).transpose(), 1e-8).rank(), 1);
  EXPECT_THROW(svd_compress(full, 0.0), std::invalid_argument);
}
