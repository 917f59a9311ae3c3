// Corrector problem on a 5 x 5 array of cells with two missing inclusions.
// Prints the greedy trace and compares against the monolithic solve.

#include <cstdio>

#include "qpdg/qpdg.hpp"

int main() {
  using namespace qpdg;
  ExperimentConfig cfg;
  cfg.pattern = PatternKind::missing_inclusion;
  cfg.elements = 10;
  const Case c = make_case(cfg, 25, 0.1, 1, SourceKind::corrector);
  std::printf("C = %.4f  sigma_- = %.4e  sigma = %.4e\n", c.setup.trace_constant, c.setup.sigma_minus, c.sigma);

  const TensorSystem sys(c.op, c.rhs);
  GreedyConfig gc;
  gc.tolerance = 1e-3;
  const GreedyResult g = greedy_solve(sys, gc);
  for (const auto& s : g.trace.steps)
    std::printf("rank %2lld  residual %.3e  J %.6e\n", static_cast<long long>(s.rank), s.residual, s.energy);

  const FullSolution d = direct_dg_solve(c.grid, c.space, c.k, c.setup.weights, sys.rhs(), c.sigma,
                                         MeanVariant::mean_penalty);
  const auto err = compare(g.solution.to_dense(), d.as_matrix(), c.op, c.space);
  std::printf("%s at rank %lld, energy error vs direct %.3e\n", g.converged ? "converged" : "not converged",
              static_cast<long long>(g.solution.rank()), err.energy);
  return g.converged ? 0 : 1;
}
