// qpdg: experiment driver for the low-rank SWIP solver.
//
//   qpdg solve --pattern missing_inclusions --seed 3
//   qpdg bench --config table.cfg --out results
//   qpdg proba --threads 8
//
// Exit status: 0 success, 1 configuration error, 2 some case did not converge.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "qpdg/qpdg.hpp"

namespace {

using namespace qpdg;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> threads;
  std::optional<Index> max_dofs;
  std::optional<std::string> pattern;
  std::optional<Index> cells;
};

ExperimentConfig resolve(const Globals& g) {
  ExperimentConfig cfg;
  if (!g.config.empty()) cfg = load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (g.out) cfg.out = *g.out;
  if (g.threads) cfg.threads = std::max(1u, *g.threads);
  if (g.max_dofs) cfg.max_dofs = *g.max_dofs;
  if (g.pattern) cfg.set("pattern", *g.pattern);
  if (g.cells) cfg.sizes = {*g.cells};
  cfg.validate();
  return cfg;
}

std::ofstream open_out(const ExperimentConfig& cfg, const std::string& name) {
  std::filesystem::create_directories(cfg.out);
  const auto path = std::filesystem::path(cfg.out) / name;
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write '" + path.string() + "'");
  std::cerr << "wrote " << path.string() << '\n';
  return os;
}

int bench(const ExperimentConfig& cfg, const char* file) {
  const auto rows = run_case(cfg);
  bool ok = true;
  for (const auto& r : rows) {
    ok = ok && r.converged && r.error.empty();
    std::printf("%-18s #I=%-5lld rank=%-3lld residual=%.3e greedy=%.2fs", to_string(r.pattern).c_str(),
                static_cast<long long>(r.n_cells), static_cast<long long>(r.rank), r.residual, r.greedy_seconds);
    if (r.direct_run) std::printf(" direct=%.2fs energy_error=%.3e", r.direct_seconds, r.energy_error);
    if (!r.converged) std::printf(" NOT CONVERGED");
    if (!r.error.empty()) std::printf(" error: %s", r.error.c_str());
    std::printf("\n");
  }
  auto os = open_out(cfg, file);
  write_bench_csv(os, cfg, rows);
  if (rows.size() == 1 && rows.front().error.empty()) {
    auto ts = open_out(cfg, "trace.csv");
    ts << rows.front().trace.to_csv();
  }
  return ok ? 0 : 2;
}

int trace_constant_cmd(const ExperimentConfig& cfg) {
  for (Index n : cfg.sizes) {
    const Case c = make_case(cfg, n, cfg.p, cfg.seed, cfg.source());
    std::printf("pattern=%s n_cells=%lld dim_V=%lld C=%.6f sigma_minus=%.6e sigma=%.6e\n",
                to_string(cfg.pattern).c_str(), static_cast<long long>(n),
                static_cast<long long>(c.space.num_dofs()), c.setup.trace_constant, c.setup.sigma_minus, c.sigma);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-rank SWIP solver for quasi-periodic media"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "seed of the defect draws");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--threads", g.threads, "worker threads for independent cases");
  app.add_option("--max-dofs", g.max_dofs, "largest broken space the reference solvers may build");
  app.add_option("--pattern", g.pattern, "missing_fibres | undulating_fibres | missing_inclusions");
  app.add_option("--cells", g.cells, "single grid size (number of cells)");
  app.fallthrough();

  auto* solve = app.add_subcommand("solve", "solve one case (first grid size)");
  auto* bench_cmd = app.add_subcommand("bench", "test-case table over the grid sizes");
  auto* scaling = app.add_subcommand("scaling", "rank and time against #I for each source");
  auto* proba = app.add_subcommand("proba", "Monte Carlo over the defect probability");
  auto* evr = app.add_subcommand("error-vs-rank", "residual at every rank of one run");
  auto* tc = app.add_subcommand("trace-constant", "print C(V_h(Y)) and sigma_- for the configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    ExperimentConfig cfg = resolve(g);
    if (*solve) {
      cfg.sizes.resize(1);
      return bench(cfg, "solve.csv");
    }
    if (*bench_cmd) return bench(cfg, "bench.csv");
    if (*scaling) {
      const auto res = run_scaling(cfg);
      for (const auto& r : res.rows)
        std::printf("%-10s #I=%-5lld rank=%-3lld %.2fs%s\n", to_string(r.source).c_str(),
                    static_cast<long long>(r.n_cells), static_cast<long long>(r.rank), r.seconds,
                    r.converged ? "" : " NOT CONVERGED");
      for (const auto& [src, ok] : res.plateau)
        std::printf("plateau %s: %s\n", to_string(src).c_str(), ok ? "yes" : "no");
      auto os = open_out(cfg, "scaling.csv");
      write_scaling_csv(os, cfg, res);
      return res.all_converged() ? 0 : 2;
    }
    if (*proba) {
      const auto res = run_proba_study(cfg);
      Index failures = 0;
      for (const auto& r : res.rows) {
        std::printf("p=%.3f samples=%lld mean_rank=%.3f var=%.3f failures=%lld\n", r.p,
                    static_cast<long long>(r.n_samples), r.mean_rank, r.var_rank,
                    static_cast<long long>(r.failures));
        failures += r.failures;
      }
      auto os = open_out(cfg, "proba.csv");
      write_proba_csv(os, cfg, res);
      return failures == 0 ? 0 : 2;
    }
    if (*evr) {
      const auto res = run_error_vs_rank(cfg);
      for (std::size_t k = 0; k < res.rank.size(); ++k)
        std::printf("rank=%lld residual=%.6e\n", static_cast<long long>(res.rank[k]), res.residual[k]);
      std::printf("slope=%.4f rank_at_tolerance=%lld\n", res.slope, static_cast<long long>(res.rank_at_tolerance));
      auto os = open_out(cfg, "error_vs_rank.csv");
      write_error_vs_rank_csv(os, cfg, res);
      if (!res.error.empty()) {
        std::fprintf(stderr, "error: %s\n", res.error.c_str());
        return 2;
      }
      return 0;
    }
    if (*tc) return trace_constant_cmd(cfg);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
