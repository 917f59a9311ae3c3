#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "qpdg/lowrank_solver.hpp"
#include "qpdg/media.hpp"
#include "qpdg/reference_solvers.hpp"

namespace qpdg {

/// Invalid experiment description; the CLI maps it to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SourceKind { corrector, uniform, peak };

inline SourceKind parse_source(std::string_view s) {
  if (s == "corrector") return SourceKind::corrector;
  if (s == "uniform") return SourceKind::uniform;
  if (s == "peak") return SourceKind::peak;
  throw ConfigError("unknown source '" + std::string(s) + "' (corrector | uniform | peak)");
}

inline std::string to_string(SourceKind s) {
  switch (s) {
    case SourceKind::corrector: return "corrector";
    case SourceKind::uniform: return "uniform";
    case SourceKind::peak: return "peak";
  }
  return "?";
}

/// Flat description of one experiment. The defaults are the reference
/// parameters: 20 x 20 Q1 cells (441 dofs), tolerance 1e-3, p = 0.1, contrast 100.
struct ExperimentConfig {
  PatternKind pattern = PatternKind::missing_inclusion;
  std::vector<Index> sizes{25, 100, 225};
  double p = 0.1;
  std::uint64_t seed = 1;
  double tolerance = 1e-3;
  std::optional<double> sigma;  ///< explicit penalty; empty means 2 sigma_-
  MeanVariant mean_variant = MeanVariant::mean_penalty;
  std::vector<SourceKind> sources{SourceKind::corrector};
  Index max_rank = 64;
  Index samples = 20;
  std::vector<double> p_values{0.0, 0.25, 0.5, 0.75, 1.0};
  Index elements = 20;        ///< elements per direction in the reference cell
  Index max_dofs = default_max_dofs;
  bool reference = true;      ///< run the direct solvers where they fit
  bool timing = true;         ///< false writes zero seconds, for byte-identical output
  double peak_tolerance = 1e-6;  ///< SVD compression of full-rank sources
  double time_limit = 0.0;       ///< wall seconds per greedy run, 0 for none
  unsigned threads = 1;
  std::string out = ".";

  SourceKind source() const { return sources.front(); }

  /// key=value lines in a fixed order; the hash input.
  std::string canonical() const;
  std::uint64_t hash() const;
  void set(const std::string& key, const std::string& value);
  void validate() const;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': '" + v + "' is not a number");
  }
}

inline long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': '" + v + "' is not an integer");
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': '" + v + "' is not an unsigned integer");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <class T, class F>
std::string join(const std::vector<T>& v, F&& fmt) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + fmt(v[k]);
  return s;
}

}  // namespace detail

inline std::string ExperimentConfig::canonical() const {
  std::ostringstream os;
  os << "pattern=" << to_string(pattern) << '\n'
     << "sizes=" << detail::join(sizes, [](Index n) { return std::to_string(n); }) << '\n'
     << "p=" << fmt_double(p) << '\n'
     << "seed=" << seed << '\n'
     << "tolerance=" << fmt_double(tolerance) << '\n'
     << "sigma=" << (sigma ? fmt_double(*sigma) : std::string("auto")) << '\n'
     << "mean_variant=" << to_string(mean_variant) << '\n'
     << "source=" << detail::join(sources, [](SourceKind s) { return to_string(s); }) << '\n'
     << "max_rank=" << max_rank << '\n'
     << "samples=" << samples << '\n'
     << "p_values=" << detail::join(p_values, [](double x) { return fmt_double(x); }) << '\n'
     << "elements=" << elements << '\n'
     << "max_dofs=" << max_dofs << '\n'
     << "reference=" << (reference ? "true" : "false") << '\n'
     << "timing=" << (timing ? "true" : "false") << '\n'
     << "peak_tolerance=" << fmt_double(peak_tolerance) << '\n'
     << "time_limit=" << fmt_double(time_limit) << '\n';
  return os.str();
}

inline std::uint64_t ExperimentConfig::hash() const { return detail::fnv1a(canonical()); }

inline void ExperimentConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = detail::trim(raw);
  try {
    if (key == "pattern") {
      pattern = parse_pattern(v);
    } else if (key == "sizes") {
      sizes.clear();
      for (const auto& s : detail::split(v, ',')) sizes.push_back(static_cast<Index>(detail::parse_int(key, s)));
    } else if (key == "p") {
      p = detail::parse_real(key, v);
    } else if (key == "seed") {
      seed = detail::parse_u64(key, v);
    } else if (key == "tolerance") {
      tolerance = detail::parse_real(key, v);
    } else if (key == "sigma") {
      if (v == "auto" || v == "auto_2x_sigma_minus")
        sigma.reset();
      else
        sigma = detail::parse_real(key, v);
    } else if (key == "mean_variant") {
      mean_variant = parse_mean_variant(v);
    } else if (key == "source") {
      sources.clear();
      for (const auto& s : detail::split(v, ',')) sources.push_back(parse_source(s));
    } else if (key == "max_rank") {
      max_rank = static_cast<Index>(detail::parse_int(key, v));
    } else if (key == "samples") {
      samples = static_cast<Index>(detail::parse_int(key, v));
    } else if (key == "p_values") {
      p_values.clear();
      for (const auto& s : detail::split(v, ',')) p_values.push_back(detail::parse_real(key, s));
    } else if (key == "elements") {
      elements = static_cast<Index>(detail::parse_int(key, v));
    } else if (key == "max_dofs") {
      max_dofs = static_cast<Index>(detail::parse_int(key, v));
    } else if (key == "reference") {
      reference = detail::parse_bool(key, v);
    } else if (key == "timing") {
      timing = detail::parse_bool(key, v);
    } else if (key == "peak_tolerance") {
      peak_tolerance = detail::parse_real(key, v);
    } else if (key == "time_limit") {
      time_limit = detail::parse_real(key, v);
    } else {
      throw ConfigError("unknown configuration key '" + key + "'");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

inline void ExperimentConfig::validate() const {
  if (sizes.empty()) throw ConfigError("sizes: at least one grid size is required");
  for (Index n : sizes) {
    if (n <= 0) throw ConfigError("sizes: grid sizes must be positive");
    if (pattern != PatternKind::missing_fibre) {
      const auto s = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(n))));
      if (s * s != n) throw ConfigError("sizes: " + std::to_string(n) + " is not a square number of cells");
    }
  }
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("p: must lie in [0, 1]");
  for (double q : p_values)
    if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("p_values: must lie in [0, 1]");
  if (!(tolerance >= 0.0)) throw ConfigError("tolerance: must be non-negative");
  if (sigma && !(*sigma > 0.0)) throw ConfigError("sigma: must be positive");
  if (sources.empty()) throw ConfigError("source: at least one source is required");
  if (max_rank < 1) throw ConfigError("max_rank: must be positive");
  if (samples < 1) throw ConfigError("samples: must be positive");
  if (elements < 1) throw ConfigError("elements: must be positive");
  if (max_dofs < 1) throw ConfigError("max_dofs: must be positive");
  if (!(peak_tolerance > 0.0 && peak_tolerance < 1.0)) throw ConfigError("peak_tolerance: must lie in (0, 1)");
  if (!(time_limit >= 0.0)) throw ConfigError("time_limit: must be non-negative");
}

/// Reads `key = value` lines; '#' starts a comment. Unknown keys are rejected.
inline ExperimentConfig parse_config(std::istream& in, ExperimentConfig cfg = {}) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value, got '" + line + "'");
    cfg.set(detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig cfg = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration file '" + path + "'");
  return parse_config(in, std::move(cfg));
}

/// Fibre media are one cell tall; the others are square arrays of cells.
inline MesoGrid make_grid(PatternKind kind, Index n_cells) {
  const auto ext = pattern_extent(kind);
  if (kind == PatternKind::missing_fibre) return MesoGrid(n_cells, 1, ext);
  const auto s = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(n_cells))));
  if (s * s != n_cells) throw ConfigError(std::to_string(n_cells) + " is not a square number of cells");
  return MesoGrid(s, s, ext);
}

/// Everything needed to solve one medium.
struct Case {
  MesoGrid grid;
  CellSpace space;
  SeparatedField k;
  SeparatedField f;
  SwipSetup setup;
  double sigma = 0.0;
  SeparatedOperator op;
  SeparatedRHS rhs;
};

inline SeparatedField make_source(SourceKind s, const MesoGrid& grid, const CellSpace& space, const SeparatedField& k,
                                  double peak_tolerance) {
  switch (s) {
    case SourceKind::corrector: return corrector_source(k, space);
    case SourceKind::uniform: return uniform_source(grid, space);
    case SourceKind::peak: return svd_compress(peak_source(grid, space), peak_tolerance);
  }
  throw ConfigError("unknown source");
}

inline Case make_case(const ExperimentConfig& cfg, Index n_cells, double p, std::uint64_t seed, SourceKind source) {
  MesoGrid grid = make_grid(cfg.pattern, n_cells);
  CellSpace space({cfg.elements, cfg.elements}, pattern_extent(cfg.pattern));
  const auto pat = pattern(cfg.pattern, space);
  SeparatedField k = bernoulli_conductivity(grid, pat.sound, pat.faulty, p, seed);
  SeparatedField f = make_source(source, grid, space, k, cfg.peak_tolerance);
  SwipSetup setup = swip_setup(grid, space, k);
  const double sigma = cfg.sigma ? *cfg.sigma : 2.0 * setup.sigma_minus;
  SeparatedOperator op = assemble_operator(grid, space, k, setup.weights, sigma, cfg.mean_variant);
  SeparatedRHS rhs = assemble_rhs(grid, space, f);
  return Case{std::move(grid), std::move(space), std::move(k), std::move(f), std::move(setup), sigma, std::move(op),
              std::move(rhs)};
}

inline GreedyConfig greedy_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  GreedyConfig g;
  g.tolerance = cfg.tolerance;
  g.max_rank = cfg.max_rank;
  g.seed = seed;
  g.time_limit = cfg.time_limit;
  return g;
}

namespace detail {
inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Runs task(k) for k < n on up to `threads` workers; results stay indexed by k.
inline void parallel_for(Index n, unsigned threads, const std::function<void(Index)>& task) {
  const unsigned w = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<Index>(n, 1))));
  if (w == 1) {
    for (Index k = 0; k < n; ++k) task(k);
    return;
  }
  std::atomic<Index> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex m;
  for (unsigned t = 0; t < w; ++t)
    pool.emplace_back([&] {
      for (Index k = next++; k < n; k = next++) {
        try {
          task(k);
        } catch (...) {
          std::lock_guard<std::mutex> lock(m);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}
}  // namespace detail

/// One row of the test-case tables.
struct CaseReport {
  PatternKind pattern = PatternKind::missing_inclusion;
  SourceKind source = SourceKind::corrector;
  Index n_cells = 0;
  std::uint64_t seed = 0;
  double sigma = 0.0;
  double greedy_seconds = 0.0;
  Index rank = 0;
  double residual = 0.0;
  bool converged = false;
  bool direct_run = false;
  double direct_seconds = std::numeric_limits<double>::quiet_NaN();
  double direct_residual = std::numeric_limits<double>::quiet_NaN();
  double energy_error = std::numeric_limits<double>::quiet_NaN();
  bool cg_run = false;
  double cg_seconds = std::numeric_limits<double>::quiet_NaN();
  double cg_residual = std::numeric_limits<double>::quiet_NaN();
  SolveTrace trace;
  std::string error;  ///< non-empty when the case failed
};

/// Greedy solve of one medium, with the direct dG and CG references when the
/// broken space fits under the dof cap.
inline CaseReport solve_case(const ExperimentConfig& cfg, Index n_cells, double p, std::uint64_t seed,
                             SourceKind source) {
  CaseReport r;
  r.pattern = cfg.pattern;
  r.source = source;
  r.n_cells = n_cells;
  r.seed = seed;
  try {
    const Case c = make_case(cfg, n_cells, p, seed, source);
    r.sigma = c.sigma;
    const auto t0 = std::chrono::steady_clock::now();
    const TensorSystem sys(c.op, c.rhs);
    const GreedyResult g = greedy_solve(sys, greedy_config(cfg, seed));
    r.greedy_seconds = cfg.timing ? detail::seconds_since(t0) : 0.0;
    r.rank = g.solution.rank();
    r.residual = g.trace.steps.empty() ? 0.0 : g.trace.steps.back().residual;
    r.converged = g.converged;
    r.trace = g.trace;
    if (!cfg.timing)
      for (auto& s : r.trace.steps) s.seconds = 0.0;
    if (cfg.reference && n_cells * c.space.num_dofs() <= cfg.max_dofs) {
      const FullSolution d = direct_dg_solve(c.grid, c.space, c.k, c.setup.weights, sys.rhs(), c.sigma,
                                             cfg.mean_variant, cfg.max_dofs);
      r.direct_run = true;
      r.direct_seconds = cfg.timing ? d.seconds : 0.0;
      r.direct_residual = d.residual;
      r.energy_error = compare(g.solution.to_dense(), d.as_matrix(), c.op, c.space).energy;
      const FullSolution cg = cg_fem_solve(c.grid, c.space, c.k, c.f, cfg.max_dofs);
      r.cg_run = true;
      r.cg_seconds = cfg.timing ? cg.seconds : 0.0;
      r.cg_residual = cg.residual;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

/// The test-case table: one report per grid size.
inline std::vector<CaseReport> run_case(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<CaseReport> out(cfg.sizes.size());
  detail::parallel_for(static_cast<Index>(cfg.sizes.size()), cfg.threads, [&](Index k) {
    out[static_cast<std::size_t>(k)] = solve_case(cfg, cfg.sizes[static_cast<std::size_t>(k)], cfg.p, cfg.seed,
                                                  cfg.source());
  });
  return out;
}

struct ScalingRow {
  SourceKind source = SourceKind::corrector;
  Index n_cells = 0;
  double seconds = 0.0;
  Index rank = 0;
  bool converged = false;
  double direct_seconds = std::numeric_limits<double>::quiet_NaN();
  std::string error;
  SolveTrace trace;
};

struct ScalingResult {
  std::vector<ScalingRow> rows;
  /// Per source: rank at the largest size <= rank at the second largest + 2.
  std::map<SourceKind, bool> plateau;
  bool all_converged() const {
    return std::all_of(rows.begin(), rows.end(), [](const ScalingRow& r) { return r.converged && r.error.empty(); });
  }
};

/// Rank and time against the number of cells for every configured source.
/// Defects come from one seed, so larger grids extend the smaller ones.
inline ScalingResult run_scaling(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.sizes.size() < 2) throw ConfigError("scaling: at least two grid sizes are required");
  std::vector<Index> sizes = cfg.sizes;
  std::sort(sizes.begin(), sizes.end());
  const Index ns = static_cast<Index>(sizes.size());
  ScalingResult res;
  res.rows.resize(cfg.sources.size() * sizes.size());
  detail::parallel_for(static_cast<Index>(res.rows.size()), cfg.threads, [&](Index k) {
    const SourceKind src = cfg.sources[static_cast<std::size_t>(k / ns)];
    const Index n = sizes[static_cast<std::size_t>(k % ns)];
    ExperimentConfig c = cfg;
    c.reference = false;
    const CaseReport rep = solve_case(c, n, cfg.p, cfg.seed, src);
    ScalingRow row{src, n, rep.greedy_seconds, rep.rank, rep.converged, rep.direct_seconds, rep.error, rep.trace};
    if (cfg.reference && rep.error.empty() && n * (cfg.elements + 1) * (cfg.elements + 1) <= cfg.max_dofs) {
      try {
        const Case cs = make_case(cfg, n, cfg.p, cfg.seed, src);
        const Mat rhs = cs.rhs.to_dense(cs.grid.size(), cs.space.num_dofs());
        const FullSolution d =
            direct_dg_solve(cs.grid, cs.space, cs.k, cs.setup.weights, rhs, cs.sigma, cfg.mean_variant, cfg.max_dofs);
        row.direct_seconds = cfg.timing ? d.seconds : 0.0;
      } catch (const std::exception& e) {
        row.error = e.what();
      }
    }
    res.rows[static_cast<std::size_t>(k)] = row;
  });
  for (SourceKind src : cfg.sources) {
    std::vector<const ScalingRow*> rs;
    for (const auto& r : res.rows)
      if (r.source == src) rs.push_back(&r);
    const auto& last = *rs[rs.size() - 1];
    const auto& prev = *rs[rs.size() - 2];
    res.plateau[src] = last.error.empty() && prev.error.empty() && last.rank <= prev.rank + 2;
  }
  return res;
}

struct ProbaRow {
  double p = 0.0;
  Index n_samples = 0;  ///< samples that converged
  double mean_rank = std::numeric_limits<double>::quiet_NaN();
  double var_rank = std::numeric_limits<double>::quiet_NaN();
  Index failures = 0;   ///< samples that threw, hit max_rank or were not run
  Index unfinished = 0; ///< of which: stopped or skipped by the deadline
  std::vector<Index> ranks;
};

struct ProbaResult {
  std::vector<ProbaRow> rows;
  std::vector<SolveTrace> traces;  ///< index a * samples + s
  /// Mean rank at both end points of the p grid strictly below the mean at the
  /// p value closest to 1/2.
  bool endpoints_below_middle = false;
};

/// Sample seed s of a study: independent streams derived from the base seed.
inline std::uint64_t sample_seed(std::uint64_t base, Index s) {
  return mix64(base ^ mix64(0x5bd1e995ULL + static_cast<std::uint64_t>(s)));
}

/// Monte Carlo over the defect probability on the first configured grid size.
/// Samples are visited sample-major so that a deadline (seconds, <= 0 for
/// none) cuts every p value evenly; unfinished samples count as failures.
inline ProbaResult run_proba_study(const ExperimentConfig& cfg, double deadline = 0.0) {
  cfg.validate();
  if (cfg.samples < 2) throw ConfigError("proba: at least two samples are required");
  const Index n = cfg.sizes.front();
  const Index np = static_cast<Index>(cfg.p_values.size());
  const auto t0 = std::chrono::steady_clock::now();
  // -1: failed, -2: not run or stopped by the deadline
  std::vector<Index> ranks(static_cast<std::size_t>(np * cfg.samples), -2);
  ProbaResult res;
  res.traces.resize(ranks.size());
  ExperimentConfig c = cfg;
  c.reference = false;
  detail::parallel_for(np * cfg.samples, cfg.threads, [&](Index visit) {
    const Index k = (visit % np) * cfg.samples + visit / np;
    ExperimentConfig ck = c;
    if (deadline > 0.0) {
      const double left = deadline - detail::seconds_since(t0);
      if (left <= 0.0) return;
      ck.time_limit = cfg.time_limit > 0.0 ? std::min(cfg.time_limit, left) : left;
    }
    const double p = cfg.p_values[static_cast<std::size_t>(k / cfg.samples)];
    const CaseReport r = solve_case(ck, n, p, sample_seed(cfg.seed, k % cfg.samples), cfg.source());
    const bool out_of_time = deadline > 0.0 && !r.converged && detail::seconds_since(t0) > deadline;
    ranks[static_cast<std::size_t>(k)] = r.error.empty() && r.converged ? r.rank : out_of_time ? -2 : -1;
    res.traces[static_cast<std::size_t>(k)] = r.trace;
  });
  for (Index a = 0; a < np; ++a) {
    ProbaRow row;
    row.p = cfg.p_values[static_cast<std::size_t>(a)];
    for (Index s = 0; s < cfg.samples; ++s) {
      const Index r = ranks[static_cast<std::size_t>(a * cfg.samples + s)];
      if (r >= 0) {
        row.ranks.push_back(r);
      } else {
        ++row.failures;
        row.unfinished += r == -2;
      }
    }
    row.n_samples = static_cast<Index>(row.ranks.size());
    if (row.n_samples > 0) {
      double m = 0.0;
      for (Index r : row.ranks) m += static_cast<double>(r);
      m /= static_cast<double>(row.n_samples);
      double v = 0.0;
      for (Index r : row.ranks) v += (static_cast<double>(r) - m) * (static_cast<double>(r) - m);
      row.mean_rank = m;
      row.var_rank = row.n_samples > 1 ? v / static_cast<double>(row.n_samples - 1) : 0.0;
    }
    res.rows.push_back(std::move(row));
  }
  if (res.rows.size() >= 3) {
    std::size_t mid = 0;
    for (std::size_t a = 0; a < res.rows.size(); ++a)
      if (std::abs(res.rows[a].p - 0.5) < std::abs(res.rows[mid].p - 0.5)) mid = a;
    const double m = res.rows[mid].mean_rank;
    const double lo = res.rows.front().mean_rank, hi = res.rows.back().mean_rank;
    res.endpoints_below_middle = mid != 0 && mid + 1 != res.rows.size() && lo < m && hi < m;
  }
  return res;
}

struct ErrorVsRank {
  std::vector<Index> rank;
  std::vector<double> residual;
  double slope = std::numeric_limits<double>::quiet_NaN();  ///< least squares of log10(residual) vs rank
  bool nonincreasing = false;
  Index rank_at_tolerance = -1;  ///< first rank with residual <= tolerance, -1 if never
  std::string error;
  SolveTrace trace;
};

/// Least-squares slope of log10(y) against x.
inline double log10_slope(const std::vector<Index>& x, const std::vector<double>& y) {
  const std::size_t n = std::min(x.size(), y.size());
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double a = static_cast<double>(x[k]), b = std::log10(y[k]);
    sx += a;
    sy += b;
    sxx += a * a;
    sxy += a * b;
  }
  const double d = static_cast<double>(n) * sxx - sx * sx;
  return d == 0.0 ? std::numeric_limits<double>::quiet_NaN() : (static_cast<double>(n) * sxy - sx * sy) / d;
}

/// Residual of one greedy run at every rank up to max_rank (tolerance 0).
/// `tolerance` is only used to report the first rank that meets it.
inline ErrorVsRank run_error_vs_rank(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentConfig c = cfg;
  c.tolerance = 0.0;
  c.reference = false;
  const CaseReport rep = solve_case(c, cfg.sizes.front(), cfg.p, cfg.seed, cfg.source());
  ErrorVsRank out;
  out.error = rep.error;
  out.trace = rep.trace;
  for (const auto& s : rep.trace.steps) {
    out.rank.push_back(s.rank);
    out.residual.push_back(s.residual);
    if (out.rank_at_tolerance < 0 && s.residual <= cfg.tolerance) out.rank_at_tolerance = s.rank;
  }
  out.slope = log10_slope(out.rank, out.residual);
  out.nonincreasing = !out.residual.empty();
  for (std::size_t k = 1; k < out.residual.size(); ++k)
    if (out.residual[k] > out.residual[k - 1] * (1.0 + 1e-12)) out.nonincreasing = false;
  return out;
}

// ---------------------------------------------------------------------------
// CSV emission. Every file starts with a comment naming the config hash.

namespace detail {
inline std::string csv_real(double x) {
  if (std::isnan(x)) return "nan";
  return fmt_double(x);
}
inline void csv_preamble(std::ostream& os, const ExperimentConfig& cfg, std::string_view what) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(cfg.hash()));
  os << "# qpdg " << what << " config=" << buf << " sigma="
     << (cfg.sigma ? fmt_double(*cfg.sigma) : std::string("auto_2x_sigma_minus")) << '\n';
}
}  // namespace detail

inline void write_bench_csv(std::ostream& os, const ExperimentConfig& cfg, const std::vector<CaseReport>& rows) {
  detail::csv_preamble(os, cfg, "bench");
  os << "pattern,n_cells,method,seconds,rank,residual\n";
  for (const auto& r : rows) {
    const std::string pat = to_string(r.pattern);
    if (!r.error.empty()) {
      os << pat << ',' << r.n_cells << ",greedy,nan,nan,nan\n";
      continue;
    }
    os << pat << ',' << r.n_cells << ",greedy," << detail::csv_real(r.greedy_seconds) << ',' << r.rank << ','
       << detail::csv_real(r.residual) << '\n';
    if (r.direct_run)
      os << pat << ',' << r.n_cells << ",direct_dg," << detail::csv_real(r.direct_seconds) << ",nan,"
         << detail::csv_real(r.direct_residual) << '\n';
    if (r.cg_run)
      os << pat << ',' << r.n_cells << ",cg_fem," << detail::csv_real(r.cg_seconds) << ",nan,"
         << detail::csv_real(r.cg_residual) << '\n';
  }
  for (const auto& r : rows) {
    os << "# n_cells=" << r.n_cells << " seed=" << r.seed << " sigma=" << detail::csv_real(r.sigma)
       << " converged=" << (r.converged ? "true" : "false") << " energy_error=" << detail::csv_real(r.energy_error);
    if (!r.error.empty()) os << " error=\"" << r.error << '"';
    os << '\n';
  }
}

inline void write_scaling_csv(std::ostream& os, const ExperimentConfig& cfg, const ScalingResult& res) {
  detail::csv_preamble(os, cfg, "scaling");
  os << "source,n_cells,seconds,rank\n";
  for (const auto& r : res.rows)
    os << to_string(r.source) << ',' << r.n_cells << ',' << detail::csv_real(r.seconds) << ',' << r.rank << '\n';
  for (const auto& r : res.rows)
    if (!r.converged || !r.error.empty())
      os << "# not converged: source=" << to_string(r.source) << " n_cells=" << r.n_cells
         << (r.error.empty() ? std::string() : " error=\"" + r.error + '"') << '\n';
}

inline void write_proba_csv(std::ostream& os, const ExperimentConfig& cfg, const ProbaResult& res) {
  detail::csv_preamble(os, cfg, "proba");
  os << "p,n_samples,mean_rank,var_rank,failures\n";
  for (const auto& r : res.rows)
    os << detail::csv_real(r.p) << ',' << r.n_samples << ',' << detail::csv_real(r.mean_rank) << ','
       << detail::csv_real(r.var_rank) << ',' << r.failures << '\n';
}

inline void write_error_vs_rank_csv(std::ostream& os, const ExperimentConfig& cfg, const ErrorVsRank& res) {
  detail::csv_preamble(os, cfg, "error_vs_rank");
  os << "rank,residual\n";
  for (std::size_t k = 0; k < res.rank.size(); ++k) os << res.rank[k] << ',' << detail::csv_real(res.residual[k]) << '\n';
  os << "# slope=" << detail::csv_real(res.slope) << '\n';
}

}  // namespace qpdg
