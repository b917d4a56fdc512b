// kronbench: run, benchmark, tune and simulate Kron-Matmul problems.
//
// Exit codes: 0 success, 1 verification failure, 2 configuration error,
// 3 parse error.

#include <atomic>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "CLI11.hpp"
#include "kron/bench.hpp"

namespace {

constexpr int kVerifyFailed = 1;
constexpr int kConfigError = 2;
constexpr int kParseError = 3;

struct SpecFlags {
  std::size_t m = 0;
  std::string factors;

  void add(CLI::App* cmd, bool required) {
    auto* mo = cmd->add_option("-m", m, "Rows of X");
    auto* fo = cmd->add_option("-f", factors, "Factors: PxQ[,PxQ...], P^N or PxQ^N");
    if (required) {
      mo->required();
      fo->required();
    }
  }
  bool given() const { return m != 0 || !factors.empty(); }
  kron::ProblemSpec parse() const {
    return kron::parse_spec("-m " + std::to_string(m) + " -f " + factors);
  }
};

struct Common {
  std::string dtype = "f32";
  std::uint64_t seed = 1;
  std::size_t budget = kron::kDefaultScratchBytes;
  std::string cost_model = "wall";
  std::string csv;

  void add(CLI::App* cmd) {
    cmd->add_option("--dtype", dtype, "f32 or f64")->capture_default_str();
    cmd->add_option("--seed", seed, "Seed for the synthetic inputs")->capture_default_str();
    cmd->add_option("--budget", budget, "Scratch bytes per block")->capture_default_str();
    cmd->add_option("--cost-model", cost_model, "wall or counter")->capture_default_str();
    cmd->add_option("--csv", csv, "Also write the CSV rows to this file");
  }
};

struct RunFlags {
  std::string algo = "sliced";
  bool verify = false;
  bool real = false;
  std::string tile;
  std::size_t fused = 0;
  std::size_t threads = 1;
  std::string grid = "1x1";
  std::size_t workers = 0;
  std::size_t local = 0;
  bool threaded = false;
  std::size_t repeat = 1;
  std::string cache;

  void add(CLI::App* cmd) {
    cmd->add_option("--algo", algo, "naive, shuffle, ftmmt, sliced, fused or dist")
        ->capture_default_str();
    cmd->add_flag("--verify", verify, "Compare against an oracle");
    cmd->add_flag("--real", real, "Uniform reals instead of small integers");
    cmd->add_option("--tile", tile, "tileM,tileK,tileP,tileQ,regK,regP,regQ");
    cmd->add_option("--fused", fused, "Factors per fused pass (0 = deepest valid)");
    cmd->add_option("--threads", threads, "Worker threads for block execution")
        ->capture_default_str();
    cmd->add_option("--grid", grid, "Worker grid GMxGK for dist")->capture_default_str();
    cmd->add_option("--workers", workers, "Worker count for dist; picks the grid");
    cmd->add_option("--local", local, "Local multiplies per round for dist (0 = deepest)");
    cmd->add_flag("--threaded", threaded, "One thread per simulated worker");
    cmd->add_option("--repeat", repeat, "Timed runs; the median is reported")
        ->capture_default_str();
    cmd->add_option("--cache", cache, "Tuning cache to take the tile from");
  }
};

kron::RunConfig make_config(const kron::ProblemSpec& spec, const Common& c, const RunFlags& r) {
  kron::RunConfig cfg;
  cfg.algo = kron::parse_algorithm(r.algo);
  cfg.dtype = kron::parse_dtype(c.dtype);
  cfg.seed = c.seed;
  cfg.verify = r.verify;
  cfg.real = r.real;
  cfg.fused = r.fused;
  cfg.budget = c.budget;
  cfg.threads = r.threads;
  cfg.grid = r.workers ? kron::select_grid(r.workers) : kron::ProcGrid::parse(r.grid);
  cfg.local = r.local;
  cfg.threaded_dist = r.threaded;
  cfg.cost_model = kron::parse_cost_model(c.cost_model);
  cfg.repeat = r.repeat;
  if (!r.tile.empty()) {
    cfg.tile = kron::TileConfig::parse(r.tile);
  } else if (!r.cache.empty() && spec.problem().uniform()) {
    const auto& s = spec.shapes.front();
    const auto cache = kron::TuneCache::load(r.cache);
    if (auto hit = cache.find({spec.m, s.p, s.q, spec.shapes.size(), cfg.dtype})) {
      cfg.tile = hit->tile;
      if (cfg.algo == kron::Algorithm::Fused && cfg.fused == 0) cfg.fused = hit->fused;
    }
  }
  return cfg;
}

class CsvSink {
 public:
  CsvSink(const std::string& path, kron::CostModel model) : model_(model) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw kron::ConfigError("cannot write " + path);
    }
    emit(kron::csv_header());
  }
  void row(const kron::RunRecord& rec) { emit(kron::csv_row(rec, model_)); }

 private:
  void emit(const std::string& line) {
    std::cout << line << '\n';
    if (file_) file_ << line << '\n';
  }
  kron::CostModel model_;
  std::ofstream file_;
};

void report_mismatch(const kron::RunRecord& rec) {
  std::cerr << "verification failed: " << rec.spec << " " << kron::to_string(rec.algo)
            << " against " << rec.reference << ": " << rec.mismatch.count
            << " differing entries, max abs " << rec.mismatch.max_abs << ", max rel "
            << rec.mismatch.max_rel << ", first at index " << rec.mismatch.first_index
            << ", relative Frobenius error " << rec.rel_error << '\n';
}

int cmd_run(const SpecFlags& sf, const Common& c, const RunFlags& r) {
  const auto spec = sf.parse();
  const auto cfg = make_config(spec, c, r);
  CsvSink sink(c.csv, cfg.cost_model);
  const auto rec = kron::run(spec, cfg);
  sink.row(rec);
  if (rec.comm_total) std::cerr << "comm_total=" << *rec.comm_total << '\n';
  if (rec.verified && !*rec.verified) {
    report_mismatch(rec);
    return kVerifyFailed;
  }
  return 0;
}

int cmd_bench(const SpecFlags& sf, const Common& c, const RunFlags& r, const std::string& suite,
              const std::string& algos, std::size_t jobs, bool no_verify) {
  std::vector<kron::ProblemSpec> specs;
  if (!suite.empty()) {
    if (suite != "table4-desk") throw kron::ConfigError("unknown suite '" + suite + "'");
    specs = kron::desk_suite();
  }
  if (sf.given()) specs.push_back(sf.parse());
  if (specs.empty()) throw kron::ConfigError("bench needs --suite or -m/-f");

  std::vector<kron::Algorithm> chosen;
  for (std::size_t start = 0; start <= algos.size();) {
    const std::size_t end = std::min(algos.find(',', start), algos.size());
    chosen.push_back(kron::parse_algorithm(algos.substr(start, end - start)));
    start = end + 1;
  }

  struct Job {
    kron::ProblemSpec spec;
    kron::RunConfig cfg;
  };
  std::vector<Job> work;
  for (const auto& spec : specs)
    for (auto algo : chosen) {
      RunFlags rf = r;
      rf.algo = std::string(kron::to_string(algo));
      rf.verify = !no_verify;
      work.push_back({spec, make_config(spec, c, rf)});
    }

  std::vector<std::optional<kron::RunRecord>> records(work.size());
  std::vector<std::string> errors(work.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < work.size(); i = next++) {
      try {
        records[i] = kron::run(work[i].spec, work[i].cfg);
      } catch (const kron::Error& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < std::max<std::size_t>(1, jobs); ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  CsvSink sink(c.csv, kron::parse_cost_model(c.cost_model));
  int status = 0;
  for (std::size_t i = 0; i < work.size(); ++i) {
    if (!records[i]) {
      std::cerr << "error: " << work[i].spec.label() << " "
                << kron::to_string(work[i].cfg.algo) << ": " << errors[i] << '\n';
      status = std::max(status, kConfigError);
      continue;
    }
    sink.row(*records[i]);
    if (records[i]->verified && !*records[i]->verified) {
      report_mismatch(*records[i]);
      if (status == 0) status = kVerifyFailed;
    }
  }
  return status;
}

struct TuneFlags {
  std::size_t trials = 3;
  double time_cap = 30;
  std::size_t jobs = 1;
  std::size_t max_candidates = 10000;
  std::string cache;
};

int cmd_tune(const SpecFlags& sf, const Common& c, const TuneFlags& t) {
  const auto spec = sf.parse();
  const auto problem = spec.problem();
  if (!problem.uniform()) throw kron::ConfigError("tune needs every factor to share one shape");
  const auto dtype = kron::parse_dtype(c.dtype);
  const std::size_t bytes = dtype == kron::DType::F32 ? 4 : 8;
  const auto& s = problem.shapes.front();
  const auto space = kron::enumerate_configs(problem.m, s.p, s.q, problem.k, c.budget, bytes,
                                             problem.n(), t.max_candidates);
  kron::TuneOptions opts;
  opts.cost_model = kron::parse_cost_model(c.cost_model);
  opts.trials = t.trials;
  opts.time_cap_seconds = t.time_cap;
  opts.jobs = t.jobs;
  opts.seed = c.seed;
  const auto result = dtype == kron::DType::F32 ? kron::autotune<float>(problem, space, opts)
                                                : kron::autotune<double>(problem, space, opts);
  std::size_t disqualified = 0;
  for (const auto& r : result.results) disqualified += r.disqualified;
  const char* unit = opts.cost_model == kron::CostModel::Wall ? " ms" : "";
  std::cout << "spec: " << spec.canonical() << '\n'
            << "candidates: " << space.candidates.size() << " of " << space.enumerated
            << " enumerated\n"
            << "evaluated: " << result.results.size() << ", disqualified: " << disqualified
            << ", skipped: " << result.skipped << '\n'
            << "default: " << result.default_candidate.tile.to_string() << " fused "
            << result.default_candidate.fused << " cost " << result.default_cost << unit << '\n'
            << "best: " << result.best.tile.to_string() << " fused " << result.best.fused
            << " cost " << result.best_cost << unit << '\n'
            << "verified: " << (result.verified ? "true" : "false") << '\n';
  if (!t.cache.empty()) {
    auto cache = kron::TuneCache::load(t.cache);
    cache.put({problem.m, s.p, s.q, problem.n(), dtype}, result.best);
    cache.save(t.cache);
  }
  return result.verified ? 0 : kVerifyFailed;
}

int cmd_dist(const SpecFlags& sf, const Common& c, RunFlags r, const std::string& scenario_file,
             const std::string& trace) {
  r.algo = "dist";
  std::vector<std::pair<kron::ProblemSpec, kron::RunConfig>> runs;
  if (!scenario_file.empty()) {
    for (const auto& sc : kron::load_scenarios(scenario_file)) {
      kron::ProblemSpec spec;
      spec.m = sc.m;
      spec.shapes.assign(sc.n, {sc.p, sc.q});
      RunFlags rf = r;
      rf.local = sc.local;
      rf.grid = sc.grid.to_string();
      rf.workers = 0;
      Common cc = c;
      cc.seed = sc.seed;
      cc.dtype = std::string(kron::to_string(sc.dtype));
      runs.emplace_back(spec, make_config(spec, cc, rf));
    }
  } else {
    const auto spec = sf.parse();
    runs.emplace_back(spec, make_config(spec, c, r));
  }

  CsvSink sink(c.csv, kron::parse_cost_model(c.cost_model));
  int status = 0;
  for (const auto& [spec, cfg] : runs) {
    const auto rec = kron::run(spec, cfg);
    sink.row(rec);
    std::cerr << spec.canonical() << " grid " << cfg.grid.to_string()
              << " comm_total=" << rec.comm_total.value_or(0) << '\n';
    if (rec.verified && !*rec.verified) {
      report_mismatch(rec);
      status = kVerifyFailed;
    }
  }
  if (!trace.empty()) {
    // The trace covers the last run; rerun it for the ledger.
    const auto& [spec, cfg] = runs.back();
    const auto problem = spec.problem();
    const auto plan = kron::DistPlan::make(problem.m, problem.shapes, cfg.grid, cfg.local);
    std::vector<kron::Matrix<double>> fs;
    for (const auto& s : problem.shapes) fs.push_back(kron::Matrix<double>(s.p, s.q));
    const auto ledger =
        kron::dist_kronmatmul(kron::Matrix<double>(problem.m, problem.k),
                              kron::FactorChain<double>(std::move(fs)), plan)
            .ledger;
    std::ofstream out(trace);
    if (!out) throw kron::ConfigError("cannot write " + trace);
    out << ledger.trace_csv();
  }
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kronecker matrix-matrix multiplication driver"};
  app.require_subcommand(1);

  SpecFlags spec;
  Common common;
  RunFlags run_flags;

  auto* run = app.add_subcommand("run", "Run one algorithm on one problem");
  spec.add(run, true);
  common.add(run);
  run_flags.add(run);

  auto* bench = app.add_subcommand("bench", "Run several algorithms, optionally over a suite");
  std::string suite;
  std::string algos = "sliced,shuffle,ftmmt";
  std::size_t jobs = 1;
  bool no_verify = false;
  spec.add(bench, false);
  common.add(bench);
  bench->add_option("--suite", suite, "Preset suite: table4-desk");
  bench->add_option("--algos", algos, "Comma-separated algorithms")->capture_default_str();
  bench->add_option("--jobs", jobs, "Rows run concurrently")->capture_default_str();
  bench->add_flag("--no-verify", no_verify, "Skip oracle comparison");
  bench->add_option("--tile", run_flags.tile, "tileM,tileK,tileP,tileQ,regK,regP,regQ");
  bench->add_option("--fused", run_flags.fused, "Factors per fused pass (0 = deepest valid)");
  bench->add_flag("--real", run_flags.real, "Uniform reals instead of small integers");
  bench->add_option("--threads", run_flags.threads, "Worker threads for block execution");

  auto* tune = app.add_subcommand("tune", "Search tile configurations for one problem");
  TuneFlags tune_flags;
  spec.add(tune, true);
  common.add(tune);
  tune->add_option("--trials", tune_flags.trials, "Timed runs per candidate")->capture_default_str();
  tune->add_option("--time-cap", tune_flags.time_cap, "Seconds of wall-clock search")
      ->capture_default_str();
  tune->add_option("--jobs", tune_flags.jobs, "Candidates timed concurrently")
      ->capture_default_str();
  tune->add_option("--max-candidates", tune_flags.max_candidates, "Search space cap")
      ->capture_default_str();
  tune->add_option("--cache", tune_flags.cache, "Tuning cache file to update");

  auto* dist = app.add_subcommand("dist", "Simulate the distributed algorithm");
  std::string scenario_file;
  std::string trace;
  spec.add(dist, false);
  common.add(dist);
  run_flags.add(dist);
  dist->add_option("--scenario", scenario_file, "File of m,p,q,n,gm,gk,local,dtype,seed lines");
  dist->add_option("--trace", trace, "Write the communication trace CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kParseError;
  }

  try {
    if (run->parsed()) return cmd_run(spec, common, run_flags);
    if (bench->parsed()) return cmd_bench(spec, common, run_flags, suite, algos, jobs, no_verify);
    if (tune->parsed()) return cmd_tune(spec, common, tune_flags);
    if (dist->parsed()) {
      if (scenario_file.empty() && !spec.given()) {
        throw kron::ConfigError("dist needs -m/-f or --scenario");
      }
      return cmd_dist(spec, common, run_flags, scenario_file, trace);
    }
  } catch (const kron::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kParseError;
  } catch (const kron::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  }
  return 0;
}
