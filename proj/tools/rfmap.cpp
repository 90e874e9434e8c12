// rfmap: radio-map survey pipeline on the command line.
//
// Exit codes: 0 success, 1 usage or input error, 2 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "rfmap/adaptive.hpp"
#include "rfmap/completion.hpp"
#include "rfmap/experiments.hpp"
#include "rfmap/io.hpp"
#include "rfmap/localization.hpp"
#include "rfmap/rss_sim.hpp"

using namespace rfmap;

namespace {

FloorPlan plan_arg(const std::string& p) { return p == "default" ? default_floor_plan() : load_plan(p); }

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os << text;
  if (!os) throw FormatError("write failed: " + path);
}

struct GenArgs {
  std::string plan = "default";
  std::string out;
  std::string plan_out;
  double sigma = 0.0;
  std::optional<std::uint64_t> seed;
};

struct SampleArgs {
  std::string truth;
  std::string method = "uniform";
  double rate = 0.3;
  double delta = 0.5;
  int rounds = 4;
  double sigma = 0.0;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string estimate_out;
  std::string report_out;
};

struct CompleteArgs {
  std::string samples;
  std::string method = "tnn";
  std::optional<double> lambda;
  std::optional<Index> rank;
  int max_iters = 500;
  double tol = 1e-6;
  std::string out;
};

struct QueriesArgs {
  std::string truth;
  std::string plan = "default";
  Index count = 500;
  double sigma = 0.0;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct LocalizeArgs {
  std::string map;
  std::string samples;
  std::string plan = "default";
  std::string queries;
  std::string locator = "knn";
  LocalizerConfig cfg;
  std::string out;
  std::string cdf_out;
};

struct EvalArgs {
  std::string truth;
  std::string estimate;
  std::string samples;
  std::string errors;
  double threshold = 1.0;
};

struct ExperimentArgs {
  std::string spec;
  std::string out;
  std::string cdf_out;
  std::string journal;
  int threads = 1;
};

std::uint64_t need_seed(const std::optional<std::uint64_t>& s, const char* what) {
  if (!s) throw InvalidArgument(std::string(what) + " is stochastic: --seed is required");
  return *s;
}

Locator locator_arg(const std::string& s) { return s == "kernel" ? Locator::kernel : Locator::knn; }

int cmd_gen(const GenArgs& a) {
  const auto plan = plan_arg(a.plan);
  auto truth = gen_rss(plan);
  if (a.sigma > 0.0) truth = add_noise(truth, {a.sigma, need_seed(a.seed, "gen with --sigma > 0")});
  save_t3b(a.out, truth);
  if (!a.plan_out.empty()) save_plan(a.plan_out, plan);
  std::cerr << "wrote " << truth.n1() << "x" << truth.n2() << "x" << truth.n3() << " map to " << a.out << "\n";
  return 0;
}

int cmd_sample(const SampleArgs& a) {
  const auto seed = need_seed(a.seed, "sample");
  const auto truth = load_t3b(a.truth);
  SimulatedOracle oracle(truth, a.sigma, seed);
  const Index budget = std::clamp<Index>(static_cast<Index>(std::llround(a.rate * static_cast<double>(truth.n1() * truth.n2()))), 1,
                                         truth.n1() * truth.n2());
  if (a.method == "uniform") {
    if (!a.estimate_out.empty() || !a.report_out.empty())
      throw InvalidArgument("--estimate-out and --report apply to --method adaptive only");
    save_smp(a.out, uniform_tubes(oracle, budget, seed));
    return 0;
  }
  AdaptiveConfig cfg;
  cfg.budget_m = budget;
  cfg.delta = a.delta;
  cfg.rounds_l = a.rounds;
  cfg.seed = seed;
  const auto res = adaptive_complete(oracle, cfg);
  save_smp(a.out, res.samples);
  if (!a.estimate_out.empty()) save_t3b(a.estimate_out, res.estimate);
  if (!a.report_out.empty()) {
    std::ostringstream os;
    write_report(os, res.report);
    write_text(a.report_out, os.str());
  }
  return 0;
}

int cmd_complete(const CompleteArgs& a) {
  const auto samples = load_smp(a.samples);
  CompletionConfig cfg;
  cfg.lambda = a.lambda;
  cfg.max_iters = a.max_iters;
  cfg.rel_tol = a.tol;
  CompletionResult res;
  if (a.method == "tnn") {
    res = complete_tnn(samples, cfg);
  } else if (a.method == "mc-face") {
    res = complete_mc_facewise(samples, cfg);
  } else {
    if (!a.rank) throw InvalidArgument("--method mc-flat needs --rank");
    cfg.target_rank = a.rank;
    res = complete_mc_flat(samples, cfg);
  }
  save_t3b(a.out, res.estimate);
  std::cerr << "iterations=" << res.report.iterations << " converged=" << (res.report.converged ? 1 : 0)
            << " lambda=" << res.report.lambda << "\n";
  return 0;
}

int cmd_queries(const QueriesArgs& a) {
  const auto seed = need_seed(a.seed, "queries");
  const auto truth = load_t3b(a.truth);
  const auto plan = plan_arg(a.plan);
  if (plan.n1 != truth.n1() || plan.n2 != truth.n2() || plan.n3() != truth.n3())
    throw DimensionError("queries: plan grid does not match the map");
  const auto qs = draw_queries(truth, plan, a.count, a.sigma, seed);
  std::ostringstream os;
  write_queries_csv(os, qs);
  write_text(a.out, os.str());
  return 0;
}

int cmd_localize(const LocalizeArgs& a) {
  if (a.map.empty() == a.samples.empty()) throw InvalidArgument("localize: give exactly one of --map or --samples");
  const auto plan = plan_arg(a.plan);
  std::optional<FingerprintDB> db;
  if (!a.map.empty()) {
    db = build_db(load_t3b(a.map), plan);
  } else {
    const auto s = load_smp(a.samples);
    db = build_db(s.zero_filled(), plan, s);
  }
  std::ifstream qs(a.queries);
  if (!qs) throw FormatError("cannot open " + a.queries);
  const auto queries = read_queries_csv(qs);
  const auto results = locate_all(locator_arg(a.locator), *db, queries, a.cfg);
  std::ostringstream os;
  write_errors_csv(os, results);
  write_text(a.out, os.str());
  if (!a.cdf_out.empty()) {
    std::ostringstream cs;
    write_cdf_csv(cs, empirical_cdf(errors_of(results)));
    write_text(a.cdf_out, cs.str());
  }
  return 0;
}

int cmd_eval_nse(const EvalArgs& a) {
  const auto truth = load_t3b(a.truth);
  const auto est = load_t3b(a.estimate);
  double v = 0.0;
  if (a.samples.empty()) {
    v = nse_full(truth, est);
  } else {
    const auto s = load_smp(a.samples);
    v = s.size() >= truth.n1() * truth.n2() ? nse_full(truth, est) : nse(truth, est, s);
  }
  std::printf("%.17g\n", v);
  return 0;
}

int cmd_eval_errors(const EvalArgs& a) {
  std::ifstream is(a.errors);
  if (!is) throw FormatError("cannot open " + a.errors);
  std::vector<double> e;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    const auto row = detail::parse_csv_row(line, lineno);
    if (row.size() != 5) throw FormatError("errors CSV line " + std::to_string(lineno) + ": expected 5 columns");
    e.push_back(row[4]);
  }
  if (e.empty()) throw FormatError("errors CSV has no rows");
  std::printf("count=%zu\nmedian_m=%.17g\np95_m=%.17g\nwithin_%g_m=%.17g\n", e.size(), percentile(e, 0.5),
              percentile(e, 0.95), a.threshold, cdf_at(e, a.threshold));
  return 0;
}

int cmd_experiment(const std::string& kind, const ExperimentArgs& a) {
  const auto spec = load_spec(a.spec);
  const RunOptions opt{a.threads, a.journal};
  if (kind == "recovery") {
    write_text(a.out, run_recovery_curve(spec, opt).to_csv());
  } else if (kind == "cdf") {
    const auto res = run_localization_cdf(spec, opt);
    write_text(a.out, res.errors_csv());
    if (!a.cdf_out.empty()) write_text(a.cdf_out, res.cdf_csv());
  } else {
    write_text(a.out, run_budget_search(spec, opt).to_csv());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rfmap: radio-map reconstruction from tubal samples"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Simulate the noiseless RSS map of a floor plan (T3B)");
  g->add_option("--plan", gen.plan, "rfplan/1 JSON file or 'default'");
  g->add_option("--out", gen.out, "Output T3B map")->required();
  g->add_option("--plan-out", gen.plan_out, "Also write the resolved plan as JSON");
  g->add_option("--sigma", gen.sigma, "Gaussian noise on every entry (dB); needs --seed when > 0")->check(CLI::NonNegativeNumber);
  g->add_option("--seed", gen.seed, "Noise seed");

  SampleArgs smp;
  auto* s = app.add_subcommand("sample", "Survey a map: uniform tubes or the adaptive two-pass scheme");
  s->add_option("--truth", smp.truth, "T3B map to measure")->required();
  s->add_option("--method", smp.method, "uniform | adaptive")->check(CLI::IsMember({"uniform", "adaptive"}));
  s->add_option("--rate", smp.rate, "Budget as a fraction of grid points")->check(CLI::Range(0.0, 1.0));
  s->add_option("--delta", smp.delta, "Adaptive: first-pass share of the budget")->check(CLI::Range(0.0, 1.0));
  s->add_option("--rounds", smp.rounds, "Adaptive: second-pass rounds")->check(CLI::PositiveNumber);
  s->add_option("--sigma", smp.sigma, "Measurement noise (dB)")->check(CLI::NonNegativeNumber);
  s->add_option("--seed", smp.seed, "Sampling and noise seed (required)");
  s->add_option("--out", smp.out, "Output SMP sample set")->required();
  s->add_option("--estimate-out", smp.estimate_out, "Adaptive: write the reconstructed map (T3B)");
  s->add_option("--report", smp.report_out, "Adaptive: write the run report (key=value)");

  CompleteArgs cmp;
  auto* c = app.add_subcommand("complete", "Complete a map from a sample set");
  c->add_option("--samples", cmp.samples, "Input SMP sample set")->required();
  c->add_option("--method", cmp.method, "tnn | mc-face | mc-flat")->check(CLI::IsMember({"tnn", "mc-face", "mc-flat"}));
  c->add_option("--lambda", cmp.lambda, "Regularization weight (default 0.1 ||Y||_F / sqrt(n1 n2))");
  c->add_option("--rank", cmp.rank, "mc-flat: target rank")->check(CLI::PositiveNumber);
  c->add_option("--max-iters", cmp.max_iters, "Iteration cap")->check(CLI::PositiveNumber);
  c->add_option("--tol", cmp.tol, "Relative stopping tolerance")->check(CLI::PositiveNumber);
  c->add_option("--out", cmp.out, "Output T3B estimate")->required();

  QueriesArgs qry;
  auto* q = app.add_subcommand("queries", "Draw noisy query fingerprints at random grid points (CSV)");
  q->add_option("--truth", qry.truth, "T3B map the queries are drawn from")->required();
  q->add_option("--plan", qry.plan, "Floor plan of the map");
  q->add_option("--count", qry.count, "Number of distinct grid points")->check(CLI::PositiveNumber);
  q->add_option("--sigma", qry.sigma, "Query noise (dB)")->check(CLI::NonNegativeNumber);
  q->add_option("--seed", qry.seed, "Query seed (required)");
  q->add_option("--out", qry.out, "Output CSV ('-' for stdout)")->required();

  LocalizeArgs loc;
  auto* l = app.add_subcommand("localize", "Locate queries against a map or raw samples");
  l->add_option("--map", loc.map, "T3B map used as the fingerprint database");
  l->add_option("--samples", loc.samples, "SMP samples used directly as the database");
  l->add_option("--plan", loc.plan, "Floor plan of the map");
  l->add_option("--queries", loc.queries, "Query CSV")->required();
  l->add_option("--locator", loc.locator, "knn | kernel")->check(CLI::IsMember({"knn", "kernel"}));
  l->add_option("--k", loc.cfg.k, "KNN: neighbors")->check(CLI::PositiveNumber);
  l->add_option("--d0", loc.cfg.d0, "Distance offset in the weights (dB)")->check(CLI::NonNegativeNumber);
  l->add_option("--kernel-h", loc.cfg.h, "Kernel: neighbors")->check(CLI::PositiveNumber);
  l->add_option("--out", loc.out, "Output errors CSV ('-' for stdout)")->required();
  l->add_option("--cdf-out", loc.cdf_out, "Also write the empirical CDF");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a reconstruction or a localization run");
  e->require_subcommand(1);
  auto* en = e->add_subcommand("nse", "Normalized squared error of an estimate");
  en->add_option("--truth", ev.truth, "T3B ground truth")->required();
  en->add_option("--est", ev.estimate, "T3B estimate")->required();
  en->add_option("--samples", ev.samples, "SMP set; restricts the error to unsampled tubes");
  auto* ee = e->add_subcommand("errors", "Summary of a localization errors CSV");
  ee->add_option("--errors", ev.errors, "Errors CSV from localize")->required();
  ee->add_option("--threshold", ev.threshold, "Report the share of errors within this distance (m)")
      ->check(CLI::NonNegativeNumber);

  ExperimentArgs ex;
  auto* x = app.add_subcommand("experiment", "Run an rfexp/1 experiment; seeds come from the spec file");
  x->require_subcommand(1);
  std::string kind;
  for (const char* name : {"recovery", "cdf", "budget"}) {
    auto* sub = x->add_subcommand(name, std::string(name) == "recovery" ? "NSE per method, rate, noise and seed"
                                        : std::string(name) == "cdf"    ? "Per-query localization errors and CDFs"
                                                                        : "Minimal sampling rate reaching the error target");
    sub->add_option("--spec", ex.spec, "rfexp/1 JSON file")->required();
    sub->add_option("--out", ex.out, "Output CSV ('-' for stdout)")->required();
    if (std::string(name) == "cdf") sub->add_option("--cdf-out", ex.cdf_out, "Output CDF CSV");
    sub->add_option("--journal", ex.journal, "Resumable per-cell results file");
    sub->add_option("--threads", ex.threads, "Worker threads")->check(CLI::Range(1, 256));
    sub->callback([&kind, name] { kind = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    std::cerr << "\n" << app.help();
    return 1;
  }

  try {
    if (g->parsed()) return cmd_gen(gen);
    if (s->parsed()) return cmd_sample(smp);
    if (c->parsed()) return cmd_complete(cmp);
    if (q->parsed()) return cmd_queries(qry);
    if (l->parsed()) return cmd_localize(loc);
    if (en->parsed()) return cmd_eval_nse(ev);
    if (ee->parsed()) return cmd_eval_errors(ev);
    if (x->parsed()) return cmd_experiment(kind, ex);
  } catch (const NumericError& err) {
    std::cerr << "numeric failure: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 1;
}
