#pragma once

// Experiment pipelines: generate -> sample -> complete -> localize -> evaluate.
//
// Every (method, rate, noise, seed) cell is a pure function of the resolved
// spec, so cells can run on several threads and the CSV is assembled in a fixed
// key order. Measurement noise at grid point (i, j) depends only on (seed, i, j),
// and the uniform draw depends only on (seed, count), so all methods of a cell
// see identical draws.
//
// Noise semantics: in the recovery curve the noise level is the survey
// measurement noise; in the localization and budget experiments it is the
// query noise, and the survey uses `survey_sigma_dbm` (0 by default).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rfmap/adaptive.hpp"
#include "rfmap/completion.hpp"
#include "rfmap/localization.hpp"
#include "rfmap/rng.hpp"
#include "rfmap/rss_sim.hpp"

namespace rfmap {

enum class Method {
  uniform_tnn,
  uniform_mc_face,
  uniform_mc_flat,
  adaptive_quarter,
  adaptive_half,
  dl_uniform,
  dl_adaptive_quarter,
  dl_adaptive_half,
};

inline const std::vector<std::pair<Method, const char*>>& method_names() {
  static const std::vector<std::pair<Method, const char*>> names{
      {Method::uniform_tnn, "uniform+tnn"},
      {Method::uniform_mc_face, "uniform+mc-face"},
      {Method::uniform_mc_flat, "uniform+mc-flat"},
      {Method::adaptive_quarter, "adaptive-1/4"},
      {Method::adaptive_half, "adaptive-1/2"},
      {Method::dl_uniform, "dl-uniform"},
      {Method::dl_adaptive_quarter, "dl-adaptive-1/4"},
      {Method::dl_adaptive_half, "dl-adaptive"},
  };
  return names;
}

inline std::string method_name(Method m) {
  for (const auto& [k, v] : method_names())
    if (k == m) return v;
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (const auto& [k, v] : method_names())
    if (s == v) return k;
  std::string known;
  for (const auto& [k, v] : method_names()) known += std::string(known.empty() ? "" : ", ") + v;
  throw InvalidArgument("unknown method '" + s + "' (known: " + known + ")");
}

/// Direct-localization methods build no map.
inline bool is_direct(Method m) noexcept {
  return m == Method::dl_uniform || m == Method::dl_adaptive_quarter || m == Method::dl_adaptive_half;
}

inline bool is_adaptive(Method m) noexcept {
  return m == Method::adaptive_quarter || m == Method::adaptive_half || m == Method::dl_adaptive_quarter ||
         m == Method::dl_adaptive_half;
}

inline double adaptive_delta(Method m) noexcept {
  return (m == Method::adaptive_quarter || m == Method::dl_adaptive_quarter) ? 0.25 : 0.5;
}

struct BudgetTarget {
  double error_m = 1.0;
  double percentile_lo = 0.94;
  double percentile_hi = 0.96;
};

struct ExperimentSpec {
  std::string scenario = "default";  ///< "default", or the plan file it was loaded from
  FloorPlan plan = default_floor_plan();
  std::vector<double> rates{0.3};
  std::vector<Method> methods{Method::uniform_tnn, Method::adaptive_half};
  std::vector<double> noise_dbm{1.0};
  double survey_sigma_dbm = 0.0;
  std::vector<std::uint64_t> seeds{1};
  Index query_count = 500;
  Locator locator = Locator::knn;
  LocalizerConfig localizer;
  int rounds_l = 4;
  Index mc_flat_rank = 4;
  std::optional<double> lambda;
  BudgetTarget budget;

  void validate() const {
    plan.validate();
    if (rates.empty()) throw InvalidArgument("ExperimentSpec: rates is empty");
    for (double r : rates)
      if (!(r > 0.0 && r <= 1.0)) throw InvalidArgument("ExperimentSpec: rates must lie in (0, 1]");
    if (methods.empty()) throw InvalidArgument("ExperimentSpec: methods is empty");
    if (noise_dbm.empty()) throw InvalidArgument("ExperimentSpec: noise_dbm is empty");
    for (double s : noise_dbm)
      if (!(s >= 0.0) || !std::isfinite(s)) throw InvalidArgument("ExperimentSpec: noise levels must be >= 0");
    if (!(survey_sigma_dbm >= 0.0) || !std::isfinite(survey_sigma_dbm))
      throw InvalidArgument("ExperimentSpec: survey_sigma_dbm must be >= 0");
    if (seeds.empty()) throw InvalidArgument("ExperimentSpec: seeds is empty");
    if (query_count < 1 || query_count > plan.n1 * plan.n2)
      throw InvalidArgument("ExperimentSpec: query_count must lie in [1, n1 n2]");
    localizer.validate();
    if (rounds_l < 1) throw InvalidArgument("ExperimentSpec: rounds must be >= 1");
    if (mc_flat_rank < 1 || mc_flat_rank > plan.n3())
      throw InvalidArgument("ExperimentSpec: mc_flat_rank must lie in [1, number of APs]");
    if (lambda && !(*lambda > 0.0)) throw InvalidArgument("ExperimentSpec: lambda must be > 0");
    if (!(budget.error_m >= 0.0)) throw InvalidArgument("ExperimentSpec: budget target error must be >= 0");
    if (!(budget.percentile_lo > 0.0 && budget.percentile_lo <= budget.percentile_hi && budget.percentile_hi <= 1.0))
      throw InvalidArgument("ExperimentSpec: budget percentile window must satisfy 0 < lo <= hi <= 1");
  }
};

// ---------------------------------------------------------------------------
// rfexp/1 files
//
// {
//   "format": "rfexp/1",
//   "scenario": "default" | "<plan file, relative to this file>" | { rfplan/1 object },
//   "rates": [0.1, 0.2, 0.3],
//   "methods": ["uniform+tnn", "uniform+mc-face", "adaptive-1/2"],
//   "noise_dbm": [1.0],
//   "survey_sigma_dbm": 0.0,
//   "seeds": [1, 2, 3],
//   "query_count": 500,
//   "locator": "knn" | "kernel", "k": 5, "d0": 0.01, "h": 50,
//   "rounds": 4, "mc_flat_rank": 4, "lambda": null,
//   "budget": {"target_error_m": 1.0, "percentile": [0.94, 0.96]}
// }
// Every key except "format" is optional and defaults to the values above.

inline constexpr const char* kExperimentFormat = "rfexp/1";

inline nlohmann::json spec_to_json(const ExperimentSpec& s) {
  nlohmann::json j;
  j["format"] = kExperimentFormat;
  j["scenario"] = plan_to_json(s.plan);
  j["scenario_source"] = s.scenario;
  j["rates"] = s.rates;
  j["methods"] = nlohmann::json::array();
  for (auto m : s.methods) j["methods"].push_back(method_name(m));
  j["noise_dbm"] = s.noise_dbm;
  j["survey_sigma_dbm"] = s.survey_sigma_dbm;
  j["seeds"] = s.seeds;
  j["query_count"] = s.query_count;
  j["locator"] = locator_name(s.locator);
  j["k"] = s.localizer.k;
  j["d0"] = s.localizer.d0;
  j["h"] = s.localizer.h;
  j["rounds"] = s.rounds_l;
  j["mc_flat_rank"] = s.mc_flat_rank;
  j["lambda"] = s.lambda ? nlohmann::json(*s.lambda) : nlohmann::json(nullptr);
  j["budget"] = {{"target_error_m", s.budget.error_m},
                 {"percentile", {s.budget.percentile_lo, s.budget.percentile_hi}}};
  return j;
}

inline ExperimentSpec spec_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  try {
    if (!j.is_object()) throw FormatError("rfexp: top level must be an object");
    if (j.value("format", std::string{}) != kExperimentFormat)
      throw FormatError(std::string("rfexp: missing or unsupported format tag, expected ") + kExperimentFormat);
    ExperimentSpec s;
    if (j.contains("scenario")) {
      const auto& sc = j.at("scenario");
      if (sc.is_object()) {
        s.plan = plan_from_json(sc);
        s.scenario = j.value("scenario_source", std::string("inline"));
      } else {
        const auto name = sc.get<std::string>();
        if (name == "default") {
          s.plan = default_floor_plan();
        } else {
          const auto path = std::filesystem::path(name).is_absolute() ? std::filesystem::path(name) : base_dir / name;
          s.plan = load_plan(path.string());
        }
        s.scenario = name;
      }
    }
    if (j.contains("rates")) s.rates = j.at("rates").get<std::vector<double>>();
    if (j.contains("methods")) {
      s.methods.clear();
      for (const auto& m : j.at("methods")) s.methods.push_back(parse_method(m.get<std::string>()));
    }
    if (j.contains("noise_dbm")) s.noise_dbm = j.at("noise_dbm").get<std::vector<double>>();
    s.survey_sigma_dbm = j.value("survey_sigma_dbm", s.survey_sigma_dbm);
    if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    s.query_count = j.value("query_count", s.query_count);
    if (j.contains("locator")) {
      const auto loc = j.at("locator").get<std::string>();
      if (loc == "knn") s.locator = Locator::knn;
      else if (loc == "kernel") s.locator = Locator::kernel;
      else throw FormatError("rfexp: locator must be 'knn' or 'kernel'");
    }
    s.localizer.k = j.value("k", s.localizer.k);
    s.localizer.d0 = j.value("d0", s.localizer.d0);
    s.localizer.h = j.value("h", s.localizer.h);
    s.rounds_l = j.value("rounds", s.rounds_l);
    s.mc_flat_rank = j.value("mc_flat_rank", s.mc_flat_rank);
    if (j.contains("lambda") && !j.at("lambda").is_null()) s.lambda = j.at("lambda").get<double>();
    if (j.contains("budget")) {
      const auto& b = j.at("budget");
      s.budget.error_m = b.value("target_error_m", s.budget.error_m);
      if (b.contains("percentile")) {
        const auto p = b.at("percentile").get<std::vector<double>>();
        if (p.size() != 2) throw FormatError("rfexp: budget.percentile must be [lo, hi]");
        s.budget.percentile_lo = p[0];
        s.budget.percentile_hi = p[1];
      }
    }
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("rfexp: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("rfexp: ") + e.what());
  }
}

inline ExperimentSpec load_spec(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return spec_from_json(j, std::filesystem::path(path).parent_path());
}

/// One-line record of the resolved configuration, written at the top of every CSV.
inline std::string config_comment(const ExperimentSpec& s, const std::string& experiment) {
  auto j = spec_to_json(s);
  j["experiment"] = experiment;
  return "# config: " + j.dump();
}

// ---------------------------------------------------------------------------
// Pipeline pieces

/// Number of tubes for a sampling rate, at least one.
inline Index tubes_for_rate(const FloorPlan& plan, double rate) {
  return std::clamp<Index>(static_cast<Index>(std::llround(rate * static_cast<double>(plan.n1 * plan.n2))), 1,
                           plan.n1 * plan.n2);
}

struct Reconstruction {
  std::optional<Tensor3> estimate;  ///< empty for direct localization
  TubeSampleSet samples;
};

/// Whether the method can run at this budget (adaptive needs m >= 1).
inline bool feasible(Method m, const FloorPlan& plan, Index budget, int rounds_l) {
  if (!is_adaptive(m)) return true;
  AdaptiveConfig cfg;
  cfg.budget_m = budget;
  cfg.delta = adaptive_delta(m);
  cfg.rounds_l = rounds_l;
  return cfg.first_pass_rows(plan.n1, plan.n2) >= 1;
}

inline Reconstruction reconstruct(Method m, const ExperimentSpec& spec, const Tensor3& truth, double rate,
                                  double survey_sigma, std::uint64_t seed) {
  const Index budget = tubes_for_rate(spec.plan, rate);
  SimulatedOracle oracle(truth, survey_sigma, seed);
  if (is_adaptive(m)) {
    AdaptiveConfig cfg;
    cfg.budget_m = budget;
    cfg.delta = adaptive_delta(m);
    cfg.rounds_l = spec.rounds_l;
    cfg.seed = seed;
    auto res = adaptive_complete(oracle, cfg);
    Reconstruction out{std::nullopt, std::move(res.samples)};
    if (!is_direct(m)) out.estimate = std::move(res.estimate);
    return out;
  }
  auto samples = uniform_tubes(oracle, budget, seed);
  Reconstruction out{std::nullopt, samples};
  CompletionConfig cc;
  cc.lambda = spec.lambda;
  switch (m) {
    case Method::uniform_tnn:
      out.estimate = complete_tnn(samples, cc).estimate;
      break;
    case Method::uniform_mc_face:
      out.estimate = complete_mc_facewise(samples, cc).estimate;
      break;
    case Method::uniform_mc_flat:
      cc.target_rank = spec.mc_flat_rank;
      out.estimate = complete_mc_flat(samples, cc).estimate;
      break;
    default:
      break;
  }
  return out;
}

/// NSE over unsampled tubes; over the whole grid when every tube was sampled.
inline double recovery_nse(const Tensor3& truth, const Tensor3& est, const TubeSampleSet& samples) {
  if (samples.size() >= truth.n1() * truth.n2()) return nse_full(truth, est);
  return nse(truth, est, samples);
}

/// `count` distinct grid points drawn uniformly, with fingerprints from
/// `truth` plus N(0, sigma^2) query noise. Positions depend only on the seed.
inline std::vector<Query> draw_queries(const Tensor3& truth, const FloorPlan& plan, Index count, double sigma,
                                       std::uint64_t seed) {
  const Index total = plan.n1 * plan.n2;
  if (count < 1 || count > total) throw InvalidArgument("draw_queries: count must lie in [1, n1 n2]");
  if (!(sigma >= 0.0)) throw InvalidArgument("draw_queries: sigma must be >= 0");
  std::vector<Index> cells(static_cast<std::size_t>(total));
  for (Index c = 0; c < total; ++c) cells[static_cast<std::size_t>(c)] = c;
  Stream pick(seed, {tag(StreamTag::queries), 0});
  for (Index c = 0; c < count; ++c) {
    const auto r = c + static_cast<Index>(pick.below(static_cast<std::uint64_t>(total - c)));
    std::swap(cells[static_cast<std::size_t>(c)], cells[static_cast<std::size_t>(r)]);
  }
  std::vector<Query> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index q = 0; q < count; ++q) {
    const Index c = cells[static_cast<std::size_t>(q)];
    const Index i = c % plan.n1;
    const Index j = c / plan.n1;
    auto fp = truth.tube(i, j);
    Stream noise(seed, {tag(StreamTag::queries), 1, static_cast<std::uint64_t>(q)});
    if (sigma > 0.0)
      for (double& v : fp) v += sigma * noise.normal();
    out.push_back({plan.cell_center(i, j), std::move(fp)});
  }
  return out;
}

inline FingerprintDB database_for(const Reconstruction& r, const Tensor3& truth, const FloorPlan& plan) {
  if (r.estimate) return build_db(*r.estimate, plan);
  return build_db(truth, plan, r.samples);
}

// ---------------------------------------------------------------------------
// Execution: thread pool over cells and an append-only journal

struct RunOptions {
  int threads = 1;
  std::string journal;  ///< resumable results file; empty disables
};

namespace detail {

/// Runs f(0..n-1) on up to `threads` workers. The exception of the lowest
/// failing index is rethrown.
template <class F>
void parallel_for(std::size_t n, int threads, F&& f) {
  std::vector<std::exception_ptr> errors(n);
  const auto workers = static_cast<std::size_t>(std::clamp<int>(threads, 1, 256));
  if (workers == 1 || n <= 1) {
    for (std::size_t c = 0; c < n; ++c) {
      try {
        f(c);
      } catch (...) {
        errors[c] = std::current_exception();
        break;
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
      pool.emplace_back([&] {
        for (std::size_t c = next++; c < n && !failed; c = next++) {
          try {
            f(c);
          } catch (...) {
            errors[c] = std::current_exception();
            failed = true;
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Line-oriented result store: a `# config:` header, then one `key<TAB>json`
/// line per finished cell. A torn final line is ignored on reload.
class Journal {
 public:
  Journal() = default;

  Journal(const std::string& path, const std::string& config_line) : path_(path) {
    if (path_.empty()) return;
    std::ifstream is(path_);
    if (is) {
      std::string line;
      bool first = true;
      while (std::getline(is, line)) {
        if (is.eof()) break;  // no trailing newline: torn write
        if (first) {
          first = false;
          if (line != config_line)
            throw FormatError("journal " + path_ + " was written for a different configuration");
          continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos) continue;
        try {
          entries_[line.substr(0, tab)] = nlohmann::json::parse(line.substr(tab + 1));
        } catch (const nlohmann::json::exception&) {
        }
      }
      if (first) write_line(config_line);
    } else {
      write_line(config_line);
    }
  }

  bool enabled() const noexcept { return !path_.empty(); }

  std::optional<nlohmann::json> find(const std::string& key) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void record(const std::string& key, const nlohmann::json& value) {
    std::lock_guard lock(mutex_);
    entries_[key] = value;
    if (!path_.empty()) write_line(key + "\t" + value.dump());
  }

 private:
  void write_line(const std::string& line) {
    std::ofstream os(path_, std::ios::app | std::ios::binary);
    if (!os) throw FormatError("cannot append to journal " + path_);
    // Terminate a torn previous line first so the new record parses.
    if (std::filesystem::exists(path_) && std::filesystem::file_size(path_) > 0) {
      std::ifstream tail(path_, std::ios::binary);
      tail.seekg(-1, std::ios::end);
      char last = '\n';
      tail.get(last);
      if (last != '\n') os << '\n';
    }
    const std::string full = line + "\n";
    os.write(full.data(), static_cast<std::streamsize>(full.size()));
    os.flush();
  }

  std::string path_;
  mutable std::mutex mutex_;
  std::map<std::string, nlohmann::json> entries_;
};

namespace detail {

inline std::string cell_key(const std::string& kind, Method m, double rate, double noise, std::uint64_t seed) {
  std::ostringstream os;
  os.precision(17);
  os << kind << '|' << method_name(m) << '|' << rate << '|' << noise << '|' << seed;
  return os.str();
}

inline std::string num(double v) { return fmt_double(v); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Recovery curve

struct RecoveryRow {
  Method method;
  double rate = 0.0;
  double noise = 0.0;
  std::uint64_t seed = 0;
  double nse = 0.0;
};

struct RecoveryCurve {
  std::string config;
  std::vector<RecoveryRow> rows;

  std::string to_csv() const {
    std::ostringstream os;
    os << config << '\n' << "method,rate,noise,seed,nse\n";
    for (const auto& r : rows)
      os << method_name(r.method) << ',' << detail::num(r.rate) << ',' << detail::num(r.noise) << ',' << r.seed << ','
         << detail::num(r.nse) << '\n';
    return os.str();
  }

  /// Mean NSE over seeds for one (method, rate, noise).
  double mean_nse(Method m, double rate, double noise) const {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : rows)
      if (r.method == m && r.rate == rate && r.noise == noise) {
        sum += r.nse;
        ++n;
      }
    if (n == 0) throw InvalidArgument("mean_nse: no rows for " + method_name(m));
    return sum / n;
  }
};

/// NSE per (method, rate, noise, seed) against the noiseless map. Direct
/// localization methods build no map and are skipped.
inline RecoveryCurve run_recovery_curve(const ExperimentSpec& spec, const RunOptions& opt = {}) {
  spec.validate();
  const Tensor3 truth = gen_rss(spec.plan);
  RecoveryCurve out{config_comment(spec, "recovery"), {}};
  for (Method m : spec.methods) {
    if (is_direct(m)) continue;
    for (double rate : spec.rates)
      for (double noise : spec.noise_dbm)
        for (auto seed : spec.seeds) out.rows.push_back({m, rate, noise, seed, 0.0});
  }
  Journal journal(opt.journal, out.config);
  detail::parallel_for(out.rows.size(), opt.threads, [&](std::size_t c) {
    auto& row = out.rows[c];
    const auto key = detail::cell_key("recovery", row.method, row.rate, row.noise, row.seed);
    if (auto hit = journal.find(key)) {
      row.nse = hit->is_null() ? std::numeric_limits<double>::quiet_NaN() : hit->get<double>();
      return;
    }
    if (!feasible(row.method, spec.plan, tubes_for_rate(spec.plan, row.rate), spec.rounds_l)) {
      row.nse = std::numeric_limits<double>::quiet_NaN();
    } else {
      const auto rec = reconstruct(row.method, spec, truth, row.rate, row.noise, row.seed);
      row.nse = recovery_nse(truth, *rec.estimate, rec.samples);
    }
    journal.record(key, std::isnan(row.nse) ? nlohmann::json(nullptr) : nlohmann::json(row.nse));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Localization CDF

struct LocalizationCell {
  Method method;
  double rate = 0.0;
  double noise = 0.0;
  std::uint64_t seed = 0;
  bool feasible = true;
  std::vector<QueryResult> results;
};

struct LocalizationCdf {
  std::string config;
  std::vector<LocalizationCell> cells;

  /// Errors pooled over seeds for one (method, rate, noise).
  std::vector<double> pooled_errors(Method m, double rate, double noise) const {
    std::vector<double> e;
    for (const auto& c : cells)
      if (c.method == m && c.rate == rate && c.noise == noise)
        for (const auto& r : c.results) e.push_back(r.error_m);
    return e;
  }

  std::string errors_csv() const {
    std::ostringstream os;
    os << config << '\n' << "method,rate,noise,seed,x,y,x_hat,y_hat,error_m\n";
    for (const auto& c : cells)
      for (const auto& r : c.results)
        os << method_name(c.method) << ',' << detail::num(c.rate) << ',' << detail::num(c.noise) << ',' << c.seed << ','
           << detail::num(r.truth.x) << ',' << detail::num(r.truth.y) << ',' << detail::num(r.estimate.x) << ','
           << detail::num(r.estimate.y) << ',' << detail::num(r.error_m) << '\n';
    return os.str();
  }

  /// Empirical CDF per (method, rate, noise), pooled over seeds.
  std::string cdf_csv() const {
    std::ostringstream os;
    os << config << '\n' << "method,rate,noise,threshold_m,fraction\n";
    std::vector<std::tuple<Method, double, double>> groups;
    for (const auto& c : cells) {
      const auto g = std::make_tuple(c.method, c.rate, c.noise);
      if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
    }
    for (const auto& [m, rate, noise] : groups) {
      const auto e = pooled_errors(m, rate, noise);
      if (e.empty()) continue;
      for (const auto& [t, f] : empirical_cdf(e))
        os << method_name(m) << ',' << detail::num(rate) << ',' << detail::num(noise) << ',' << detail::num(t) << ','
           << detail::num(f) << '\n';
    }
    return os.str();
  }
};

/// Localization errors of `query_count` noisy grid-point queries per
/// (method, rate, noise, seed). The survey DB never sees query noise.
inline LocalizationCdf run_localization_cdf(const ExperimentSpec& spec, const RunOptions& opt = {}) {
  spec.validate();
  const Tensor3 truth = gen_rss(spec.plan);
  LocalizationCdf out{config_comment(spec, "cdf"), {}};
  // One reconstruction per (method, rate, seed) serves every noise level.
  struct Job {
    Method method;
    double rate;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (Method m : spec.methods)
    for (double rate : spec.rates)
      for (auto seed : spec.seeds) jobs.push_back({m, rate, seed});
  std::vector<std::vector<LocalizationCell>> per_job(jobs.size());
  Journal journal(opt.journal, out.config);
  detail::parallel_for(jobs.size(), opt.threads, [&](std::size_t c) {
    const auto& job = jobs[c];
    std::optional<FingerprintDB> db;
    const bool ok = feasible(job.method, spec.plan, tubes_for_rate(spec.plan, job.rate), spec.rounds_l);
    for (double noise : spec.noise_dbm) {
      LocalizationCell cell{job.method, job.rate, noise, job.seed, ok, {}};
      const auto key = detail::cell_key("cdf", job.method, job.rate, noise, job.seed);
      if (auto hit = journal.find(key)) {
        cell.feasible = !hit->is_null();
        if (cell.feasible)
          for (const auto& r : *hit)
            cell.results.push_back({{r[0].get<double>(), r[1].get<double>()}, {r[2].get<double>(), r[3].get<double>()},
                                    r[4].get<double>()});
      } else {
        nlohmann::json rec(nullptr);
        if (ok) {
          if (!db) db = database_for(reconstruct(job.method, spec, truth, job.rate, spec.survey_sigma_dbm, job.seed), truth, spec.plan);
          const auto queries = draw_queries(truth, spec.plan, spec.query_count, noise, job.seed);
          cell.results = locate_all(spec.locator, *db, queries, spec.localizer);
          rec = nlohmann::json::array();
          for (const auto& r : cell.results)
            rec.push_back({r.truth.x, r.truth.y, r.estimate.x, r.estimate.y, r.error_m});
        }
        journal.record(key, rec);
      }
      per_job[c].push_back(std::move(cell));
    }
  });
  // Assemble in (method, rate, noise, seed) order.
  for (Method m : spec.methods)
    for (double rate : spec.rates)
      for (double noise : spec.noise_dbm)
        for (auto seed : spec.seeds)
          for (std::size_t c = 0; c < jobs.size(); ++c)
            if (jobs[c].method == m && jobs[c].rate == rate && jobs[c].seed == seed)
              for (auto& cell : per_job[c])
                if (cell.noise == noise) out.cells.push_back(cell);
  return out;
}

// ---------------------------------------------------------------------------
// Budget search

struct BudgetRow {
  Method method;
  double noise = 0.0;
  std::optional<double> min_rate;  ///< empty: target not achieved
  int seeds_achieved = 0;
  int seeds_in_window = 0;
  std::vector<std::optional<int>> per_seed_percent;  ///< minimal rate in percent per seed
};

struct BudgetSearch {
  std::string config;
  std::vector<BudgetRow> rows;

  const BudgetRow& row(Method m, double noise) const {
    for (const auto& r : rows)
      if (r.method == m && r.noise == noise) return r;
    throw InvalidArgument("budget: no row for " + method_name(m));
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << config << '\n' << "method,noise,min_rate,seeds_achieved,seeds_in_window\n";
    for (const auto& r : rows)
      os << method_name(r.method) << ',' << detail::num(r.noise) << ','
         << (r.min_rate ? detail::num(*r.min_rate) : std::string("not_achieved")) << ',' << r.seeds_achieved << ','
         << r.seeds_in_window << '\n';
    return os.str();
  }
};

/// Per seed, bisection over the rate in 1% steps for the smallest rate whose
/// share of queries within the target error reaches the lower percentile.
/// Seeds whose share at that rate also stays within the upper percentile are
/// averaged; if none does, all achieving seeds are averaged instead.
inline BudgetSearch run_budget_search(const ExperimentSpec& spec, const RunOptions& opt = {}) {
  spec.validate();
  const Tensor3 truth = gen_rss(spec.plan);
  BudgetSearch out{config_comment(spec, "budget"), {}};
  struct Job {
    Method method;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (Method m : spec.methods)
    for (auto seed : spec.seeds) jobs.push_back({m, seed});
  // result[job][noise index] = (percent, share at percent) or empty.
  std::vector<std::vector<std::optional<std::pair<int, double>>>> result(jobs.size());
  Journal journal(opt.journal, out.config);

  detail::parallel_for(jobs.size(), opt.threads, [&](std::size_t c) {
    const auto& job = jobs[c];
    std::map<int, std::optional<FingerprintDB>> dbs;
    auto db_at = [&](int pct) -> const std::optional<FingerprintDB>& {
      auto it = dbs.find(pct);
      if (it != dbs.end()) return it->second;
      const double rate = pct / 100.0;
      std::optional<FingerprintDB> db;
      if (feasible(job.method, spec.plan, tubes_for_rate(spec.plan, rate), spec.rounds_l))
        db = database_for(reconstruct(job.method, spec, truth, rate, spec.survey_sigma_dbm, job.seed), truth, spec.plan);
      return dbs.emplace(pct, std::move(db)).first->second;
    };
    for (double noise : spec.noise_dbm) {
      const auto queries = draw_queries(truth, spec.plan, spec.query_count, noise, job.seed);
      std::map<int, double> shares;
      auto share = [&](int pct) {
        auto it = shares.find(pct);
        if (it != shares.end()) return it->second;
        const auto key = detail::cell_key("budget", job.method, pct / 100.0, noise, job.seed);
        double v = 0.0;
        if (auto hit = journal.find(key)) {
          v = hit->get<double>();
        } else {
          const auto& db = db_at(pct);
          v = db ? cdf_at(errors_of(locate_all(spec.locator, *db, queries, spec.localizer)), spec.budget.error_m) : 0.0;
          journal.record(key, v);
        }
        shares[pct] = v;
        return v;
      };
      auto meets = [&](int pct) { return share(pct) >= spec.budget.percentile_lo; };
      std::optional<std::pair<int, double>> found;
      if (meets(100)) {
        int lo = 0;  // lo fails (or is below the grid), hi meets
        int hi = 100;
        while (hi - lo > 1) {
          const int mid = (lo + hi) / 2;
          if (meets(mid)) hi = mid;
          else lo = mid;
        }
        found = std::make_pair(hi, share(hi));
      }
      result[c].push_back(found);
    }
  });

  for (Method m : spec.methods) {
    for (std::size_t n = 0; n < spec.noise_dbm.size(); ++n) {
      BudgetRow row{m, spec.noise_dbm[n], std::nullopt, 0, 0, {}};
      double sum_window = 0.0;
      double sum_all = 0.0;
      for (std::size_t c = 0; c < jobs.size(); ++c) {
        if (jobs[c].method != m) continue;
        const auto& f = result[c][n];
        row.per_seed_percent.push_back(f ? std::optional<int>(f->first) : std::nullopt);
        if (!f) continue;
        ++row.seeds_achieved;
        sum_all += f->first / 100.0;
        if (f->second <= spec.budget.percentile_hi) {
          ++row.seeds_in_window;
          sum_window += f->first / 100.0;
        }
      }
      if (row.seeds_in_window > 0) row.min_rate = sum_window / row.seeds_in_window;
      else if (row.seeds_achieved > 0) row.min_rate = sum_all / row.seeds_achieved;
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

}  // namespace rfmap
