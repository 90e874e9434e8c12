#pragma once

// Fingerprint matching against a reference database: weighted KNN with
// inverse-distance weights, and a kernel estimator with inverse squared
// distance weights over the h nearest records.
//
// Records are kept in canonical (x, y, fingerprint) order and distance ties
// are broken by that order, so results do not depend on how the database was
// assembled.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rfmap/errors.hpp"
#include "rfmap/rss_sim.hpp"
#include "rfmap/samples.hpp"
#include "rfmap/tensor3.hpp"

namespace rfmap {

struct FingerprintRecord {
  Point pos;
  std::vector<double> fingerprint;
};

class FingerprintDB {
 public:
  explicit FingerprintDB(std::vector<FingerprintRecord> records) : records_(std::move(records)) {
    if (records_.empty()) throw InvalidArgument("FingerprintDB: no records");
    const auto n3 = records_.front().fingerprint.size();
    if (n3 == 0) throw InvalidArgument("FingerprintDB: empty fingerprint");
    for (const auto& r : records_) {
      if (r.fingerprint.size() != n3) throw DimensionError("FingerprintDB: fingerprints differ in length");
      if (!std::isfinite(r.pos.x) || !std::isfinite(r.pos.y)) throw InvalidArgument("FingerprintDB: non-finite coordinate");
    }
    std::sort(records_.begin(), records_.end(), [](const FingerprintRecord& a, const FingerprintRecord& b) {
      if (a.pos.x != b.pos.x) return a.pos.x < b.pos.x;
      if (a.pos.y != b.pos.y) return a.pos.y < b.pos.y;
      return a.fingerprint < b.fingerprint;
    });
  }

  Index size() const noexcept { return static_cast<Index>(records_.size()); }
  Index n3() const noexcept { return static_cast<Index>(records_.front().fingerprint.size()); }
  const std::vector<FingerprintRecord>& records() const noexcept { return records_; }
  const FingerprintRecord& operator[](Index r) const { return records_[static_cast<std::size_t>(r)]; }

 private:
  std::vector<FingerprintRecord> records_;
};

struct LocalizerConfig {
  Index k = 5;
  double d0 = 0.01;  // dBm
  Index h = 50;

  void validate() const {
    if (k < 1) throw InvalidArgument("LocalizerConfig: k must be >= 1");
    if (h < 1) throw InvalidArgument("LocalizerConfig: h must be >= 1");
    if (!(d0 >= 0.0) || !std::isfinite(d0)) throw InvalidArgument("LocalizerConfig: d0 must be finite and >= 0");
  }
};

enum class Locator { knn, kernel };

inline const char* locator_name(Locator m) noexcept { return m == Locator::knn ? "knn" : "kernel"; }

struct Neighbor {
  Index record = 0;
  double distance = 0.0;
};

/// The `count` records nearest to `query` in Euclidean fingerprint distance,
/// ascending, ties broken by record index.
inline std::vector<Neighbor> nearest(const FingerprintDB& db, std::span<const double> query, Index count) {
  if (static_cast<Index>(query.size()) != db.n3())
    throw DimensionError("nearest: query length " + std::to_string(query.size()) + " != " + std::to_string(db.n3()));
  if (count < 1 || count > db.size())
    throw InvalidArgument("nearest: need " + std::to_string(count) + " neighbors, database has " +
                          std::to_string(db.size()));
  std::vector<Neighbor> all(static_cast<std::size_t>(db.size()));
  for (Index r = 0; r < db.size(); ++r) {
    const auto& fp = db[r].fingerprint;
    double s = 0.0;
    for (std::size_t a = 0; a < fp.size(); ++a) {
      const double d = fp[a] - query[a];
      s += d * d;
    }
    all[static_cast<std::size_t>(r)] = {r, std::sqrt(s)};
  }
  auto less = [](const Neighbor& a, const Neighbor& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.record < b.record;
  };
  std::partial_sort(all.begin(), all.begin() + count, all.end(), less);
  all.resize(static_cast<std::size_t>(count));
  return all;
}

namespace detail {

/// Weighted centroid. Infinite weights (zero distance with zero offset) win
/// outright and share the estimate equally.
inline Point weighted_centroid(const FingerprintDB& db, const std::vector<Neighbor>& nb, const std::vector<double>& w) {
  bool any_inf = false;
  for (double v : w) any_inf = any_inf || std::isinf(v);
  double sx = 0.0;
  double sy = 0.0;
  double sw = 0.0;
  for (std::size_t n = 0; n < nb.size(); ++n) {
    const double weight = any_inf ? (std::isinf(w[n]) ? 1.0 : 0.0) : w[n];
    sx += weight * db[nb[n].record].pos.x;
    sy += weight * db[nb[n].record].pos.y;
    sw += weight;
  }
  return {sx / sw, sy / sw};
}

}  // namespace detail

/// Weighted KNN: w = 1 / (d + d0) over the k nearest records, applied to both
/// coordinates.
inline Point knn_locate(const FingerprintDB& db, std::span<const double> query, const LocalizerConfig& cfg) {
  cfg.validate();
  if (cfg.k > db.size())
    throw InvalidArgument("knn_locate: k = " + std::to_string(cfg.k) + " exceeds database size " +
                          std::to_string(db.size()));
  const auto nb = nearest(db, query, cfg.k);
  std::vector<double> w(nb.size());
  for (std::size_t n = 0; n < nb.size(); ++n) w[n] = 1.0 / (nb[n].distance + cfg.d0);
  return detail::weighted_centroid(db, nb, w);
}

/// Kernel estimator: w = 1 / (d^2 + d0^2) over the h nearest records.
inline Point kernel_locate(const FingerprintDB& db, std::span<const double> query, const LocalizerConfig& cfg) {
  cfg.validate();
  if (cfg.h > db.size())
    throw InvalidArgument("kernel_locate: h = " + std::to_string(cfg.h) + " exceeds database size " +
                          std::to_string(db.size()));
  const auto nb = nearest(db, query, cfg.h);
  std::vector<double> w(nb.size());
  for (std::size_t n = 0; n < nb.size(); ++n)
    w[n] = 1.0 / (nb[n].distance * nb[n].distance + cfg.d0 * cfg.d0);
  return detail::weighted_centroid(db, nb, w);
}

inline Point locate(Locator method, const FingerprintDB& db, std::span<const double> query, const LocalizerConfig& cfg) {
  return method == Locator::knn ? knn_locate(db, query, cfg) : kernel_locate(db, query, cfg);
}

inline double localization_error(Point truth, Point est) noexcept {
  return std::hypot(est.x - truth.x, est.y - truth.y);
}

/// Step function of the error distribution: one (threshold, fraction) pair per
/// distinct error value, fraction = share of errors <= threshold.
inline std::vector<std::pair<double, double>> empirical_cdf(std::vector<double> errors) {
  if (errors.empty()) throw InvalidArgument("empirical_cdf: no errors");
  for (double e : errors)
    if (std::isnan(e)) throw InvalidArgument("empirical_cdf: NaN error");
  std::sort(errors.begin(), errors.end());
  const double n = static_cast<double>(errors.size());
  std::vector<std::pair<double, double>> out;
  for (std::size_t a = 0; a < errors.size(); ++a) {
    if (a + 1 < errors.size() && errors[a + 1] == errors[a]) continue;
    out.emplace_back(errors[a], static_cast<double>(a + 1) / n);
  }
  return out;
}

/// Share of errors <= threshold.
inline double cdf_at(const std::vector<double>& errors, double threshold) {
  if (errors.empty()) throw InvalidArgument("cdf_at: no errors");
  const auto hits = std::count_if(errors.begin(), errors.end(), [&](double e) { return e <= threshold; });
  return static_cast<double>(hits) / static_cast<double>(errors.size());
}

/// Nearest-rank percentile: the smallest error e with cdf_at(e) >= q.
inline double percentile(std::vector<double> errors, double q) {
  if (errors.empty()) throw InvalidArgument("percentile: no errors");
  if (!(q > 0.0) || q > 1.0) throw InvalidArgument("percentile: q must lie in (0, 1]");
  std::sort(errors.begin(), errors.end());
  const double n = static_cast<double>(errors.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, errors.size());
  return errors[rank - 1];
}

/// Database from a map over the whole grid, or from the sampled tubes only
/// when `subset` is given (direct localization on raw samples).
inline FingerprintDB build_db(const Tensor3& map, const FloorPlan& plan,
                              const std::optional<TubeSampleSet>& subset = std::nullopt) {
  if (map.n1() != plan.n1 || map.n2() != plan.n2)
    throw DimensionError("build_db: map " + map.shape() + " does not match the plan grid");
  std::vector<FingerprintRecord> records;
  if (subset) {
    if (subset->n1() != map.n1() || subset->n2() != map.n2() || subset->n3() != map.n3())
      throw DimensionError("build_db: sample set does not match map " + map.shape());
    if (subset->empty()) throw InvalidArgument("build_db: empty sample set");
    for (const auto& e : subset->sorted_entries()) records.push_back({plan.cell_center(e.i, e.j), e.tube});
  } else {
    records.reserve(static_cast<std::size_t>(map.n1() * map.n2()));
    for (Index j = 0; j < map.n2(); ++j)
      for (Index i = 0; i < map.n1(); ++i) records.push_back({plan.cell_center(i, j), map.tube(i, j)});
  }
  return FingerprintDB(std::move(records));
}

// ---------------------------------------------------------------------------
// CSV files

struct Query {
  Point truth;
  std::vector<double> fingerprint;
};

struct QueryResult {
  Point truth;
  Point estimate;
  double error_m = 0.0;
};

inline std::vector<QueryResult> locate_all(Locator method, const FingerprintDB& db, const std::vector<Query>& queries,
                                           const LocalizerConfig& cfg) {
  std::vector<QueryResult> out;
  out.reserve(queries.size());
  for (const auto& q : queries) {
    const Point est = locate(method, db, q.fingerprint, cfg);
    out.push_back({q.truth, est, localization_error(q.truth, est)});
  }
  return out;
}

inline std::vector<double> errors_of(const std::vector<QueryResult>& results) {
  std::vector<double> e;
  e.reserve(results.size());
  for (const auto& r : results) e.push_back(r.error_m);
  return e;
}

namespace detail {

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::vector<double> parse_csv_row(const std::string& line, std::size_t lineno) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw FormatError("line " + std::to_string(lineno) + ": not a number: '" + cell + "'");
    }
  }
  return out;
}

}  // namespace detail

inline void write_queries_csv(std::ostream& os, const std::vector<Query>& queries) {
  const std::size_t n3 = queries.empty() ? 0 : queries.front().fingerprint.size();
  os << "x,y";
  for (std::size_t k = 0; k < n3; ++k) os << ",rss_" << (k + 1);
  os << '\n';
  for (const auto& q : queries) {
    os << detail::fmt_double(q.truth.x) << ',' << detail::fmt_double(q.truth.y);
    for (double v : q.fingerprint) os << ',' << detail::fmt_double(v);
    os << '\n';
  }
}

/// Reads `x,y,rss_1,...`; lines starting with '#' are skipped, the first other
/// line is the header.
inline std::vector<Query> read_queries_csv(std::istream& is) {
  std::vector<Query> out;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  std::size_t width = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      width = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
      if (width < 3 || line.rfind("x,y,", 0) != 0) throw FormatError("queries: header must be x,y,rss_1,...");
      continue;
    }
    auto row = detail::parse_csv_row(line, lineno);
    if (row.size() != width) throw FormatError("queries: line " + std::to_string(lineno) + " has wrong column count");
    out.push_back({{row[0], row[1]}, std::vector<double>(row.begin() + 2, row.end())});
  }
  if (!header) throw FormatError("queries: missing header");
  return out;
}

inline void write_errors_csv(std::ostream& os, const std::vector<QueryResult>& results) {
  os << "x,y,x_hat,y_hat,error_m\n";
  for (const auto& r : results)
    os << detail::fmt_double(r.truth.x) << ',' << detail::fmt_double(r.truth.y) << ','
       << detail::fmt_double(r.estimate.x) << ',' << detail::fmt_double(r.estimate.y) << ','
       << detail::fmt_double(r.error_m) << '\n';
}

inline void write_cdf_csv(std::ostream& os, const std::vector<std::pair<double, double>>& cdf) {
  os << "threshold_m,fraction\n";
  for (const auto& [t, f] : cdf) os << detail::fmt_double(t) << ',' << detail::fmt_double(f) << '\n';
}

}  // namespace rfmap
