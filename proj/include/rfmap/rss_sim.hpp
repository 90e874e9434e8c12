#pragma once

// Synthetic radio maps: log-distance path loss with per-crossing wall
// attenuation on a regular grid, Gaussian measurement noise, and the NSE
// recovery metric.
//
// Grid point (i, j) sits at the cell center x = (j + 0.5) W / n2,
// y = (i + 0.5) H / n1. Tensor entry (i, j, k) is the RSS from AP k.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rfmap/completion.hpp"
#include "rfmap/errors.hpp"
#include "rfmap/rng.hpp"
#include "rfmap/samples.hpp"
#include "rfmap/tensor3.hpp"

namespace rfmap {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct Wall {
  Point a;
  Point b;
  double attenuation_db = 0.0;
};

struct AccessPoint {
  Point pos;
  double tx_power_dbm = 20.0;
};

struct PathLoss {
  double exponent = 2.7;
  double pl0_db = 40.0;  // loss at the 1 m reference distance
};

struct FloorPlan {
  double width_m = 0.0;
  double height_m = 0.0;
  Index n1 = 0;
  Index n2 = 0;
  std::vector<Wall> walls;
  std::vector<AccessPoint> aps;
  PathLoss path_loss;

  Index n3() const noexcept { return static_cast<Index>(aps.size()); }

  Point cell_center(Index i, Index j) const noexcept {
    return {(static_cast<double>(j) + 0.5) * width_m / static_cast<double>(n2),
            (static_cast<double>(i) + 0.5) * height_m / static_cast<double>(n1)};
  }

  bool inside(Point p) const noexcept {
    return std::isfinite(p.x) && std::isfinite(p.y) && p.x >= 0.0 && p.y >= 0.0 && p.x <= width_m &&
           p.y <= height_m;
  }

  void validate() const {
    if (!(width_m > 0.0) || !(height_m > 0.0) || !std::isfinite(width_m) || !std::isfinite(height_m))
      throw InvalidArgument("FloorPlan: width and height must be positive");
    if (n1 < 2 || n2 < 2) throw InvalidArgument("FloorPlan: grid must be at least 2x2");
    if (aps.empty()) throw InvalidArgument("FloorPlan: at least one access point is required");
    for (std::size_t k = 0; k < aps.size(); ++k) {
      if (!inside(aps[k].pos)) throw InvalidArgument("FloorPlan: AP " + std::to_string(k) + " outside the floor");
      if (!std::isfinite(aps[k].tx_power_dbm))
        throw InvalidArgument("FloorPlan: AP " + std::to_string(k) + " has non-finite tx power");
    }
    for (std::size_t w = 0; w < walls.size(); ++w) {
      if (!inside(walls[w].a) || !inside(walls[w].b))
        throw InvalidArgument("FloorPlan: wall " + std::to_string(w) + " outside the floor");
      if (!(walls[w].attenuation_db >= 0.0) || !std::isfinite(walls[w].attenuation_db))
        throw InvalidArgument("FloorPlan: wall " + std::to_string(w) + " has negative attenuation");
    }
    if (!(path_loss.exponent >= 0.0) || !std::isfinite(path_loss.exponent))
      throw InvalidArgument("FloorPlan: path-loss exponent must be >= 0");
    if (!(path_loss.pl0_db >= 0.0) || !std::isfinite(path_loss.pl0_db))
      throw InvalidArgument("FloorPlan: reference loss must be >= 0");
  }
};

/// 80 m x 60 m floor on a 60 x 80 grid (1 m cells), 10 APs and 6 interior
/// walls of 10 to 15 dB.
inline FloorPlan default_floor_plan() {
  FloorPlan p;
  p.width_m = 80.0;
  p.height_m = 60.0;
  p.n1 = 60;
  p.n2 = 80;
  p.aps = {
      {{6.5, 7.5}, 20.0},   {{31.0, 4.5}, 20.0},  {{55.5, 12.0}, 20.0}, {{75.0, 5.5}, 20.0},
      {{14.0, 30.5}, 20.0}, {{42.5, 27.0}, 20.0}, {{68.0, 33.5}, 20.0}, {{5.5, 53.0}, 20.0},
      {{35.0, 51.5}, 20.0}, {{61.5, 55.0}, 20.0},
  };
  p.walls = {
      {{0.0, 20.0}, {30.0, 20.0}, 12.0},  {{40.0, 0.0}, {40.0, 22.0}, 15.0},  {{50.0, 40.0}, {80.0, 40.0}, 10.0},
      {{25.0, 35.0}, {25.0, 60.0}, 13.0}, {{55.0, 18.0}, {70.0, 25.0}, 11.0}, {{10.0, 42.0}, {22.0, 42.0}, 14.0},
  };
  return p;
}

namespace detail {

inline double orient(Point a, Point b, Point c) noexcept {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

inline int orient_sign(Point a, Point b, Point c, double scale) noexcept {
  const double v = orient(a, b, c);
  const double eps = 1e-12 * scale;
  return v > eps ? 1 : (v < -eps ? -1 : 0);
}

inline bool within_box(Point a, Point b, Point c, double eps) noexcept {
  return c.x >= std::min(a.x, b.x) - eps && c.x <= std::max(a.x, b.x) + eps && c.y >= std::min(a.y, b.y) - eps &&
         c.y <= std::max(a.y, b.y) + eps;
}

}  // namespace detail

/// True when closed segments [a,b] and [c,d] share at least one point.
inline bool segments_intersect(Point a, Point b, Point c, Point d) noexcept {
  const double span = std::max({std::abs(a.x), std::abs(a.y), std::abs(b.x), std::abs(b.y), std::abs(c.x),
                                std::abs(c.y), std::abs(d.x), std::abs(d.y), 1.0});
  const double scale = span * span;
  const int o1 = detail::orient_sign(a, b, c, scale);
  const int o2 = detail::orient_sign(a, b, d, scale);
  const int o3 = detail::orient_sign(c, d, a, scale);
  const int o4 = detail::orient_sign(c, d, b, scale);
  if (o1 * o2 < 0 && o3 * o4 < 0) return true;
  const double eps = 1e-12 * span;
  if (o1 == 0 && detail::within_box(a, b, c, eps)) return true;
  if (o2 == 0 && detail::within_box(a, b, d, eps)) return true;
  if (o3 == 0 && detail::within_box(c, d, a, eps)) return true;
  if (o4 == 0 && detail::within_box(c, d, b, eps)) return true;
  return false;
}

/// Number of walls the segment a-b touches; each wall counts at most once.
inline int wall_crossings(Point a, Point b, const std::vector<Wall>& walls) noexcept {
  int count = 0;
  for (const auto& w : walls)
    if (segments_intersect(a, b, w.a, w.b)) ++count;
  return count;
}

/// Summed attenuation of the walls touched by a-b.
inline double wall_loss(Point a, Point b, const std::vector<Wall>& walls) noexcept {
  double loss = 0.0;
  for (const auto& w : walls)
    if (segments_intersect(a, b, w.a, w.b)) loss += w.attenuation_db;
  return loss;
}

inline double path_loss_db(double distance_m, const PathLoss& pl) noexcept {
  return pl.pl0_db + 10.0 * pl.exponent * std::log10(std::max(distance_m, 1.0));
}

inline Tensor3 gen_rss(const FloorPlan& plan, const PathLoss& params) {
  plan.validate();
  FloorPlan checked = plan;
  checked.path_loss = params;
  checked.validate();
  Tensor3 t(plan.n1, plan.n2, plan.n3());
  for (Index k = 0; k < plan.n3(); ++k) {
    const auto& ap = plan.aps[static_cast<std::size_t>(k)];
    for (Index j = 0; j < plan.n2; ++j) {
      for (Index i = 0; i < plan.n1; ++i) {
        const Point p = plan.cell_center(i, j);
        const double d = std::hypot(p.x - ap.pos.x, p.y - ap.pos.y);
        const double rss = ap.tx_power_dbm - path_loss_db(d, params) - wall_loss(p, ap.pos, plan.walls);
        t(i, j, k) = std::max(rss, kNoiseFloorDbm);
      }
    }
  }
  return t;
}

inline Tensor3 gen_rss(const FloorPlan& plan) { return gen_rss(plan, plan.path_loss); }

struct NoiseConfig {
  double sigma_dbm = 0.0;
  std::uint64_t seed = 0;
};

/// Adds i.i.d. N(0, sigma^2) to every entry. Tube (i, j) draws from stream
/// (seed, noise, i, j), so the result does not depend on traversal order.
inline Tensor3 add_noise(const Tensor3& t, const NoiseConfig& cfg) {
  if (!(cfg.sigma_dbm >= 0.0) || !std::isfinite(cfg.sigma_dbm))
    throw InvalidArgument("add_noise: sigma must be finite and >= 0");
  Tensor3 out = t;
  if (cfg.sigma_dbm == 0.0) return out;
  for (Index j = 0; j < t.n2(); ++j) {
    for (Index i = 0; i < t.n1(); ++i) {
      Stream rng(cfg.seed, {tag(StreamTag::noise), static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j)});
      for (Index k = 0; k < t.n3(); ++k) out(i, j, k) += cfg.sigma_dbm * rng.normal();
    }
  }
  return out;
}

/// Normalized squared error over the tubes not in omega.
inline double nse(const Tensor3& truth, const Tensor3& est, const TubeSampleSet& omega) {
  if (!truth.same_shape(est)) throw DimensionError("nse: shapes " + truth.shape() + " and " + est.shape() + " differ");
  if (omega.n1() != truth.n1() || omega.n2() != truth.n2())
    throw DimensionError("nse: sample grid does not match tensor shape " + truth.shape());
  if (omega.size() >= truth.n1() * truth.n2()) throw InvalidArgument("nse: every tube is sampled, complement is empty");
  double num = 0.0;
  double den = 0.0;
  for (Index j = 0; j < truth.n2(); ++j) {
    for (Index i = 0; i < truth.n1(); ++i) {
      if (omega.contains(i, j)) continue;
      for (Index k = 0; k < truth.n3(); ++k) {
        const double e = est(i, j, k) - truth(i, j, k);
        num += e * e;
        den += truth(i, j, k) * truth(i, j, k);
      }
    }
  }
  if (!(den > 0.0)) throw NumericError("nse: unsampled truth has zero energy");
  return num / den;
}

/// NSE over every tube.
inline double nse_full(const Tensor3& truth, const Tensor3& est) {
  if (!truth.same_shape(est)) throw DimensionError("nse: shapes " + truth.shape() + " and " + est.shape() + " differ");
  double num = 0.0;
  double den = 0.0;
  for (Index n = 0; n < truth.size(); ++n) {
    const double e = est.data()[static_cast<std::size_t>(n)] - truth.data()[static_cast<std::size_t>(n)];
    num += e * e;
    den += truth.data()[static_cast<std::size_t>(n)] * truth.data()[static_cast<std::size_t>(n)];
  }
  if (!(den > 0.0)) throw NumericError("nse: truth has zero energy");
  return num / den;
}

// ---------------------------------------------------------------------------
// rfplan/1 files
//
// {
//   "format": "rfplan/1",
//   "width_m": 80, "height_m": 60,
//   "grid": {"n1": 60, "n2": 80},
//   "path_loss": {"exponent": 2.7, "pl0_db": 40},        (optional)
//   "aps":   [{"x": 6.5, "y": 7.5, "tx_power_dbm": 20}],  (tx optional, 20)
//   "walls": [{"x1": 0, "y1": 20, "x2": 30, "y2": 20, "attenuation_db": 12}]
// }

inline constexpr const char* kPlanFormat = "rfplan/1";

inline nlohmann::json plan_to_json(const FloorPlan& p) {
  nlohmann::json j;
  j["format"] = kPlanFormat;
  j["width_m"] = p.width_m;
  j["height_m"] = p.height_m;
  j["grid"] = {{"n1", p.n1}, {"n2", p.n2}};
  j["path_loss"] = {{"exponent", p.path_loss.exponent}, {"pl0_db", p.path_loss.pl0_db}};
  j["aps"] = nlohmann::json::array();
  for (const auto& ap : p.aps) j["aps"].push_back({{"x", ap.pos.x}, {"y", ap.pos.y}, {"tx_power_dbm", ap.tx_power_dbm}});
  j["walls"] = nlohmann::json::array();
  for (const auto& w : p.walls)
    j["walls"].push_back(
        {{"x1", w.a.x}, {"y1", w.a.y}, {"x2", w.b.x}, {"y2", w.b.y}, {"attenuation_db", w.attenuation_db}});
  return j;
}

inline FloorPlan plan_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object()) throw FormatError("rfplan: top level must be an object");
    if (j.value("format", std::string{}) != kPlanFormat)
      throw FormatError(std::string("rfplan: missing or unsupported format tag, expected ") + kPlanFormat);
    FloorPlan p;
    p.width_m = j.at("width_m").get<double>();
    p.height_m = j.at("height_m").get<double>();
    p.n1 = j.at("grid").at("n1").get<Index>();
    p.n2 = j.at("grid").at("n2").get<Index>();
    if (j.contains("path_loss")) {
      const auto& pl = j.at("path_loss");
      p.path_loss.exponent = pl.value("exponent", p.path_loss.exponent);
      p.path_loss.pl0_db = pl.value("pl0_db", p.path_loss.pl0_db);
    }
    for (const auto& ap : j.at("aps"))
      p.aps.push_back({{ap.at("x").get<double>(), ap.at("y").get<double>()}, ap.value("tx_power_dbm", 20.0)});
    if (j.contains("walls")) {
      for (const auto& w : j.at("walls"))
        p.walls.push_back({{w.at("x1").get<double>(), w.at("y1").get<double>()},
                           {w.at("x2").get<double>(), w.at("y2").get<double>()},
                           w.at("attenuation_db").get<double>()});
    }
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("rfplan: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("rfplan: ") + e.what());
  }
}

inline FloorPlan load_plan(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return plan_from_json(j);
}

inline void save_plan(const std::string& path, const FloorPlan& p) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os << plan_to_json(p).dump(2) << '\n';
}

}  // namespace rfmap
