#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "rfmap/rss_sim.hpp"

using namespace rfmap;

namespace {

// 20 m x 20 m floor, 1 m cells, one AP at the center of cell (0, 0).
FloorPlan single_ap_plan() {
  FloorPlan p;
  p.width_m = 20.0;
  p.height_m = 20.0;
  p.n1 = 20;
  p.n2 = 20;
  p.aps = {{{0.5, 0.5}, 20.0}};
  p.path_loss = {2.0, 40.0};
  return p;
}

int crossings_oracle(Point a, Point b, const std::vector<Wall>& walls) {
  int n = 0;
  for (const auto& w : walls)
    if (oracle::segments_touch(a.x, a.y, b.x, b.y, w.a.x, w.a.y, w.b.x, w.b.y)) ++n;
  return n;
}

}  // namespace

TEST(FloorPlan, CellCentersAndValidation) {
  const auto p = default_floor_plan();
  EXPECT_NO_THROW(p.validate());
  EXPECT_EQ(p.n1, 60);
  EXPECT_EQ(p.n2, 80);
  EXPECT_EQ(p.n3(), 10);
  EXPECT_EQ(p.walls.size(), 6u);
  for (const auto& w : p.walls) {
    EXPECT_GE(w.attenuation_db, 10.0);
    EXPECT_LE(w.attenuation_db, 15.0);
  }
  const Point c = p.cell_center(2, 5);
  EXPECT_DOUBLE_EQ(c.x, 5.5);
  EXPECT_DOUBLE_EQ(c.y, 2.5);

  auto bad = p;
  bad.n1 = 1;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = p;
  bad.walls[0].attenuation_db = -1.0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = p;
  bad.aps[0].pos.x = 81.0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = p;
  bad.walls[2].b.y = -0.5;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(GenRss, HandExamples) {
  auto p = single_ap_plan();
  const auto t = gen_rss(p);
  EXPECT_DOUBLE_EQ(t(0, 0, 0), -20.0);  // distance floored to 1 m
  EXPECT_NEAR(t(0, 10, 0), 20.0 - 40.0 - 20.0 * std::log10(10.0), 1e-12);
  EXPECT_NEAR(t(0, 10, 0), -40.0, 1e-12);

  p.walls = {{{5.0, 0.0}, {5.0, 20.0}, 15.0}};
  const auto walled = gen_rss(p);
  EXPECT_NEAR(walled(0, 10, 0), -55.0, 1e-12);
  EXPECT_DOUBLE_EQ(walled(0, 0, 0), -20.0);
  EXPECT_DOUBLE_EQ(walled(0, 4, 0), t(0, 4, 0));  // same side of the wall
}

TEST(GenRss, ClampsAtNoiseFloor) {
  auto p = single_ap_plan();
  p.path_loss.pl0_db = 110.0;
  const auto t = gen_rss(p);
  EXPECT_DOUBLE_EQ(t(19, 19, 0), kNoiseFloorDbm);
  EXPECT_DOUBLE_EQ(t(0, 0, 0), -90.0);
}

TEST(GenRss, ExplicitParamsOverridePlan) {
  const auto p = single_ap_plan();
  const auto t = gen_rss(p, PathLoss{3.0, 30.0});
  EXPECT_NEAR(t(0, 10, 0), 20.0 - 30.0 - 30.0, 1e-12);
  EXPECT_THROW(gen_rss(p, PathLoss{-1.0, 30.0}), InvalidArgument);
}

TEST(GenRss, ValuesWithinFloorAndTxPower) {
  const auto p = default_floor_plan();
  const auto t = gen_rss(p);
  double max_tx = -1e300;
  for (const auto& ap : p.aps) max_tx = std::max(max_tx, ap.tx_power_dbm);
  for (double v : t.data()) {
    EXPECT_GE(v, kNoiseFloorDbm);
    EXPECT_LE(v, max_tx);
  }
}

TEST(GenRss, NeighborDifferencesBoundedByPathLossAndWalls) {
  const auto p = default_floor_plan();
  const auto t = gen_rss(p);
  const double a = 10.0 * p.path_loss.exponent;
  auto check = [&](Index i, Index j, Index i2, Index j2) {
    const Point u = p.cell_center(i, j);
    const Point v = p.cell_center(i2, j2);
    for (Index k = 0; k < p.n3(); ++k) {
      const Point ap = p.aps[static_cast<std::size_t>(k)].pos;
      const double du = std::max(std::hypot(u.x - ap.x, u.y - ap.y), 1.0);
      const double dv = std::max(std::hypot(v.x - ap.x, v.y - ap.y), 1.0);
      double wu = 0.0;
      double wv = 0.0;
      for (const auto& w : p.walls) {
        if (oracle::segments_touch(u.x, u.y, ap.x, ap.y, w.a.x, w.a.y, w.b.x, w.b.y)) wu += w.attenuation_db;
        if (oracle::segments_touch(v.x, v.y, ap.x, ap.y, w.a.x, w.a.y, w.b.x, w.b.y)) wv += w.attenuation_db;
      }
      const double bound = a * std::abs(std::log10(du / dv)) + std::abs(wu - wv);
      ASSERT_LE(std::abs(t(i, j, k) - t(i2, j2, k)), bound + 1e-9) << i << "," << j << " k=" << k;
    }
  };
  for (Index j = 0; j < p.n2; ++j)
    for (Index i = 0; i < p.n1; ++i) {
      if (i + 1 < p.n1) check(i, j, i + 1, j);
      if (j + 1 < p.n2) check(i, j, i, j + 1);
    }
}

TEST(GenRss, DefaultScenarioIsNearlyLowTubalRank) {
  const auto t = gen_rss(default_floor_plan());
  const auto approx = best_rank_r(t, 8);
  double err = 0.0;
  double energy = 0.0;
  for (Index n = 0; n < t.size(); ++n) {
    const double d = t.data()[static_cast<std::size_t>(n)] - approx.data()[static_cast<std::size_t>(n)];
    err += d * d;
    energy += t.data()[static_cast<std::size_t>(n)] * t.data()[static_cast<std::size_t>(n)];
  }
  EXPECT_GE(1.0 - err / energy, 0.95);
}

TEST(WallCrossings, BasicCases) {
  const std::vector<Wall> none;
  EXPECT_EQ(wall_crossings({0, 0}, {10, 10}, none), 0);

  const std::vector<Wall> one{{{5, 0}, {5, 10}, 10}};
  EXPECT_EQ(wall_crossings({0, 5}, {10, 5}, one), 1);
  EXPECT_EQ(wall_crossings({0, 5}, {4, 5}, one), 0);
  EXPECT_EQ(wall_crossings({0, 5}, {5, 5}, one), 1);    // endpoint on the wall
  EXPECT_EQ(wall_crossings({0, 10}, {10, 10}, one), 1);  // grazes the wall end
  EXPECT_EQ(wall_crossings({5, 2}, {5, 20}, one), 1);    // collinear overlap counts once

  // L-shaped corner at (10, 10).
  const std::vector<Wall> corner{{{10, 0}, {10, 10}, 12}, {{0, 10}, {10, 10}, 12}};
  EXPECT_EQ(wall_crossings({2, 2}, {18, 18}, corner), 2);
  EXPECT_EQ(wall_crossings({2, 2}, {18, 18}, corner), crossings_oracle({2, 2}, {18, 18}, corner));
  EXPECT_EQ(wall_crossings({2, 2}, {14, 8}, corner), 1);
  EXPECT_EQ(wall_crossings({2, 2}, {8, 6}, corner), 0);
}

TEST(WallCrossings, MatchesParametricOracleOnRandomSegments) {
  std::mt19937_64 g(41);
  // Integer coordinates make touching, collinear and corner cases frequent.
  std::uniform_int_distribution<int> coord(0, 8);
  for (int trial = 0; trial < 4000; ++trial) {
    std::vector<Wall> walls;
    const int nw = 1 + trial % 5;
    for (int w = 0; w < nw; ++w)
      walls.push_back({{double(coord(g)), double(coord(g))}, {double(coord(g)), double(coord(g))}, 10.0});
    const Point a{double(coord(g)), double(coord(g))};
    const Point b{double(coord(g)), double(coord(g))};
    ASSERT_EQ(wall_crossings(a, b, walls), crossings_oracle(a, b, walls)) << "trial " << trial;
  }
  std::uniform_real_distribution<double> real(0.0, 50.0);
  for (int trial = 0; trial < 4000; ++trial) {
    std::vector<Wall> walls;
    for (int w = 0; w < 4; ++w) walls.push_back({{real(g), real(g)}, {real(g), real(g)}, 10.0});
    const Point a{real(g), real(g)};
    const Point b{real(g), real(g)};
    ASSERT_EQ(wall_crossings(a, b, walls), crossings_oracle(a, b, walls)) << "trial " << trial;
  }
}

TEST(AddNoise, ZeroSigmaIsIdentity) {
  const auto t = gen_rss(default_floor_plan());
  const auto n = add_noise(t, {0.0, 7});
  EXPECT_EQ(max_abs_diff(t, n), 0.0);
}

TEST(AddNoise, ReproducibleUnderSeed) {
  const auto t = gen_rss(single_ap_plan());
  const auto a = add_noise(t, {3.0, 11});
  const auto b = add_noise(t, {3.0, 11});
  const auto c = add_noise(t, {3.0, 12});
  EXPECT_EQ(max_abs_diff(a, b), 0.0);
  EXPECT_GT(max_abs_diff(a, c), 0.0);
  EXPECT_THROW(add_noise(t, {-1.0, 1}), InvalidArgument);
}

TEST(AddNoise, SampleVarianceMatchesSigmaSquared) {
  const double sigma = 3.0;
  const Tensor3 zero(100, 100, 100);
  const auto n = add_noise(zero, {sigma, 2024});
  double sum = 0.0;
  double sq = 0.0;
  for (double v : n.data()) {
    sum += v;
    sq += v * v;
  }
  const double count = static_cast<double>(n.size());
  const double mean = sum / count;
  const double var = sq / count - mean * mean;
  EXPECT_NEAR(var, sigma * sigma, 0.02 * sigma * sigma);
  EXPECT_NEAR(mean, 0.0, 0.02);
}

TEST(Nse, Identities) {
  const auto truth = gen_rss(default_floor_plan());
  std::vector<std::pair<Index, Index>> pos{{0, 0}, {5, 7}, {30, 40}, {59, 79}};
  const auto omega = TubeSampleSet::from_tensor(truth, pos);
  EXPECT_EQ(nse(truth, truth, omega), 0.0);
  EXPECT_DOUBLE_EQ(nse(truth, Tensor3(truth.n1(), truth.n2(), truth.n3()), omega), 1.0);
  EXPECT_NEAR(nse(truth, 1.1 * truth, omega), 0.01, 1e-12);
}

TEST(Nse, MatchesDirectOracle) {
  std::mt19937_64 g(5);
  const auto truth = oracle::random_tensor(9, 7, 4, g);
  const auto est = oracle::random_tensor(9, 7, 4, g);
  std::vector<std::pair<Index, Index>> pos{{0, 0}, {3, 2}, {8, 6}, {4, 4}, {1, 5}};
  const auto omega = TubeSampleSet::from_tensor(truth, pos);
  std::vector<bool> mask(9 * 7, false);
  for (auto [i, j] : pos) mask[static_cast<std::size_t>(i + 9 * j)] = true;
  EXPECT_NEAR(nse(truth, est, omega), oracle::nse_direct(truth, est, mask), 1e-12);
  EXPECT_NEAR(nse_full(truth, est), oracle::nse_direct(truth, est, std::vector<bool>(9 * 7, false)), 1e-12);
}

TEST(Nse, Errors) {
  Tensor3 truth(2, 2, 1, 1.0);
  std::vector<std::pair<Index, Index>> all{{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  EXPECT_THROW(nse(truth, truth, TubeSampleSet::from_tensor(truth, all)), InvalidArgument);
  EXPECT_THROW(nse(Tensor3(2, 2, 1), truth, TubeSampleSet(2, 2, 1)), NumericError);
  EXPECT_THROW(nse(truth, Tensor3(2, 3, 1), TubeSampleSet(2, 2, 1)), DimensionError);
  EXPECT_THROW(nse(truth, truth, TubeSampleSet(3, 2, 1)), DimensionError);
}

TEST(PlanFile, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "rfmap_test_plan";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "plan.json").string();
  const auto p = default_floor_plan();
  save_plan(path, p);
  const auto q = load_plan(path);
  EXPECT_EQ(q.n1, p.n1);
  EXPECT_EQ(q.n2, p.n2);
  ASSERT_EQ(q.aps.size(), p.aps.size());
  ASSERT_EQ(q.walls.size(), p.walls.size());
  EXPECT_EQ(q.path_loss.exponent, p.path_loss.exponent);
  EXPECT_EQ(max_abs_diff(gen_rss(p), gen_rss(q)), 0.0);
  std::filesystem::remove_all(dir);
}

TEST(PlanFile, RejectsBadInput) {
  auto j = plan_to_json(default_floor_plan());
  j["format"] = "rfplan/0";
  EXPECT_THROW(plan_from_json(j), FormatError);
  j = plan_to_json(default_floor_plan());
  j.erase("grid");
  EXPECT_THROW(plan_from_json(j), FormatError);
  j = plan_to_json(default_floor_plan());
  j["aps"][0]["x"] = 500.0;
  EXPECT_THROW(plan_from_json(j), FormatError);
  j = plan_to_json(default_floor_plan());
  j["aps"][0].erase("tx_power_dbm");
  EXPECT_EQ(plan_from_json(j).aps[0].tx_power_dbm, 20.0);
  EXPECT_THROW(load_plan("/nonexistent/plan.json"), FormatError);
}
