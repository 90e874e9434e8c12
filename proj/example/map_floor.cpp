// Survey the default floor at 30% of the grid, rebuild the radio map two ways
// and localize a handful of noisy phones against each map.

#include <cstdio>

#include "rfmap/adaptive.hpp"
#include "rfmap/completion.hpp"
#include "rfmap/experiments.hpp"
#include "rfmap/localization.hpp"
#include "rfmap/rss_sim.hpp"

using namespace rfmap;

int main() {
  const FloorPlan plan = default_floor_plan();
  const Tensor3 truth = gen_rss(plan);
  const Index budget = plan.n1 * plan.n2 * 3 / 10;
  const std::uint64_t seed = 7;

  // Each scheme gets its own surveyor; both see the same noise at a given point.
  SimulatedOracle walk(truth, 1.0, seed);
  const auto uniform = uniform_tubes(walk, budget, seed);
  const Tensor3 tc = complete_tnn(uniform, {}).estimate;

  AdaptiveConfig cfg;
  cfg.budget_m = budget;
  cfg.seed = seed;
  SimulatedOracle guided(truth, 1.0, seed);
  const auto as = adaptive_complete(guided, cfg);

  std::printf("grid %ldx%ld, %ld APs, budget %ld tubes\n", static_cast<long>(plan.n1), static_cast<long>(plan.n2),
              static_cast<long>(plan.n3()), static_cast<long>(budget));
  std::printf("uniform + TNN   NSE %.5f\n", nse(truth, tc, uniform));
  std::printf("adaptive (1/2)  NSE %.5f  (%ld tubes, subspace dim %ld)\n", nse(truth, as.estimate, as.samples),
              static_cast<long>(as.report.cost_tubes), static_cast<long>(as.report.subspace_dim));

  const auto queries = draw_queries(truth, plan, 200, 3.0, seed);
  for (const auto& [name, map] : {std::pair{"uniform + TNN ", &tc}, std::pair{"adaptive (1/2)", &as.estimate}}) {
    const auto errors = errors_of(locate_all(Locator::knn, build_db(*map, plan), queries, {}));
    std::printf("%s  median error %.2f m, p90 %.2f m\n", name, percentile(errors, 0.5), percentile(errors, 0.9));
  }
  return 0;
}
