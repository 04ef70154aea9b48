#include <benchmark/benchmark.h>

#include <filesystem>

#include "polq/filter.hpp"
#include "polq/oracle.hpp"
#include "polq/pathsim.hpp"
#include "polq/scenario.hpp"

using namespace polq;

namespace {

GridScenario load(const char* name) {
  const auto path = std::filesystem::path(POLQ_SCENARIO_DIR) / (std::string(name) + ".json");
  return discretize(validate_scenario(load_scenario(path)));
}

Exec mode(const benchmark::State& state) { return state.range(0) == 0 ? Exec::Serial : Exec::Parallel; }

void label(benchmark::State& state) { state.SetLabel(state.range(0) == 0 ? "serial" : "parallel"); }

void BM_SimulateEnsemble(benchmark::State& state) {
  const GridScenario g = load("scalar_h1");
  const PolicyRep pol = PolicyRep::zero(g.steps(), g.d());
  for (auto _ : state) {
    Ensemble e = simulate_ensemble(g, pol, Measure::P, 1, 2000, "paths", mode(state));
    benchmark::DoNotOptimize(e.paths.data());
  }
  label(state);
}

void BM_SummarizeEnsemble(benchmark::State& state) {
  const GridScenario g = load("mixed2d");
  const PolicyRep pol = PolicyRep::zero(g.steps(), g.d());
  for (auto _ : state) {
    EnsembleSummary s = summarize_ensemble(g, pol, Measure::Q, 2, 10000, "paths", mode(state));
    benchmark::DoNotOptimize(s.cost.data());
  }
  label(state);
}

void BM_BuildNested(benchmark::State& state) {
  const GridScenario g = load("scalar_h1");
  const PolicyRep pol = PolicyRep::zero(g.steps(), g.d());
  for (auto _ : state) {
    NestedEnsemble n = build_nested(g, pol, 100, 20, 3, mode(state));
    benchmark::DoNotOptimize(n.particles.data());
  }
  label(state);
}

void BM_NestedPathCosts(benchmark::State& state) {
  const GridScenario g = load("scalar_h1");
  const PolicyRep pol = PolicyRep::zero(g.steps(), g.d());
  for (auto _ : state) {
    std::vector<double> c = nested_path_costs(g, pol, 100, 20, 4, mode(state));
    benchmark::DoNotOptimize(c.data());
  }
  label(state);
}

void BM_BruteForce(benchmark::State& state) {
  const GridScenario g = load("brute_h0");
  const std::vector<double> lattice = lattice_around(0.0, 2.0, 21);
  for (auto _ : state) {
    GridSearchResult r = brute_force_small(g, 2, lattice, 2000, 5, mode(state));
    benchmark::DoNotOptimize(r.best_value);
  }
  label(state);
}

}  // namespace

BENCHMARK(BM_SimulateEnsemble)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SummarizeEnsemble)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BuildNested)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_NestedPathCosts)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BruteForce)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
