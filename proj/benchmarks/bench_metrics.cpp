#include <random>

#include <benchmark/benchmark.h>

#include "tsa/metrics.hpp"

namespace {

std::vector<tsa::ScoredInstance> random_scored(std::size_t n) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> label(0, 2);
  std::uniform_real_distribution<double> conf(1.0 / 3.0, 1.0);
  std::vector<tsa::ScoredInstance> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].instance_id = "i" + std::to_string(i);
    out[i].gold = tsa::label_at(label(rng));
    out[i].distribution.argmax = tsa::label_at(label(rng));
    out[i].distribution.confidence = conf(rng);
  }
  return out;
}

void BM_Ece(benchmark::State& state) {
  const auto items = random_scored(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(tsa::ece(items, 10));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Ece)->Arg(462)->Arg(10000);

void BM_MacroF1(benchmark::State& state) {
  const auto items = random_scored(static_cast<std::size_t>(state.range(0)));
  std::vector<tsa::LabelPair> pairs;
  for (const auto& s : items) pairs.push_back({s.gold, s.distribution.argmax});
  for (auto _ : state) benchmark::DoNotOptimize(tsa::macro_f1(pairs));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MacroF1)->Arg(462)->Arg(10000);

}  // namespace
