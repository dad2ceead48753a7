#include <benchmark/benchmark.h>

#include "tsa/response_parsers.hpp"

namespace {

void BM_ParseLabel(benchmark::State& state) {
  const std::string body = "The headline reports a scandal, but the entity is only mentioned. Targeted sentiment: **Neutral**";
  for (auto _ : state) benchmark::DoNotOptimize(tsa::parse_label(body));
}
BENCHMARK(BM_ParseLabel);

void BM_ParseDp(benchmark::State& state) {
  const std::string body = "```json\n{\"targeted sentiment 1\": \"neutral\", \"targeted sentiment 2\": \"negative\", "
                           "\"targeted sentiment 3\": \"neutral\", \"targeted sentiment 4\": \"neutral\", "
                           "\"targeted sentiment 5\": \"positive\", \"targeted sentiment 6\": \"neutral\"}\n```";
  for (auto _ : state) benchmark::DoNotOptimize(tsa::parse_dp(body));
}
BENCHMARK(BM_ParseDp);

void BM_ParseVca(benchmark::State& state) {
  const std::string body = "Confidence: [\"10\", \"75\", \"15\"]";
  for (auto _ : state) benchmark::DoNotOptimize(tsa::parse_vca(body));
}
BENCHMARK(BM_ParseVca);

}  // namespace
