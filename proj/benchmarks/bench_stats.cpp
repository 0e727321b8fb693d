#include <benchmark/benchmark.h>

#include "simta/rng.hpp"
#include "simta/stats.hpp"

using namespace simta;

namespace {

std::vector<ScoredSample> make_samples(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<ScoredSample> s;
    s.reserve(n);
    for (size_t i = 0; i < n; ++i)
        s.push_back({"p" + std::to_string(i), rng.uniform(), rng.bernoulli(0.4)});
    return s;
}

}  // namespace

static void BM_Auc(benchmark::State& state) {
    auto s = make_samples(static_cast<size_t>(state.range(0)), 1);
    for (auto _ : state) benchmark::DoNotOptimize(auc(s));
}
BENCHMARK(BM_Auc)->Arg(100)->Arg(1000)->Arg(10000);

static void BM_MannWhitney(benchmark::State& state) {
    auto s = make_samples(static_cast<size_t>(state.range(0)), 2);
    for (auto _ : state) benchmark::DoNotOptimize(mann_whitney(s).p);
}
BENCHMARK(BM_MannWhitney)->Arg(100)->Arg(1000)->Arg(10000);

static void BM_DeLong(benchmark::State& state) {
    auto a = make_samples(static_cast<size_t>(state.range(0)), 3);
    auto b = a;
    Rng rng(4);
    for (auto& x : b) x.score = rng.uniform();
    for (auto _ : state) benchmark::DoNotOptimize(delong_test(a, b).p);
}
BENCHMARK(BM_DeLong)->Arg(100)->Arg(500)->Arg(2000);

static void BM_StratifiedKFold(benchmark::State& state) {
    Rng rng(5);
    std::vector<std::pair<std::string, int>> keys;
    for (int i = 0; i < state.range(0); ++i)
        keys.push_back({"p" + std::to_string(i), rng.bernoulli(0.7) ? 1 : 0});
    for (auto _ : state)
        benchmark::DoNotOptimize(stratified_kfold(keys, 3, 7));
}
BENCHMARK(BM_StratifiedKFold)->Arg(1000)->Arg(10000);

BENCHMARK_MAIN();
