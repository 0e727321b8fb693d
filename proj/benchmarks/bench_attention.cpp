#include <benchmark/benchmark.h>

#include "simta/attention.hpp"
#include "simta/rng.hpp"

using namespace simta;

namespace {

struct Fixture {
    TSimTABlockParams block;
    std::vector<double> t;
    std::vector<double> flat;
    size_t d;

    Fixture(size_t d_model, size_t length) : d(d_model) {
        Rng rng(1);
        block = TSimTABlockParams::init(d_model, 3, rng);
        for (size_t i = 0; i < length; ++i) t.push_back(i * 9.0);
        flat.resize(length * d_model);
        for (double& v : flat) v = rng.normal();
    }
};

}  // namespace

static void BM_TSimTABlockForward(benchmark::State& state) {
    Fixture fx(32, static_cast<size_t>(state.range(0)));
    for (auto _ : state) {
        Tape tape;
        Value out = tsimta_block_forward(
            tape, tape.constant({fx.t.size(), fx.d}, fx.flat), fx.t, fx.block);
        benchmark::DoNotOptimize(tape.data(out).data());
    }
}
BENCHMARK(BM_TSimTABlockForward)->Arg(4)->Arg(8)->Arg(16)->Arg(32);

static void BM_TSimTABlockForwardBackward(benchmark::State& state) {
    Fixture fx(32, static_cast<size_t>(state.range(0)));
    for (auto _ : state) {
        Tape tape;
        Value out = tsimta_block_forward(
            tape, tape.constant({fx.t.size(), fx.d}, fx.flat), fx.t, fx.block);
        Value probs = tape.sigmoid(tape.mean_axis(out, 0));
        Value loss = tape.bce_masked(probs, tape.constant_vec(std::vector<double>(fx.d, 1.0)),
                                     std::vector<uint8_t>(fx.d, 1));
        tape.backward(loss);
        benchmark::DoNotOptimize(tape.scalar(loss));
    }
}
BENCHMARK(BM_TSimTABlockForwardBackward)->Arg(4)->Arg(8)->Arg(16)->Arg(32);

static void BM_SummarizeSequence(benchmark::State& state) {
    Fixture fx(32, static_cast<size_t>(state.range(0)));
    std::vector<TSimTABlockParams> blocks;
    Rng rng(2);
    blocks.push_back(TSimTABlockParams::init(32, 3, rng));
    Tensor query = Tensor::zeros({1, 32}, true);
    for (auto _ : state) {
        Tape tape;
        Value rep = summarize_sequence(tape, tape.constant({fx.t.size(), fx.d}, fx.flat),
                                       fx.t, 365.0, query, nullptr, &blocks);
        benchmark::DoNotOptimize(tape.data(rep).data());
    }
}
BENCHMARK(BM_SummarizeSequence)->Arg(4)->Arg(8)->Arg(16)->Arg(32);

BENCHMARK_MAIN();
