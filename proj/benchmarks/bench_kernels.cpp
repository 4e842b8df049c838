#include <benchmark/benchmark.h>

#include "mhla/attention.hpp"
#include "mhla/causal.hpp"
#include "mhla/random.hpp"

using namespace mhla;

static void BM_Gemm(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const Matrix a = gaussian_matrix(1, n, n);
    const Matrix b = gaussian_matrix(2, n, n);
    for (auto _ : state) {
        benchmark::DoNotOptimize(gemm(a, b));
    }
    state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(128)->Arg(256)->Arg(512);

static void BM_SoftmaxAttention(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const auto [q, k, v] = gaussian_qkv(3, n, 64);
    for (auto _ : state) {
        benchmark::DoNotOptimize(softmax_attention(q, k, v));
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_SoftmaxAttention)->Arg(256)->Arg(1024)->Arg(4096);

static void BM_LinearAttention(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const auto [q, k, v] = gaussian_qkv(4, n, 64);
    const AttentionConfig cfg;
    for (auto _ : state) {
        benchmark::DoNotOptimize(linear_attention(q, k, v, cfg));
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_LinearAttention)->Arg(256)->Arg(1024)->Arg(4096)->Arg(16384);

static void BM_MhlaForward(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const auto [q, k, v] = gaussian_qkv(5, n, 64);
    AttentionConfig cfg;
    cfg.partition = make_partition(n, state.range(1));
    cfg.coefficients = locality_init(*cfg.partition);
    for (auto _ : state) {
        benchmark::DoNotOptimize(mhla_forward(q, k, v, cfg));
    }
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_MhlaForward)
    ->Args({1024, 4})
    ->Args({1024, 16})
    ->Args({1024, 32})
    ->Args({16384, 128});

static void BM_StreamStep(benchmark::State& state) {
    const std::size_t d = static_cast<std::size_t>(state.range(0));
    const std::size_t n = 4096, m = 64;
    const auto [q, k, v] = gaussian_qkv(6, n, d);
    AttentionConfig cfg;
    cfg.partition = make_partition(n, m);
    cfg.coefficients = causal_mask(locality_init(*cfg.partition));
    StreamState stream = stream_init(cfg);
    std::size_t t = 0;
    for (auto _ : state) {
        if (t == n) {
            state.PauseTiming();
            stream = stream_init(cfg);
            t = 0;
            state.ResumeTiming();
        }
        benchmark::DoNotOptimize(stream_step(stream, q.row_span(t), k.row_span(t), v.row_span(t)));
        ++t;
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_StreamStep)->Arg(16)->Arg(64)->Arg(128);

BENCHMARK_MAIN();
