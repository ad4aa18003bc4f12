#include <cstddef>
#include <vector>

#include <benchmark/benchmark.h>

#include "xdseg/kernels.hpp"
#include "xdseg/rng.hpp"

namespace {

using xdseg::Rng;
namespace kernels = xdseg::kernels;

std::vector<float> random_buffer(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (float& x : v) x = static_cast<float>(rng.normal(0.0, 1.0));
    return v;
}

// Shapes the model actually hits: token attention score/value products and
// the im2col form of the stem convolutions at desk scale.
void gemm_args(benchmark::internal::Benchmark* b) {
    b->Args({1024, 1024, 1024});  // classic square case for scaling context
    b->Args({256, 128, 128});     // tokens x dim mixing (encoder MLP-ish)
    b->Args({32, 1024, 144});     // conv stem as GEMM: oc x (oh*ow) x (ic*k*k)
}

template <typename F>
void bench_gemm(benchmark::State& state, F&& gemm) {
    const auto m = static_cast<std::size_t>(state.range(0));
    const auto n = static_cast<std::size_t>(state.range(1));
    const auto k = static_cast<std::size_t>(state.range(2));
    const std::vector<float> a = random_buffer(m * k, 11);
    const std::vector<float> b = random_buffer(k * n, 12);
    std::vector<float> c(m * n, 0.0f);
    for (auto _ : state) {
        gemm(false, false, m, n, k, 1.0f, a.data(), b.data(), 0.0f, c.data());
        benchmark::DoNotOptimize(c.data());
        benchmark::ClobberMemory();
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                            static_cast<std::int64_t>(2 * m * n * k));
}

void BM_GemmSerial(benchmark::State& state) { bench_gemm(state, kernels::serial::gemm); }
void BM_GemmOpenMP(benchmark::State& state) { bench_gemm(state, kernels::omp::gemm); }
void BM_GemmBlas(benchmark::State& state) {
    kernels::set_backend(kernels::Backend::blas);
    bench_gemm(state, [](auto... a) { kernels::gemm(a...); });
}

BENCHMARK(BM_GemmSerial)->Apply(gemm_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GemmOpenMP)->Apply(gemm_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GemmBlas)->Apply(gemm_args)->Unit(benchmark::kMillisecond);

template <typename F>
void bench_blur(benchmark::State& state, F&& blur) {
    const auto hw = static_cast<std::size_t>(state.range(0));
    const std::vector<float> src = random_buffer(hw * hw, 21);
    std::vector<float> dst(hw * hw, 0.0f);
    for (auto _ : state) {
        blur(src.data(), dst.data(), hw, hw, 1.3);
        benchmark::DoNotOptimize(dst.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                            static_cast<std::int64_t>(hw * hw));
}

void BM_BlurSerial(benchmark::State& state) { bench_blur(state, kernels::serial::gaussian_blur); }
void BM_BlurOpenMP(benchmark::State& state) { bench_blur(state, kernels::omp::gaussian_blur); }

BENCHMARK(BM_BlurSerial)->Arg(64)->Arg(512)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_BlurOpenMP)->Arg(64)->Arg(512)->Unit(benchmark::kMicrosecond);

template <typename F>
void bench_softmax(benchmark::State& state, F&& softmax) {
    const auto rows = static_cast<std::size_t>(state.range(0));
    const auto cols = static_cast<std::size_t>(state.range(1));
    const std::vector<float> src = random_buffer(rows * cols, 31);
    std::vector<float> x(src);
    for (auto _ : state) {
        x = src;
        softmax(x.data(), rows, cols);
        benchmark::DoNotOptimize(x.data());
    }
}

void BM_SoftmaxSerial(benchmark::State& state) {
    bench_softmax(state, kernels::serial::softmax_rows);
}
void BM_SoftmaxOpenMP(benchmark::State& state) { bench_softmax(state, kernels::omp::softmax_rows); }

BENCHMARK(BM_SoftmaxSerial)->Args({4096, 256})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_SoftmaxOpenMP)->Args({4096, 256})->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
