#include <benchmark/benchmark.h>

#include <cstddef>
#include <vector>

#include "agentpose/kernels.hpp"
#include "agentpose/rng.hpp"

namespace {

using namespace agentpose;

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const kernels::GemmDims d{.m = n, .n = n, .k = n};
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::gemm_parallel(d, a, b, c);
    else kernels::gemm_serial(d, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <bool Parallel>
void BM_PairwiseDistance(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t dim = 16;
  const auto x = random_vector(n * dim, 3), y = random_vector(n * dim, 4);
  for (auto _ : state) {
    const double s = Parallel ? kernels::pairwise_distance_sum_parallel(n, n, dim, x, y)
                              : kernels::pairwise_distance_sum_serial(n, n, dim, x, y);
    benchmark::DoNotOptimize(s);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}

template <bool Parallel>
void BM_LogSoftmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t cols = 32;
  const auto x = random_vector(rows * cols, 5);
  std::vector<double> out(rows * cols);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::log_softmax_rows_parallel(rows, cols, x, out);
    else kernels::log_softmax_rows_serial(rows, cols, x, out);
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_PairwiseDistance<false>)->Arg(256)->Arg(1000);
BENCHMARK(BM_PairwiseDistance<true>)->Arg(256)->Arg(1000);
BENCHMARK(BM_LogSoftmax<false>)->Arg(1024)->Arg(8192);
BENCHMARK(BM_LogSoftmax<true>)->Arg(1024)->Arg(8192);

BENCHMARK_MAIN();
