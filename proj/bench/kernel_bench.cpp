// Copyright 2026 The emlab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Serial reference vs OpenMP kernels. Run with --benchmark_filter=... as usual;
// the thread count for the parallel variants comes from EMLAB_BENCH_THREADS
// (default: all cores).

#include <benchmark/benchmark.h>
#include <omp.h>

#include <cstdlib>
#include <random>
#include <vector>

#include "emlab/kernels.hpp"

namespace {

using namespace emlab::kernels;

std::vector<double> random_values(std::size_t n) {
  std::mt19937_64 rng(n);
  std::normal_distribution<double> dist;
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

int bench_threads() {
  if (const char* env = std::getenv("EMLAB_BENCH_THREADS")) return std::max(1, std::atoi(env));
  return omp_get_max_threads();
}

template <bool Parallel>
void BM_GemmNN(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_values(n * n), b = random_values(n * n);
  std::vector<double> c(n * n);
  set_num_threads(bench_threads());
  for (auto _ : state) {
    if constexpr (Parallel)
      parallel::gemm_nn(n, n, n, a.data(), b.data(), c.data(), false);
    else
      serial::gemm_nn(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}

template <bool Parallel>
void BM_CosineMatrix(benchmark::State& state) {
  const auto nd = static_cast<std::size_t>(state.range(0));
  const std::size_t nq = 256, dim = 64;
  const auto q = random_values(nq * dim), d = random_values(nd * dim);
  std::vector<double> out(nq * nd);
  set_num_threads(bench_threads());
  for (auto _ : state) {
    if constexpr (Parallel)
      parallel::cosine_matrix(nq, nd, dim, q.data(), d.data(), out.data());
    else
      serial::cosine_matrix(nq, nd, dim, q.data(), d.data(), out.data());
    benchmark::ClobberMemory();
  }
}

template <bool Parallel>
void BM_Attention(benchmark::State& state) {
  const auto segments = static_cast<std::size_t>(state.range(0));
  const std::size_t len = 48;
  const AttentionShape shape{4, 16, false};
  Offsets offsets(segments + 1);
  for (std::size_t s = 0; s <= segments; ++s) offsets[s] = s * len;
  const std::size_t n = segments * len * 64;
  const auto q = random_values(n), k = random_values(n), v = random_values(n);
  std::vector<double> out(n);
  AttentionCache cache;
  set_num_threads(bench_threads());
  for (auto _ : state) {
    if constexpr (Parallel)
      parallel::attention_forward(offsets, shape, q.data(), k.data(), v.data(), out.data(), cache);
    else
      serial::attention_forward(offsets, shape, q.data(), k.data(), v.data(), out.data(), cache);
    benchmark::ClobberMemory();
  }
}

BENCHMARK(BM_GemmNN<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_GemmNN<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_CosineMatrix<false>)->Arg(1024)->Arg(8192);
BENCHMARK(BM_CosineMatrix<true>)->Arg(1024)->Arg(8192);
BENCHMARK(BM_Attention<false>)->Arg(16)->Arg(64);
BENCHMARK(BM_Attention<true>)->Arg(16)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
