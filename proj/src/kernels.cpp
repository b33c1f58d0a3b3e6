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

#include "emlab/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <vector>

namespace emlab::kernels {

namespace {

std::atomic<int> g_threads{1};

// Row bodies shared by the serial and OpenMP drivers. Keeping one body per
// output row is what makes the two drivers bit-identical.

inline void gemm_nn_row(std::size_t i, std::size_t k, std::size_t n, const double* a,
                        const double* b, double* c, bool accumulate) {
  double* crow = c + i * n;
  if (!accumulate) std::fill(crow, crow + n, 0.0);
  const double* arow = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = arow[p];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

// C row i of A * B^T, reading B already transposed to [k x n] so the inner
// loop runs over contiguous output columns.
inline void gemm_nt_row(std::size_t i, std::size_t k, std::size_t n, const double* a,
                        const double* bt, double* c, bool accumulate) {
  gemm_nn_row(i, k, n, a, bt, c, accumulate);
}

// Rows [i0, i1) of A^T * B. Each row of B is reused across the whole row block.
inline void gemm_tn_rows(std::size_t i0, std::size_t i1, std::size_t m, std::size_t k,
                         std::size_t n, const double* a, const double* b, double* c,
                         bool accumulate) {
  if (!accumulate) std::fill(c + i0 * n, c + i1 * n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n;
    const double* acol = a + p * m;
    for (std::size_t i = i0; i < i1; ++i) {
      const double av = acol[i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

constexpr std::size_t kTnBlock = 8;

std::vector<double> transposed(std::size_t rows, std::size_t cols, const double* x) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = x[r * cols + c];
  return t;
}

inline double row_norm(const double* x, std::size_t dim) {
  double s = 0.0;
  for (std::size_t t = 0; t < dim; ++t) s += x[t] * x[t];
  return std::sqrt(s);
}

inline void cosine_row(std::size_t i, std::size_t nd, std::size_t dim, const double* q,
                       const double* d, const double* dnorm, double* out) {
  const double* qrow = q + i * dim;
  const double qn = row_norm(qrow, dim);
  double* orow = out + i * nd;
  for (std::size_t j = 0; j < nd; ++j) {
    if (qn == 0.0 || dnorm[j] == 0.0) {
      orow[j] = 0.0;
      continue;
    }
    const double* drow = d + j * dim;
    double dot = 0.0;
    for (std::size_t t = 0; t < dim; ++t) dot += qrow[t] * drow[t];
    orow[j] = dot / (qn * dnorm[j]);
  }
}

struct Block {
  std::size_t begin;
  std::size_t len;
  std::size_t head;
  double* probs;
};

inline Block block_at(const Offsets& offsets, const AttentionShape& shape, const AttentionCache& cache,
                      std::size_t idx) {
  const std::size_t seg = idx / shape.n_heads;
  const std::size_t head = idx % shape.n_heads;
  const std::size_t begin = offsets[seg];
  return Block{begin, offsets[seg + 1] - begin, head,
               const_cast<double*>(cache.probs.data()) + cache.block_offset[idx]};
}

void attention_forward_block(const Block& blk, const AttentionShape& shape, const double* q,
                             const double* k, const double* v, double* out) {
  const std::size_t dh = shape.head_dim;
  const std::size_t width = shape.n_heads * dh;
  const std::size_t col = blk.head * dh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t len = blk.len;
  for (std::size_t i = 0; i < len; ++i) {
    const double* qi = q + (blk.begin + i) * width + col;
    double* prow = blk.probs + i * len;
    const std::size_t visible = shape.causal ? i + 1 : len;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < visible; ++j) {
      const double* kj = k + (blk.begin + j) * width + col;
      double s = 0.0;
      for (std::size_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
      prow[j] = s * scale;
      mx = std::max(mx, prow[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < visible; ++j) {
      prow[j] = std::exp(prow[j] - mx);
      sum += prow[j];
    }
    for (std::size_t j = 0; j < visible; ++j) prow[j] /= sum;
    for (std::size_t j = visible; j < len; ++j) prow[j] = 0.0;

    double* oi = out + (blk.begin + i) * width + col;
    std::fill(oi, oi + dh, 0.0);
    for (std::size_t j = 0; j < visible; ++j) {
      const double p = prow[j];
      const double* vj = v + (blk.begin + j) * width + col;
      for (std::size_t t = 0; t < dh; ++t) oi[t] += p * vj[t];
    }
  }
}

void attention_backward_block(const Block& blk, const AttentionShape& shape, const double* q,
                              const double* k, const double* v, const double* dout, double* dq,
                              double* dk, double* dv) {
  const std::size_t dh = shape.head_dim;
  const std::size_t width = shape.n_heads * dh;
  const std::size_t col = blk.head * dh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t len = blk.len;
  std::vector<double> dscore(len);
  for (std::size_t i = 0; i < len; ++i) {
    const std::size_t visible = shape.causal ? i + 1 : len;
    const double* prow = blk.probs + i * len;
    const double* doi = dout + (blk.begin + i) * width + col;
    double weighted = 0.0;
    for (std::size_t j = 0; j < visible; ++j) {
      const double* vj = v + (blk.begin + j) * width + col;
      double dp = 0.0;
      for (std::size_t t = 0; t < dh; ++t) dp += doi[t] * vj[t];
      dscore[j] = dp;
      weighted += dp * prow[j];
      double* dvj = dv + (blk.begin + j) * width + col;
      for (std::size_t t = 0; t < dh; ++t) dvj[t] += prow[j] * doi[t];
    }
    const double* qi = q + (blk.begin + i) * width + col;
    double* dqi = dq + (blk.begin + i) * width + col;
    for (std::size_t j = 0; j < visible; ++j) {
      const double ds = prow[j] * (dscore[j] - weighted) * scale;
      const double* kj = k + (blk.begin + j) * width + col;
      double* dkj = dk + (blk.begin + j) * width + col;
      for (std::size_t t = 0; t < dh; ++t) {
        dqi[t] += ds * kj[t];
        dkj[t] += ds * qi[t];
      }
    }
  }
}

std::vector<double> column_norms(std::size_t nd, std::size_t dim, const double* d) {
  std::vector<double> norms(nd);
  for (std::size_t j = 0; j < nd; ++j) norms[j] = row_norm(d + j * dim, dim);
  return norms;
}

}  // namespace

void set_num_threads(int n) { g_threads.store(std::max(1, n)); }
int num_threads() { return g_threads.load(); }

void prepare_attention_cache(const Offsets& offsets, std::size_t n_heads, AttentionCache& cache) {
  const std::size_t segments = offsets.empty() ? 0 : offsets.size() - 1;
  cache.block_offset.assign(segments * n_heads, 0);
  std::size_t total = 0;
  for (std::size_t s = 0; s < segments; ++s) {
    const std::size_t len = offsets[s + 1] - offsets[s];
    for (std::size_t h = 0; h < n_heads; ++h) {
      cache.block_offset[s * n_heads + h] = total;
      total += len * len;
    }
  }
  cache.probs.assign(total, 0.0);
}

namespace serial {

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) gemm_nn_row(i, k, n, a, b, c, accumulate);
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate) {
  const auto bt = transposed(n, k, b);
  for (std::size_t i = 0; i < m; ++i) gemm_nt_row(i, k, n, a, bt.data(), c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate) {
  for (std::size_t i0 = 0; i0 < m; i0 += kTnBlock)
    gemm_tn_rows(i0, std::min(m, i0 + kTnBlock), m, k, n, a, b, c, accumulate);
}

void cosine_matrix(std::size_t nq, std::size_t nd, std::size_t dim, const double* q,
                   const double* d, double* out) {
  const auto dnorm = column_norms(nd, dim, d);
  for (std::size_t i = 0; i < nq; ++i) cosine_row(i, nd, dim, q, d, dnorm.data(), out);
}

void attention_forward(const Offsets& offsets, const AttentionShape& shape, const double* q,
                       const double* k, const double* v, double* out, AttentionCache& cache) {
  prepare_attention_cache(offsets, shape.n_heads, cache);
  const std::size_t blocks = cache.block_offset.size();
  for (std::size_t b = 0; b < blocks; ++b)
    attention_forward_block(block_at(offsets, shape, cache, b), shape, q, k, v, out);
}

void attention_backward(const Offsets& offsets, const AttentionShape& shape, const double* q,
                        const double* k, const double* v, const AttentionCache& cache,
                        const double* dout, double* dq, double* dk, double* dv) {
  const std::size_t blocks = cache.block_offset.size();
  for (std::size_t b = 0; b < blocks; ++b)
    attention_backward_block(block_at(offsets, shape, cache, b), shape, q, k, v, dout, dq, dk, dv);
}

}  // namespace serial

namespace parallel {

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    gemm_nn_row(static_cast<std::size_t>(i), k, n, a, b, c, accumulate);
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate) {
  const auto bt = transposed(n, k, b);
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    gemm_nt_row(static_cast<std::size_t>(i), k, n, a, bt.data(), c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate) {
  const auto blocks = static_cast<std::ptrdiff_t>((m + kTnBlock - 1) / kTnBlock);
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
    const auto i0 = static_cast<std::size_t>(blk) * kTnBlock;
    gemm_tn_rows(i0, std::min(m, i0 + kTnBlock), m, k, n, a, b, c, accumulate);
  }
}

void cosine_matrix(std::size_t nq, std::size_t nd, std::size_t dim, const double* q,
                   const double* d, double* out) {
  const auto dnorm = column_norms(nd, dim, d);
  const auto rows = static_cast<std::ptrdiff_t>(nq);
#pragma omp parallel for schedule(static) num_threads(num_threads())
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    cosine_row(static_cast<std::size_t>(i), nd, dim, q, d, dnorm.data(), out);
}

void attention_forward(const Offsets& offsets, const AttentionShape& shape, const double* q,
                       const double* k, const double* v, double* out, AttentionCache& cache) {
  prepare_attention_cache(offsets, shape.n_heads, cache);
  const auto blocks = static_cast<std::ptrdiff_t>(cache.block_offset.size());
#pragma omp parallel for schedule(dynamic) num_threads(num_threads())
  for (std::ptrdiff_t b = 0; b < blocks; ++b)
    attention_forward_block(block_at(offsets, shape, cache, static_cast<std::size_t>(b)), shape, q,
                            k, v, out);
}

void attention_backward(const Offsets& offsets, const AttentionShape& shape, const double* q,
                        const double* k, const double* v, const AttentionCache& cache,
                        const double* dout, double* dq, double* dk, double* dv) {
  // Blocks touch disjoint (row range, head column range) slices of dq/dk/dv.
  const auto blocks = static_cast<std::ptrdiff_t>(cache.block_offset.size());
#pragma omp parallel for schedule(dynamic) num_threads(num_threads())
  for (std::ptrdiff_t b = 0; b < blocks; ++b)
    attention_backward_block(block_at(offsets, shape, cache, static_cast<std::size_t>(b)), shape, q,
                             k, v, dout, dq, dk, dv);
}

}  // namespace parallel

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1 << 15;

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate) {
  if (num_threads() > 1 && m > 1 && m * k * n >= kParallelWork)
    parallel::gemm_nn(m, k, n, a, b, c, accumulate);
  else
    serial::gemm_nn(m, k, n, a, b, c, accumulate);
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate) {
  if (num_threads() > 1 && m > 1 && m * k * n >= kParallelWork)
    parallel::gemm_nt(m, k, n, a, b, c, accumulate);
  else
    serial::gemm_nt(m, k, n, a, b, c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate) {
  if (num_threads() > 1 && m > 1 && m * k * n >= kParallelWork)
    parallel::gemm_tn(m, k, n, a, b, c, accumulate);
  else
    serial::gemm_tn(m, k, n, a, b, c, accumulate);
}

void cosine_matrix(std::size_t nq, std::size_t nd, std::size_t dim, const double* q,
                   const double* d, double* out) {
  if (num_threads() > 1 && nq > 1)
    parallel::cosine_matrix(nq, nd, dim, q, d, out);
  else
    serial::cosine_matrix(nq, nd, dim, q, d, out);
}

void attention_forward(const Offsets& offsets, const AttentionShape& shape, const double* q,
                       const double* k, const double* v, double* out, AttentionCache& cache) {
  if (num_threads() > 1)
    parallel::attention_forward(offsets, shape, q, k, v, out, cache);
  else
    serial::attention_forward(offsets, shape, q, k, v, out, cache);
}

void attention_backward(const Offsets& offsets, const AttentionShape& shape, const double* q,
                        const double* k, const double* v, const AttentionCache& cache,
                        const double* dout, double* dq, double* dk, double* dv) {
  if (num_threads() > 1)
    parallel::attention_backward(offsets, shape, q, k, v, cache, dout, dq, dk, dv);
  else
    serial::attention_backward(offsets, shape, q, k, v, cache, dout, dq, dk, dv);
}

}  // namespace emlab::kernels
