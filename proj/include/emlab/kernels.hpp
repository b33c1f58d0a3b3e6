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

// Dense inner loops used by the tensor ops, the miner and the evaluators.
//
// Every kernel exists twice: a plain serial reference in `serial::` and an
// OpenMP version in `parallel::`. Both partition work by output row and keep
// the per-element summation order identical, so results are bit-equal for any
// thread count. The unqualified functions dispatch on `num_threads()`.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace emlab::kernels {

/// Sets the worker count used by the dispatching kernels (1 = serial path).
void set_num_threads(int n);
int num_threads();

/// Row segmentation of a packed [T x D] activation: segment s covers rows
/// [offsets[s], offsets[s+1]).
using Offsets = std::vector<std::size_t>;

/// Geometry shared by the attention kernels. q/k/v/out are packed [T x H*dh].
struct AttentionShape {
  std::size_t n_heads = 1;
  std::size_t head_dim = 1;
  bool causal = false;
};

/// Probabilities saved by the forward pass, one L x L block per (segment, head)
/// laid out segment-major.
struct AttentionCache {
  std::vector<std::size_t> block_offset;
  std::vector<double> probs;
};

#define EMLAB_KERNEL_DECLS                                                                   \
  /* C[m x n] (+)= A[m x k] * B[k x n] */                                                     \
  void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, \
               double* c, bool accumulate);                                                   \
  /* C[m x n] (+)= A[m x k] * B[n x k]^T */                                                   \
  void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, \
               double* c, bool accumulate);                                                   \
  /* C[m x n] (+)= A[k x m]^T * B[k x n] */                                                   \
  void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, \
               double* c, bool accumulate);                                                   \
  /* out[nq x nd] = cosine(q_i, d_j); rows with zero norm give 0 */                           \
  void cosine_matrix(std::size_t nq, std::size_t nd, std::size_t dim, const double* q,       \
                     const double* d, double* out);                                           \
  void attention_forward(const Offsets& offsets, const AttentionShape& shape, const double* q, \
                         const double* k, const double* v, double* out, AttentionCache& cache); \
  /* dq/dk/dv are accumulated into */                                                         \
  void attention_backward(const Offsets& offsets, const AttentionShape& shape, const double* q, \
                          const double* k, const double* v, const AttentionCache& cache,     \
                          const double* dout, double* dq, double* dk, double* dv);

namespace serial {
EMLAB_KERNEL_DECLS
}  // namespace serial

namespace parallel {
EMLAB_KERNEL_DECLS
}  // namespace parallel

EMLAB_KERNEL_DECLS

#undef EMLAB_KERNEL_DECLS

/// Fills cache.block_offset for the given segmentation and sizes cache.probs.
void prepare_attention_cache(const Offsets& offsets, std::size_t n_heads, AttentionCache& cache);

}  // namespace emlab::kernels
