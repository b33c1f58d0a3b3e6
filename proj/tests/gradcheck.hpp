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

// Central finite differences, used as the independent oracle for every
// analytic gradient in the test suites.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "emlab/tensor.hpp"

namespace emlab::testing {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// Norm-wise relative error of one leaf: max|a - n| / max(|a|, |n|) over the
// probed entries. Per-entry ratios are meaningless for entries whose gradient
// is at the roundoff level of the loss itself.
inline double leaf_rel_err(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, scale = 1e-12;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

using ScalarFn = std::function<Tensor()>;

/// Compares backward() of `fn` against central differences on the listed
/// leaves. When `per_leaf` is nonzero only that many randomly chosen entries of
/// each leaf are probed.
inline GradCheckResult grad_check(const ScalarFn& fn, std::vector<Tensor> leaves, double step = 1e-5,
                                  std::size_t per_leaf = 0, unsigned seed = 7) {
  for (auto& leaf : leaves) leaf.zero_grad();
  backward(fn());
  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves) {
    analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
    if (analytic.back().empty()) analytic.back().assign(leaf.numel(), 0.0);
  }

  GradCheckResult result;
  std::mt19937 rng(seed);
  NoGradGuard no_grad;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto values = leaves[l].mutable_data();
    std::vector<std::size_t> idx(values.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (per_leaf != 0 && per_leaf < idx.size()) {
      // Half of the probes go to entries with a nonzero analytic gradient so
      // sparse leaves (embedding tables) are still exercised.
      std::shuffle(idx.begin(), idx.end(), rng);
      std::stable_partition(idx.begin(), idx.begin() + std::min(idx.size(), 4 * per_leaf),
                            [&](std::size_t i) { return analytic[l][i] != 0.0; });
      std::vector<std::size_t> chosen(idx.begin(), idx.begin() + per_leaf / 2);
      chosen.insert(chosen.end(), idx.end() - (per_leaf - per_leaf / 2), idx.end());
      idx = std::move(chosen);
    }
    std::vector<double> probed_a, probed_n;
    for (auto i : idx) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = fn().item();
      values[i] = saved - step;
      const double down = fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      probed_a.push_back(analytic[l][i]);
      probed_n.push_back(numeric);
      ++result.checked;
    }
    result.max_rel_err = std::max(result.max_rel_err, leaf_rel_err(probed_a, probed_n));
  }
  return result;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(values), requires_grad);
}

}  // namespace emlab::testing
