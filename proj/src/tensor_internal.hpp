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

#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "emlab/tensor.hpp"

namespace emlab::detail {

struct Node {
  std::uint64_t seq = 0;
  std::string name;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  /// Reads out.grad and accumulates into the inputs' grads.
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;

  /// Gradient buffer, zero-filled on first use.
  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

using BackwardFn = std::function<void(const TensorImpl& out)>;

/// Wraps freshly computed values as an op output, recording a tape node when
/// any input participates in differentiation.
Tensor make_result(std::string_view name, Shape shape, std::vector<double> values,
                   std::vector<std::shared_ptr<TensorImpl>> inputs, BackwardFn backward);

/// Input gradient accumulator, or nullptr when the input needs no gradient.
inline double* grad_target(const std::shared_ptr<TensorImpl>& t) {
  return t->requires_grad ? t->grad_buffer().data() : nullptr;
}

}  // namespace emlab::detail
