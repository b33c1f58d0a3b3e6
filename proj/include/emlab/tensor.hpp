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

// Dense row-major double tensors with a reverse-mode differentiation tape.
//
// A Tensor is a shared handle. Ops executed while grad mode is on and at least
// one input requires a gradient record a node on the output; `backward` walks
// those nodes in reverse execution order. Leaf gradients accumulate across
// backward calls until `zero_grad`.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace emlab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view for leaves (parameters, inputs). Throws on op outputs.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Copy of the values without graph history.
  Tensor detach() const;
  /// Name of the op that produced this tensor; empty for leaves.
  std::string_view op_name() const;

  const detail::TensorImpl* id() const { return impl_.get(); }

  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered record of the differentiable ops reachable from a root tensor, in
/// reverse execution order.
class Tape {
 public:
  static Tape capture(const Tensor& root);

  std::size_t size() const { return order_.size(); }
  std::vector<std::string> op_names() const;
  /// Runs every recorded backward exactly once; `visit` sees each op name.
  void replay(const std::function<void(std::string_view)>& visit = {}) const;

 private:
  std::vector<std::shared_ptr<detail::TensorImpl>> order_;
};

/// Seeds d(root)/d(root) = 1 and accumulates gradients into every leaf that
/// requires them. `root` must be 0-dimensional.
void backward(const Tensor& root);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// NaN/Inf checks after every op. Off by default; tests switch it on.
void set_validation(bool on);
bool validation_enabled();
void require_finite(const Tensor& t, std::string_view where);

// ---- ops -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor silu(const Tensor& a);
Tensor sum(const Tensor& a);

/// Softmax along `axis` with max subtraction.
Tensor stable_softmax(const Tensor& x, std::size_t axis);
/// x / sqrt(mean(x^2) + eps) * gain over the last axis.
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps);
/// Rotary positions on a single head [L x d_head], position = row index.
Tensor rope_apply(const Tensor& x, double base);
/// Rotary positions on packed multi-head rows [T x n_heads*d_head].
Tensor rope_apply(const Tensor& x, std::span<const std::size_t> positions, std::size_t n_heads,
                  double base);
/// Mean of a 2-D tensor along axis 0 ([L x d] -> [d]) or axis 1 ([L x d] -> [L]).
Tensor mean_over_axis(const Tensor& x, std::size_t axis);
/// Cosine similarity of two equal-length vectors, as a scalar tensor.
Tensor cosine_sim(const Tensor& u, const Tensor& v);

/// Rows of `table` selected by `ids`.
Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor l2_normalize_rows(const Tensor& x);
/// Per-segment mean of packed rows: [T x D] -> [S x D].
Tensor segment_mean(const Tensor& x, const std::vector<std::size_t>& offsets);
/// Scaled dot-product attention on packed segments; q/k/v are [T x n_heads*d_head].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const std::vector<std::size_t>& offsets, std::size_t n_heads, bool causal);

/// One InfoNCE row: the candidate columns of a similarity row, positive first.
struct ContrastiveRow {
  std::size_t sim_row = 0;
  std::vector<std::size_t> columns;
};

/// -log softmax(logits)[0], evaluated as (max - l0) + log1p(sum of the other
/// shifted exponentials) so tiny losses keep full relative precision.
double infonce_from_logits(std::span<const double> logits);

/// Mean over rows of -log softmax(sims[row, columns] / temperature)[0].
Tensor contrastive_loss(const Tensor& sims, const std::vector<ContrastiveRow>& rows,
                        double temperature);

}  // namespace emlab
