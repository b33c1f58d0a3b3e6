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

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "emlab/errors.hpp"
#include "emlab/tensor.hpp"
#include "tensor_internal.hpp"

namespace emlab {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};
std::atomic<bool> g_validate{false};
thread_local bool t_grad_enabled = true;

const detail::TensorImpl& checked(const std::shared_ptr<detail::TensorImpl>& impl) {
  if (!impl) throw ContractError("use of an undefined tensor");
  return *impl;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  if (shape_numel(shape) != values.size())
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const auto n = values.size();
  return from({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return from({rows, cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_).data.size(); }

std::span<const double> Tensor::data() const { return checked(impl_).data; }

std::span<double> Tensor::mutable_data() {
  checked(impl_);
  if (impl_->grad_fn) throw ContractError("cannot write into the output of a recorded op");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::size_t i) const {
  if (i >= numel()) throw DimensionError("index out of range");
  return impl_->data[i];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2 || row >= dim(0) || col >= dim(1)) throw DimensionError("index out of range");
  return impl_->data[row * impl_->shape[1] + col];
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

void Tensor::set_requires_grad(bool on) {
  checked(impl_);
  if (impl_->grad_fn) throw ContractError("requires_grad can only be set on leaves");
  impl_->requires_grad = on;
}

bool Tensor::is_leaf() const { return checked(impl_).grad_fn == nullptr; }
bool Tensor::has_grad() const { return !checked(impl_).grad.empty(); }
std::span<const double> Tensor::grad() const { return checked(impl_).grad; }

std::span<double> Tensor::mutable_grad() {
  checked(impl_);
  return impl_->grad_buffer();
}

void Tensor::zero_grad() {
  checked(impl_);
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), checked(impl_).data, false); }

std::string_view Tensor::op_name() const {
  const auto& impl = checked(impl_);
  return impl.grad_fn ? std::string_view(impl.grad_fn->name) : std::string_view();
}

Tape Tape::capture(const Tensor& root) {
  Tape tape;
  std::unordered_set<const detail::TensorImpl*> seen;
  std::vector<std::shared_ptr<detail::TensorImpl>> stack{root.impl()};
  checked(root.impl());
  while (!stack.empty()) {
    auto impl = std::move(stack.back());
    stack.pop_back();
    if (!impl->grad_fn || !seen.insert(impl.get()).second) continue;
    for (const auto& in : impl->grad_fn->inputs) stack.push_back(in);
    tape.order_.push_back(std::move(impl));
  }
  // Sequence numbers are issued at execution time, so descending order is a
  // valid reverse topological order.
  std::sort(tape.order_.begin(), tape.order_.end(),
            [](const auto& a, const auto& b) { return a->grad_fn->seq > b->grad_fn->seq; });
  return tape;
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(order_.size());
  for (const auto& impl : order_) names.push_back(impl->grad_fn->name);
  return names;
}

void Tape::replay(const std::function<void(std::string_view)>& visit) const {
  for (const auto& impl : order_) {
    if (visit) visit(impl->grad_fn->name);
    if (!impl->grad.empty()) impl->grad_fn->backward(*impl);
    // Intermediate gradients are consumed; only leaves accumulate.
    impl->grad.clear();
    impl->grad.shrink_to_fit();
  }
}

void backward(const Tensor& root) {
  const auto& impl = checked(root.impl());
  if (!impl.shape.empty() || impl.data.size() != 1)
    throw ContractError("backward needs a 0-dimensional tensor, got " + shape_str(impl.shape));
  if (!impl.requires_grad) throw ContractError("backward on a tensor that does not require grad");
  auto tape = Tape::capture(root);
  root.impl()->grad_buffer()[0] += 1.0;
  tape.replay();
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void set_validation(bool on) { g_validate.store(on); }
bool validation_enabled() { return g_validate.load(); }

void require_finite(const Tensor& t, std::string_view where) {
  for (double v : t.data())
    if (!std::isfinite(v)) throw NumericError("non-finite value produced by " + std::string(where));
}

namespace detail {

Tensor make_result(std::string_view name, Shape shape, std::vector<double> values,
                   std::vector<std::shared_ptr<TensorImpl>> inputs, BackwardFn backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  const bool track =
      t_grad_enabled &&
      std::any_of(inputs.begin(), inputs.end(), [](const auto& in) { return in->requires_grad; });
  if (track) {
    auto node = std::make_shared<Node>();
    node->seq = g_next_seq.fetch_add(1);
    node->name = std::string(name);
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    impl->grad_fn = std::move(node);
    impl->requires_grad = true;
  }
  Tensor out(std::move(impl));
  if (g_validate.load()) require_finite(out, name);
  return out;
}

}  // namespace detail

}  // namespace emlab
