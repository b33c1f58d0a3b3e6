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
#include <cmath>
#include <limits>

#include "emlab/errors.hpp"
#include "emlab/kernels.hpp"
#include "emlab/tensor.hpp"
#include "tensor_internal.hpp"

namespace emlab {

using detail::grad_target;
using detail::make_result;
using detail::TensorImpl;

namespace {

const std::shared_ptr<TensorImpl>& impl_of(const Tensor& t) {
  if (!t.defined()) throw ContractError("use of an undefined tensor");
  return t.impl();
}

void require_rank(const Tensor& t, std::size_t rank, std::string_view op) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// Treats a tensor of any rank as [outer x last].
std::pair<std::size_t, std::size_t> rows_by_last(const Tensor& x) {
  const auto& s = x.shape();
  if (s.empty()) return {1, 1};
  return {x.numel() / s.back(), s.back()};
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  std::vector<double> out(m * n);
  kernels::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data(), false);
  auto ai = impl_of(a), bi = impl_of(b);
  return make_result("matmul", {m, n}, std::move(out), {ai, bi}, [ai, bi, m, k, n](const TensorImpl& o) {
    if (auto* ga = grad_target(ai)) kernels::gemm_nt(m, n, k, o.grad.data(), bi->data.data(), ga, true);
    if (auto* gb = grad_target(bi)) kernels::gemm_tn(k, m, n, ai->data.data(), o.grad.data(), gb, true);
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  const auto src = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = src[i * c + j];
  auto ai = impl_of(a);
  return make_result("transpose", {c, r}, std::move(out), {ai}, [ai, r, c](const TensorImpl& o) {
    if (auto* g = grad_target(ai))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  auto ai = impl_of(a);
  return make_result("reshape", std::move(shape), std::move(out), {ai}, [ai](const TensorImpl& o) {
    if (auto* g = grad_target(ai))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  auto ai = impl_of(a), bi = impl_of(b);
  return make_result("add", a.shape(), std::move(out), {ai, bi}, [ai, bi](const TensorImpl& o) {
    for (const auto& t : {ai, bi})
      if (auto* g = grad_target(t))
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  auto ai = impl_of(a), bi = impl_of(b);
  return make_result("sub", a.shape(), std::move(out), {ai, bi}, [ai, bi](const TensorImpl& o) {
    if (auto* g = grad_target(ai))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    if (auto* g = grad_target(bi))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  auto ai = impl_of(a), bi = impl_of(b);
  return make_result("mul", a.shape(), std::move(out), {ai, bi}, [ai, bi](const TensorImpl& o) {
    if (auto* g = grad_target(ai))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * bi->data[i];
    if (auto* g = grad_target(bi))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * ai->data[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  auto ai = impl_of(a);
  return make_result("scale", a.shape(), std::move(out), {ai}, [ai, factor](const TensorImpl& o) {
    if (auto* g = grad_target(ai))
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * factor;
  });
}

Tensor silu(const Tensor& a) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / (1.0 + std::exp(-x[i]));
  auto ai = impl_of(a);
  return make_result("silu", a.shape(), std::move(out), {ai}, [ai](const TensorImpl& o) {
    if (auto* g = grad_target(ai))
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        const double x = ai->data[i];
        const double s = 1.0 / (1.0 + std::exp(-x));
        g[i] += o.grad[i] * (s + x * s * (1.0 - s));
      }
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  auto ai = impl_of(a);
  return make_result("sum", {}, {total}, {ai}, [ai](const TensorImpl& o) {
    if (auto* g = grad_target(ai))
      for (std::size_t i = 0; i < ai->data.size(); ++i) g[i] += o.grad[0];
  });
}

Tensor stable_softmax(const Tensor& x, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size())
    throw DimensionError("stable_softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t t = 0; t < inner; ++t) {
      const std::size_t base = o * len * inner + t;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, in[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        out[base + j * inner] = std::exp(in[base + j * inner] - mx);
        total += out[base + j * inner];
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  auto xi = impl_of(x);
  return make_result("stable_softmax", s, std::move(out), {xi},
                     [xi, outer, inner, len](const TensorImpl& o) {
                       auto* g = grad_target(xi);
                       if (!g) return;
                       for (std::size_t a = 0; a < outer; ++a)
                         for (std::size_t t = 0; t < inner; ++t) {
                           const std::size_t base = a * len * inner + t;
                           double dot = 0.0;
                           for (std::size_t j = 0; j < len; ++j)
                             dot += o.grad[base + j * inner] * o.data[base + j * inner];
                           for (std::size_t j = 0; j < len; ++j) {
                             const std::size_t idx = base + j * inner;
                             g[idx] += o.data[idx] * (o.grad[idx] - dot);
                           }
                         }
                     });
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  if (!(eps > 0.0)) throw ConfigError("rms_norm: eps must be positive");
  require_rank(gain, 1, "rms_norm");
  const auto [rows, d] = rows_by_last(x);
  if (x.rank() == 0 || gain.dim(0) != d)
    throw DimensionError("rms_norm: gain " + shape_str(gain.shape()) + " vs input " + shape_str(x.shape()));
  const auto in = x.data();
  const auto gv = gain.data();
  std::vector<double> out(in.size());
  std::vector<double> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = in.data() + r * d;
    double ms = 0.0;
    for (std::size_t j = 0; j < d; ++j) ms += xr[j] * xr[j];
    inv[r] = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xr[j] * inv[r] * gv[j];
  }
  auto xi = impl_of(x), gi = impl_of(gain);
  return make_result("rms_norm", x.shape(), std::move(out), {xi, gi},
                     [xi, gi, inv = std::move(inv), rows, d](const TensorImpl& o) {
                       auto* gx = grad_target(xi);
                       auto* gg = grad_target(gi);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* xr = xi->data.data() + r * d;
                         const double* dy = o.grad.data() + r * d;
                         double proj = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double xh = xr[j] * inv[r];
                           proj += dy[j] * gi->data[j] * xh;
                           if (gg) gg[j] += dy[j] * xh;
                         }
                         if (!gx) continue;
                         proj /= static_cast<double>(d);
                         for (std::size_t j = 0; j < d; ++j)
                           gx[r * d + j] += inv[r] * (dy[j] * gi->data[j] - xr[j] * inv[r] * proj);
                       }
                     });
}

Tensor rope_apply(const Tensor& x, std::span<const std::size_t> positions, std::size_t n_heads,
                  double base) {
  require_rank(x, 2, "rope_apply");
  const std::size_t rows = x.dim(0), width = x.dim(1);
  if (n_heads == 0 || width % n_heads != 0)
    throw ConfigError("rope_apply: width " + std::to_string(width) + " not divisible into heads");
  const std::size_t dh = width / n_heads;
  if (dh % 2 != 0) throw ConfigError("rope_apply: head dimension must be even, got " + std::to_string(dh));
  if (positions.size() != rows) throw DimensionError("rope_apply: one position per row required");
  // Interleaved pairs (2i, 2i+1) rotate by pos * base^(-2i/dh).
  const std::size_t pairs = dh / 2;
  std::vector<double> cs(rows * pairs), sn(rows * pairs);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < pairs; ++i) {
      const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dh));
      const double angle = static_cast<double>(positions[r]) * freq;
      cs[r * pairs + i] = std::cos(angle);
      sn[r * pairs + i] = std::sin(angle);
    }
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t h = 0; h < n_heads; ++h)
      for (std::size_t i = 0; i < pairs; ++i) {
        const std::size_t at = r * width + h * dh + 2 * i;
        const double c = cs[r * pairs + i], s = sn[r * pairs + i];
        out[at] = in[at] * c - in[at + 1] * s;
        out[at + 1] = in[at] * s + in[at + 1] * c;
      }
  auto xi = impl_of(x);
  return make_result("rope_apply", x.shape(), std::move(out), {xi},
                     [xi, cs = std::move(cs), sn = std::move(sn), rows, width, n_heads, dh,
                      pairs](const TensorImpl& o) {
                       auto* g = grad_target(xi);
                       if (!g) return;
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t h = 0; h < n_heads; ++h)
                           for (std::size_t i = 0; i < pairs; ++i) {
                             const std::size_t at = r * width + h * dh + 2 * i;
                             const double c = cs[r * pairs + i], s = sn[r * pairs + i];
                             g[at] += o.grad[at] * c + o.grad[at + 1] * s;
                             g[at + 1] += -o.grad[at] * s + o.grad[at + 1] * c;
                           }
                     });
}

Tensor rope_apply(const Tensor& x, double base) {
  require_rank(x, 2, "rope_apply");
  std::vector<std::size_t> positions(x.dim(0));
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  return rope_apply(x, positions, 1, base);
}

Tensor mean_over_axis(const Tensor& x, std::size_t axis) {
  require_rank(x, 2, "mean_over_axis");
  if (axis > 1) throw DimensionError("mean_over_axis: axis must be 0 or 1");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const std::size_t count = axis == 0 ? rows : cols;
  const std::size_t keep = axis == 0 ? cols : rows;
  const auto in = x.data();
  std::vector<double> out(keep, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[axis == 0 ? c : r] += in[r * cols + c];
  const double n = static_cast<double>(count);
  for (auto& v : out) v /= n;
  auto xi = impl_of(x);
  return make_result("mean_over_axis", {keep}, std::move(out), {xi},
                     [xi, rows, cols, axis, n](const TensorImpl& o) {
                       auto* g = grad_target(xi);
                       if (!g) return;
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < cols; ++c)
                           g[r * cols + c] += o.grad[axis == 0 ? c : r] / n;
                     });
}

Tensor cosine_sim(const Tensor& u, const Tensor& v) {
  require_rank(u, 1, "cosine_sim");
  require_same_shape(u, v, "cosine_sim");
  const auto a = u.data(), b = v.data();
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine_sim: zero vector");
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  const double c = std::clamp(dot / (na * nb), -1.0, 1.0);
  auto ui = impl_of(u), vi = impl_of(v);
  return make_result("cosine_sim", {}, {c}, {ui, vi}, [ui, vi, na, nb, c](const TensorImpl& o) {
    const double up = o.grad[0];
    if (auto* g = grad_target(ui))
      for (std::size_t i = 0; i < ui->data.size(); ++i)
        g[i] += up * (vi->data[i] / (na * nb) - c * ui->data[i] / (na * na));
    if (auto* g = grad_target(vi))
      for (std::size_t i = 0; i < vi->data.size(); ++i)
        g[i] += up * (ui->data[i] / (na * nb) - c * vi->data[i] / (nb * nb));
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids) {
  require_rank(table, 2, "embedding_lookup");
  if (ids.empty()) throw EmptyInputError("embedding_lookup: no ids");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  const auto src = table.data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= vocab) throw DimensionError("embedding_lookup: id " + std::to_string(ids[r]) + " out of range");
    std::copy_n(src.data() + ids[r] * d, d, out.data() + r * d);
  }
  auto ti = impl_of(table);
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return make_result("embedding_lookup", {ids.size(), d}, std::move(out), {ti},
                     [ti, idv = std::move(idv), d](const TensorImpl& o) {
                       auto* g = grad_target(ti);
                       if (!g) return;
                       for (std::size_t r = 0; r < idv.size(); ++r)
                         for (std::size_t j = 0; j < d; ++j) g[idv[r] * d + j] += o.grad[r * d + j];
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  if (rows.empty()) throw EmptyInputError("gather_rows: no rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> out(rows.size() * d);
  const auto src = x.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) throw DimensionError("gather_rows: row " + std::to_string(rows[r]) + " out of range");
    std::copy_n(src.data() + rows[r] * d, d, out.data() + r * d);
  }
  auto xi = impl_of(x);
  std::vector<std::size_t> rv(rows.begin(), rows.end());
  return make_result("gather_rows", {rows.size(), d}, std::move(out), {xi},
                     [xi, rv = std::move(rv), d](const TensorImpl& o) {
                       auto* g = grad_target(xi);
                       if (!g) return;
                       for (std::size_t r = 0; r < rv.size(); ++r)
                         for (std::size_t j = 0; j < d; ++j) g[rv[r] * d + j] += o.grad[r * d + j];
                     });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw EmptyInputError("concat_rows: no parts");
  const std::size_t d = parts.front().dim(1);
  std::size_t total = 0;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != d) throw DimensionError("concat_rows: column count differs");
    total += p.dim(0);
    inputs.push_back(impl_of(p));
  }
  std::vector<double> out;
  out.reserve(total * d);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  auto captured = inputs;
  return make_result("concat_rows", {total, d}, std::move(out), std::move(inputs),
                     [captured](const TensorImpl& o) {
                       std::size_t at = 0;
                       for (const auto& in : captured) {
                         if (auto* g = grad_target(in))
                           for (std::size_t i = 0; i < in->data.size(); ++i) g[i] += o.grad[at + i];
                         at += in->data.size();
                       }
                     });
}

Tensor l2_normalize_rows(const Tensor& x) {
  require_rank(x, 2, "l2_normalize_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  const auto in = x.data();
  std::vector<double> out(in.size()), norms(n);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += in[r * d + j] * in[r * d + j];
    if (s == 0.0) throw DegenerateInputError("l2_normalize_rows: row " + std::to_string(r) + " is zero");
    norms[r] = std::sqrt(s);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = in[r * d + j] / norms[r];
  }
  auto xi = impl_of(x);
  return make_result("l2_normalize_rows", x.shape(), std::move(out), {xi},
                     [xi, norms = std::move(norms), n, d](const TensorImpl& o) {
                       auto* g = grad_target(xi);
                       if (!g) return;
                       for (std::size_t r = 0; r < n; ++r) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < d; ++j) dot += o.data[r * d + j] * o.grad[r * d + j];
                         for (std::size_t j = 0; j < d; ++j)
                           g[r * d + j] += (o.grad[r * d + j] - o.data[r * d + j] * dot) / norms[r];
                       }
                     });
}

Tensor segment_mean(const Tensor& x, const std::vector<std::size_t>& offsets) {
  require_rank(x, 2, "segment_mean");
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != x.dim(0))
    throw DimensionError("segment_mean: offsets do not cover the rows");
  const std::size_t segs = offsets.size() - 1, d = x.dim(1);
  const auto in = x.data();
  std::vector<double> out(segs * d, 0.0);
  for (std::size_t s = 0; s < segs; ++s) {
    if (offsets[s + 1] <= offsets[s]) throw EmptyInputError("segment_mean: empty segment");
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
      for (std::size_t j = 0; j < d; ++j) out[s * d + j] += in[r * d + j];
    const double len = static_cast<double>(offsets[s + 1] - offsets[s]);
    for (std::size_t j = 0; j < d; ++j) out[s * d + j] /= len;
  }
  auto xi = impl_of(x);
  return make_result("segment_mean", {segs, d}, std::move(out), {xi},
                     [xi, offsets, segs, d](const TensorImpl& o) {
                       auto* g = grad_target(xi);
                       if (!g) return;
                       for (std::size_t s = 0; s < segs; ++s) {
                         const double len = static_cast<double>(offsets[s + 1] - offsets[s]);
                         for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
                           for (std::size_t j = 0; j < d; ++j) g[r * d + j] += o.grad[s * d + j] / len;
                       }
                     });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const std::vector<std::size_t>& offsets, std::size_t n_heads, bool causal) {
  require_rank(q, 2, "attention");
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  const std::size_t rows = q.dim(0), width = q.dim(1);
  if (n_heads == 0 || width % n_heads != 0) throw ConfigError("attention: width not divisible into heads");
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != rows)
    throw DimensionError("attention: offsets do not cover the rows");
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
    if (offsets[s + 1] <= offsets[s]) throw EmptyInputError("attention: empty segment");
  const kernels::AttentionShape shape{n_heads, width / n_heads, causal};
  auto cache = std::make_shared<kernels::AttentionCache>();
  std::vector<double> out(rows * width);
  kernels::attention_forward(offsets, shape, q.data().data(), k.data().data(), v.data().data(),
                             out.data(), *cache);
  auto qi = impl_of(q), ki = impl_of(k), vi = impl_of(v);
  return make_result("attention", q.shape(), std::move(out), {qi, ki, vi},
                     [qi, ki, vi, offsets, shape, cache](const TensorImpl& o) {
                       // The kernel writes all three; unused ones go to scratch.
                       const std::size_t n = qi->data.size();
                       double* dq = grad_target(qi);
                       double* dk = grad_target(ki);
                       double* dv = grad_target(vi);
                       std::vector<double> scratch;
                       if (!dq || !dk || !dv) scratch.assign(3 * n, 0.0);
                       if (!dq) dq = scratch.data();
                       if (!dk) dk = scratch.data() + n;
                       if (!dv) dv = scratch.data() + 2 * n;
                       kernels::attention_backward(offsets, shape, qi->data.data(), ki->data.data(),
                                                   vi->data.data(), *cache, o.grad.data(), dq, dk, dv);
                     });
}

double infonce_from_logits(std::span<const double> logits) {
  if (logits.empty()) throw EmptyInputError("infonce: no candidates");
  std::size_t top = 0;
  for (std::size_t c = 1; c < logits.size(); ++c)
    if (logits[c] > logits[top]) top = c;
  const double mx = logits[top];
  double rest = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c)
    if (c != top) rest += std::exp(logits[c] - mx);
  return (mx - logits[0]) + std::log1p(rest);
}

Tensor contrastive_loss(const Tensor& sims, const std::vector<ContrastiveRow>& rows,
                        double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("contrastive_loss: temperature must be positive");
  require_rank(sims, 2, "contrastive_loss");
  if (rows.empty()) throw EmptyInputError("contrastive_loss: no rows");
  const std::size_t n_rows = sims.dim(0), n_cols = sims.dim(1);
  const auto sv = sims.data();
  double total = 0.0;
  std::vector<double> logits;
  for (const auto& row : rows) {
    if (row.sim_row >= n_rows || row.columns.empty()) throw DimensionError("contrastive_loss: bad row");
    logits.clear();
    for (auto c : row.columns) {
      if (c >= n_cols) throw DimensionError("contrastive_loss: column out of range");
      logits.push_back(sv[row.sim_row * n_cols + c] / temperature);
    }
    total += infonce_from_logits(logits);
  }
  const double count = static_cast<double>(rows.size());
  auto si = impl_of(sims);
  return make_result("contrastive_loss", {}, {total / count}, {si},
                     [si, rows, temperature, n_cols, count](const TensorImpl& o) {
                       auto* g = grad_target(si);
                       if (!g) return;
                       const double up = o.grad[0] / count;
                       std::vector<double> logits;
                       for (const auto& row : rows) {
                         logits.clear();
                         for (auto c : row.columns) logits.push_back(si->data[row.sim_row * n_cols + c] / temperature);
                         const double mx = *std::max_element(logits.begin(), logits.end());
                         double z = 0.0;
                         for (double l : logits) z += std::exp(l - mx);
                         for (std::size_t t = 0; t < logits.size(); ++t) {
                           const double p = std::exp(logits[t] - mx) / z;
                           const double dl = p - (t == 0 ? 1.0 : 0.0);
                           g[row.sim_row * n_cols + row.columns[t]] += up * dl / temperature;
                         }
                       }
                     });
}

}  // namespace emlab
