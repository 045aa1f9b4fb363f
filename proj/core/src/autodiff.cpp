/*
 * Copyright 2026 The scst Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "scst/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace scst::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

NodePtr new_node(Shape shape, std::vector<double> value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_matrix(const Tensor& a, const char* op) {
  if (a.dim() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         shape_str(a.shape()));
  }
}

bool wants_grad(const NodePtr& n) { return n->requires_grad; }

void accumulate(Node& dst, std::span<const double> g) {
  auto& buf = dst.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive");
  }
  std::vector<double> values(shape_numel(shape), v);
  return Tensor(new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive");
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor " + shape_str(shape) + " given " +
                         std::to_string(values.size()) + " values");
  }
  return Tensor(new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

std::size_t Tensor::rows() const {
  const auto& s = shape();
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
  return r;
}

std::size_t Tensor::cols() const { return shape().empty() ? 1 : shape().back(); }

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::set_requires_grad(bool r) {
  if (!node_->is_leaf()) {
    throw ContractError("requires_grad can only be set on leaf tensors");
  }
  node_->requires_grad = r;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->value[0];
}

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(new_node(shape(), node_->value, requires_grad));
}

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

bool grad_enabled() { return t_grad_enabled; }

Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs, BackwardFn backward) {
  bool record = t_grad_enabled &&
                std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
                  return t.requires_grad();
                });
  auto n = new_node(std::move(shape), std::move(value), record);
  if (record) {
    n->inputs.reserve(inputs.size());
    for (auto& t : inputs) n->inputs.push_back(t.node_ptr());
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  MapMat(out.data(), m, n).noalias() =
      CMapMat(a.data().data(), m, k) * CMapMat(b.data().data(), k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& o) {
    CMapMat g(o.grad.data(), m, n);
    auto& na = *o.inputs[0];
    auto& nb = *o.inputs[1];
    if (wants_grad(o.inputs[0])) {
      MapMat(na.grad_buffer().data(), m, k).noalias() +=
          g * CMapMat(nb.value.data(), k, n).transpose();
    }
    if (wants_grad(o.inputs[1])) {
      MapMat(nb.grad_buffer().data(), k, n).noalias() +=
          CMapMat(na.value.data(), m, k).transpose() * g;
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) {
    throw DimensionError("matmul_nt: inner dimensions differ " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                         "^T");
  }
  std::vector<double> out(m * n);
  MapMat(out.data(), m, n).noalias() =
      CMapMat(a.data().data(), m, k) *
      CMapMat(b.data().data(), n, k).transpose();
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& o) {
    CMapMat g(o.grad.data(), m, n);
    auto& na = *o.inputs[0];
    auto& nb = *o.inputs[1];
    if (wants_grad(o.inputs[0])) {
      MapMat(na.grad_buffer().data(), m, k).noalias() +=
          g * CMapMat(nb.value.data(), n, k);
    }
    if (wants_grad(o.inputs[1])) {
      MapMat(nb.grad_buffer().data(), n, k).noalias() +=
          g.transpose() * CMapMat(na.value.data(), m, k);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const auto m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  MapMat(out.data(), n, m) = CMapMat(a.data().data(), m, n).transpose();
  return make_result({n, m}, std::move(out), {a}, [m, n](Node& o) {
    MapMat(o.inputs[0]->grad_buffer().data(), m, n) +=
        CMapMat(o.grad.data(), n, m).transpose();
  });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& o) {
    for (auto& in : o.inputs) {
      if (wants_grad(in)) accumulate(*in, o.grad);
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& o) {
    if (wants_grad(o.inputs[0])) accumulate(*o.inputs[0], o.grad);
    if (wants_grad(o.inputs[1])) {
      auto& g = o.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& o) {
    auto& na = *o.inputs[0];
    auto& nb = *o.inputs[1];
    if (wants_grad(o.inputs[0])) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * nb.value[i];
    }
    if (wants_grad(o.inputs[1])) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * na.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * c;
  return make_result(a.shape(), std::move(out), {a}, [c](Node& o) {
    auto& g = o.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * c;
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  const auto r = a.rows(), c = a.cols();
  if (row.numel() != c) {
    throw DimensionError("add_row: row of " + std::to_string(row.numel()) +
                         " values for " + shape_str(a.shape()));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a.at(i * c + j) + row.at(j);
  }
  return make_result(a.shape(), std::move(out), {a, row}, [r, c](Node& o) {
    if (wants_grad(o.inputs[0])) accumulate(*o.inputs[0], o.grad);
    if (wants_grad(o.inputs[1])) {
      auto& g = o.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) g[j] += o.grad[i * c + j];
      }
    }
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) > 0.0 ? a.at(i) : 0.0;
  return make_result(a.shape(), std::move(out), {a}, [](Node& o) {
    auto& in = *o.inputs[0];
    auto& g = in.grad_buffer();
    // Subgradient at exactly 0 is 0.
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in.value[i] > 0.0) g[i] += o.grad[i];
    }
  });
}

Tensor square(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * a.at(i);
  return make_result(a.shape(), std::move(out), {a}, [](Node& o) {
    auto& in = *o.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * in.value[i] * o.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({1}, {s}, {a}, [](Node& o) {
    auto& g = o.inputs[0]->grad_buffer();
    for (auto& v : g) v += o.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  return scale(sum(a), 1.0 / n);
}

Tensor weighted_sum(const Tensor& a, std::span<const double> w) {
  if (w.size() != a.numel()) {
    throw DimensionError("weighted_sum: " + std::to_string(w.size()) +
                         " weights for " + shape_str(a.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += a.at(i) * w[i];
  std::vector<double> weights(w.begin(), w.end());
  return make_result({1}, {s}, {a}, [weights = std::move(weights)](Node& o) {
    auto& g = o.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[0] * weights[i];
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalizers

Tensor log_softmax(const Tensor& logits) {
  const auto r = logits.rows(), c = logits.cols();
  std::vector<double> out(logits.numel());
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = logits.data().data() + i * c;
    double mx = *std::max_element(x, x + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[j] - lse;
  }
  return make_result(logits.shape(), std::move(out), {logits}, [r, c](Node& o) {
    auto& g = o.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      const double* dy = o.grad.data() + i * c;
      const double* y = o.value.data() + i * c;
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += dy[j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += dy[j] - std::exp(y[j]) * s;
    }
  });
}

Tensor masked_softmax(const Tensor& logits, std::span<const std::uint8_t> mask) {
  const auto r = logits.rows(), c = logits.cols();
  if (!mask.empty() && mask.size() != logits.numel()) {
    throw DimensionError("masked_softmax: mask of " + std::to_string(mask.size()) +
                         " for " + shape_str(logits.shape()));
  }
  auto live = [&](std::size_t k) { return mask.empty() || mask[k] != 0; };
  std::vector<double> out(logits.numel(), 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < c; ++j) {
      if (live(i * c + j)) {
        mx = std::max(mx, logits.at(i * c + j));
        any = true;
      }
    }
    if (!any) {
      throw DomainError("masked_softmax: row " + std::to_string(i) +
                        " is fully masked");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (live(i * c + j)) {
        out[i * c + j] = std::exp(logits.at(i * c + j) - mx);
        z += out[i * c + j];
      }
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  return make_result(logits.shape(), std::move(out), {logits}, [r, c](Node& o) {
    auto& g = o.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      const double* dy = o.grad.data() + i * c;
      const double* y = o.value.data() + i * c;
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += y[j] * dy[j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (dy[j] - s);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const auto r = x.rows(), d = x.cols();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias size must equal " +
                         std::to_string(d));
  }
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data().data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mu) * inv_std[i];
      out[i * d + j] = xhat[i * d + j] * gain.at(j) + bias.at(j);
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [r, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& o) {
        const auto& gv = o.inputs[1]->value;
        if (wants_grad(o.inputs[0])) {
          auto& gx = o.inputs[0]->grad_buffer();
          std::vector<double> dxhat(d);
          for (std::size_t i = 0; i < r; ++i) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              dxhat[j] = o.grad[i * d + j] * gv[j];
              m1 += dxhat[j];
              m2 += dxhat[j] * xhat[i * d + j];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              gx[i * d + j] += inv_std[i] * (dxhat[j] - m1 - xhat[i * d + j] * m2);
            }
          }
        }
        if (wants_grad(o.inputs[1])) {
          auto& gg = o.inputs[1]->grad_buffer();
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < d; ++j) gg[j] += o.grad[i * d + j] * xhat[i * d + j];
          }
        }
        if (wants_grad(o.inputs[2])) {
          auto& gb = o.inputs[2]->grad_buffer();
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < d; ++j) gb[j] += o.grad[i * d + j];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Indexing and layout

Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids) {
  require_matrix(table, "embedding");
  const auto v = table.shape()[0], d = table.shape()[1];
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw ContractError("embedding: id " + std::to_string(ids[i]) +
                          " outside table of " + std::to_string(v));
    }
    std::copy_n(table.data().data() + ids[i] * d, d, out.data() + i * d);
  }
  std::vector<std::int64_t> idx(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), {table},
                     [d, idx = std::move(idx)](Node& o) {
                       auto& g = o.inputs[0]->grad_buffer();
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t j = 0; j < d; ++j) {
                           g[idx[i] * d + j] += o.grad[i * d + j];
                         }
                       }
                     });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const auto c = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw DimensionError("concat_rows: column mismatch");
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * c);
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return make_result({total, c}, std::move(out), parts,
                     [offsets = std::move(offsets)](Node& o) {
                       for (std::size_t k = 0; k < o.inputs.size(); ++k) {
                         auto& in = o.inputs[k];
                         if (!wants_grad(in)) continue;
                         auto& g = in->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           g[i] += o.grad[offsets[k] + i];
                         }
                       }
                     });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const auto r = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw DimensionError("concat_cols: row mismatch");
    total += p.cols();
  }
  std::vector<double> out(r * total);
  std::vector<std::size_t> col_off;
  std::size_t off = 0;
  for (const auto& p : parts) {
    col_off.push_back(off);
    const auto c = p.cols();
    for (std::size_t i = 0; i < r; ++i) {
      std::copy_n(p.data().data() + i * c, c, out.data() + i * total + off);
    }
    off += c;
  }
  return make_result({r, total}, std::move(out), parts,
                     [r, total, col_off = std::move(col_off)](Node& o) {
                       for (std::size_t k = 0; k < o.inputs.size(); ++k) {
                         auto& in = o.inputs[k];
                         if (!wants_grad(in)) continue;
                         const auto c = in->shape.back();
                         auto& g = in->grad_buffer();
                         for (std::size_t i = 0; i < r; ++i) {
                           for (std::size_t j = 0; j < c; ++j) {
                             g[i * c + j] += o.grad[i * total + col_off[k] + j];
                           }
                         }
                       }
                     });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  const auto r = a.rows(), c = a.cols();
  if (count == 0 || begin + count > r) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", +" +
                         std::to_string(count) + ") out of " + std::to_string(r));
  }
  std::vector<double> out(a.data().begin() + begin * c,
                          a.data().begin() + (begin + count) * c);
  return make_result({count, c}, std::move(out), {a}, [begin, c](Node& o) {
    auto& g = o.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[begin * c + i] += o.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  const auto r = a.rows(), c = a.cols();
  if (count == 0 || begin + count > c) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", +" +
                         std::to_string(count) + ") out of " + std::to_string(c));
  }
  std::vector<double> out(r * count);
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(a.data().data() + i * c + begin, count, out.data() + i * count);
  }
  return make_result({r, count}, std::move(out), {a}, [r, c, begin, count](Node& o) {
    auto& g = o.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < count; ++j) {
        g[i * c + begin + j] += o.grad[i * count + j];
      }
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " +
                         shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a},
                     [](Node& o) { accumulate(*o.inputs[0], o.grad); });
}

Tensor dropout(const Tensor& a, double p, Rng& rng, bool train) {
  if (p < 0.0 || p >= 1.0) {
    throw ContractError("dropout rate must lie in [0, 1)");
  }
  if (!train || p == 0.0) return a;
  std::bernoulli_distribution keep(1.0 - p);
  const double s = 1.0 / (1.0 - p);
  std::vector<double> m(a.numel());
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = keep(rng) ? s : 0.0;
    out[i] = a.at(i) * m[i];
  }
  return make_result(a.shape(), std::move(out), {a}, [m = std::move(m)](Node& o) {
    auto& g = o.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * m[i];
  });
}

// ---------------------------------------------------------------------------
// Reverse pass

std::vector<Node*> topo_order(const Tensor& root) {
  std::vector<Node*> nodes;
  std::vector<Node*> stack{root.node()};
  std::unordered_set<const Node*> seen;
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!n->requires_grad || !seen.insert(n).second) continue;
    nodes.push_back(n);
    for (auto& in : n->inputs) stack.push_back(in.get());
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const Node* a, const Node* b) { return a->id < b->id; });
  return nodes;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss is not connected to any leaf that "
                        "requires grad");
  }
  auto order = topo_order(loss);
  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf()) n->backward(*n);
  }
  // Drop intermediate buffers; only leaves keep gradients.
  for (Node* n : order) {
    if (!n->is_leaf()) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

double grad_check(const std::function<Tensor()>& f,
                  const std::vector<Tensor>& leaves, double h) {
  if (h <= 0.0) throw ContractError("grad_check: step must be positive");
  std::vector<Tensor> ls = leaves;
  for (auto& l : ls) l.zero_grad();
  backward(f());
  double worst = 0.0;
  for (auto& l : ls) {
    std::vector<double> analytic(l.numel(), 0.0);
    if (l.has_grad()) analytic.assign(l.grad().begin(), l.grad().end());
    auto x = l.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double x0 = x[i];
      double fp, fm;
      {
        NoGradGuard ng;
        x[i] = x0 + h;
        fp = f().item();
        x[i] = x0 - h;
        fm = f().item();
        x[i] = x0;
      }
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw DomainError("grad_check: non-finite function value near x");
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double err =
          std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace scst::ad
