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

#ifndef SCST_AUTODIFF_HPP
#define SCST_AUTODIFF_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "scst/errors.hpp"

namespace scst::ad {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

/// Thrown on incompatible operand shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an operation is mathematically undefined for its input
/// (e.g. softmax over a row with no live entries).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

using ContractError = scst::ContractError;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

/// One recorded value on the tape. Nodes are created in increasing `id`
/// order, so every node's inputs have smaller ids than the node itself.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<NodePtr> inputs;
  BackwardFn backward;  // null for leaves

  bool is_leaf() const { return !backward; }
  /// Returns the gradient buffer, allocating zeros on first use.
  std::vector<double>& grad_buffer();
};

/// Dense row-major tensor handle. Copies share the underlying node; use
/// `clone()` for a deep copy of the value.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  /// Product of all leading extents; a 1-D tensor is a single row.
  std::size_t rows() const;
  /// Extent of the last axis.
  std::size_t cols() const;

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r);

  double item() const;
  double at(std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const {
    return node_->value[r * cols() + c];
  }

  /// Detached deep copy (a new leaf).
  Tensor clone(bool requires_grad = false) const;
  Tensor detach() const { return clone(false); }

  Node* node() const { return node_.get(); }
  const NodePtr& node_ptr() const { return node_; }

 private:
  NodePtr node_;
};

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

/// Records a custom primitive. `backward` receives the output node and must
/// accumulate into `out.inputs[i]->grad_buffer()` for inputs that require
/// gradients. When recording is off or no input requires grad the result is
/// a plain leaf.
Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs, BackwardFn backward);

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a · bᵀ without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
/// Adds a length-`cols` vector to every row.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);

// Reductions (to a scalar).
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Σ a ⊙ w for a constant weight array `w` of the same size.
Tensor weighted_sum(const Tensor& a, std::span<const double> w);

// Row-wise normalizers over the last axis.
Tensor log_softmax(const Tensor& logits);
/// Softmax where `mask[i] == 0` marks a dead entry (output exactly 0).
/// An empty mask means every entry is live.
Tensor masked_softmax(const Tensor& logits, std::span<const std::uint8_t> mask);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-6);

// Indexing and layout.
Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor reshape(const Tensor& a, Shape shape);

/// Inverted dropout: keeps each entry with probability 1-p and scales kept
/// entries by 1/(1-p). Identity when `!train` or `p == 0`.
Tensor dropout(const Tensor& a, double p, Rng& rng, bool train);

/// Runs reverse-mode accumulation from a scalar `loss`. Leaf gradients
/// accumulate across calls; intermediate gradients are reset each call.
void backward(const Tensor& loss);

/// Nodes reachable from `root` in recording order (inputs first).
std::vector<Node*> topo_order(const Tensor& root);

/// Maximum over all coordinates of all `leaves` of
/// |analytic - central difference| / max(1, |analytic|).
/// `f` must rebuild the graph from the current leaf values on every call.
double grad_check(const std::function<Tensor()>& f,
                  const std::vector<Tensor>& leaves, double h = 1e-4);

}  // namespace scst::ad

#endif  // SCST_AUTODIFF_HPP
