// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bater/tensor.hpp"

namespace bater {

/// Handle to a node inside one Graph.
struct NodeRef {
  std::size_t index = 0;
};

/// Forward primitives, usable without recording a graph.
Tensor affine_forward(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor relu(const Tensor& x);
/// Row-wise softmax with row-max subtraction.
Tensor softmax_rows(const Tensor& logits);
/// Mean over rows of -log softmax(logits)[label].
double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
/// Per row: max(z_label - max_{i != label} z_i + kappa, 0).
Tensor hinge_margin(const Tensor& logits, std::span<const int> labels, double kappa);
/// Per row: sum over ordered pairs i != j of |z_i - z_j|.
Tensor pairwise_spread(const Tensor& logits);

class Graph;

/// Gradients of a scalar root with respect to the variable leaves of a graph.
class Gradients {
 public:
  /// Throws ContractError when `leaf` is not a variable of the differentiated graph.
  const Tensor& wrt(NodeRef leaf) const&;
  // Copies out of a temporary so the result never dangles.
  Tensor wrt(NodeRef leaf) && { return static_cast<const Gradients&>(*this).wrt(leaf); }

 private:
  friend class Graph;
  std::vector<Tensor> grads_;
  std::vector<bool> present_;
};

/// Define-by-run expression graph over tensors with reverse-mode differentiation.
///
/// Values are computed eagerly as nodes are appended. The graph only grows;
/// `backprop` does not modify it, so one graph can be differentiated repeatedly
/// and from several threads.
class Graph {
 public:
  /// Leaf whose gradient is reported by backprop.
  NodeRef variable(Tensor value);
  /// Leaf treated as fixed data; no gradient is computed for it.
  NodeRef constant(Tensor value);

  /// x[n,d] * W[d,m] + b[m]
  NodeRef affine(NodeRef x, NodeRef w, NodeRef b);
  NodeRef relu(NodeRef x);
  /// Scalar mean cross-entropy; labels must lie in [0, C).
  NodeRef softmax_cross_entropy(NodeRef logits, std::span<const int> labels);
  NodeRef hinge_margin(NodeRef logits, std::span<const int> labels, double kappa);
  NodeRef pairwise_spread(NodeRef logits);

  NodeRef add(NodeRef a, NodeRef b);
  NodeRef sub(NodeRef a, NodeRef b);
  NodeRef mul(NodeRef a, NodeRef b);
  NodeRef scale(NodeRef a, double factor);
  NodeRef shift(NodeRef a, double offset);
  NodeRef exp(NodeRef a);
  NodeRef tanh(NodeRef a);
  /// Clamp to [lo, hi]; gradient passes only strictly inside the interval.
  NodeRef clamp(NodeRef a, double lo, double hi);
  /// Sum of all entries, as a scalar.
  NodeRef reduce_sum(NodeRef a);
  /// Sum over everything but the leading axis, giving a vector of length rows.
  NodeRef row_sum(NodeRef a);
  /// Euclidean norm of all entries, as a scalar.
  NodeRef l2_norm(NodeRef a);

  const Tensor& value(NodeRef node) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  /// d root / d leaf for every variable leaf. `root` must hold exactly one value.
  Gradients backprop(NodeRef root) const;

 private:
  enum class Op {
    variable, constant, affine, relu, softmax_xent, hinge, spread, add, sub, mul, scale, shift, exp,
    tanh, clamp, reduce_sum, row_sum, l2_norm
  };
  struct Node {
    Op op;
    std::vector<std::size_t> inputs;
    Tensor value;
    bool needs_grad = false;
    double p0 = 0.0;
    double p1 = 0.0;
    std::vector<int> labels;
    Tensor aux;
  };

  NodeRef push(Node node);
  const Node& at(NodeRef ref) const;
  void backward_node(const Node& node, const Tensor& grad, std::vector<Tensor>& adjoint,
                     std::vector<bool>& touched) const;

  std::vector<Node> nodes_;
};

}  // namespace bater
