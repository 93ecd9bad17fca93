// SPDX-License-Identifier: Apache-2.0
#include "bater/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "bater/errors.hpp"
#include "bater/kernels.hpp"

namespace bater {
namespace {

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + " must be a matrix, got " + shape_string(t.shape()));
}

void check_labels(const Tensor& logits, std::span<const int> labels) {
  require_matrix(logits, "logits");
  if (labels.size() != logits.rows())
    throw DimensionError("label count " + std::to_string(labels.size()) + " does not match " +
                         std::to_string(logits.rows()) + " logit rows");
  const auto classes = static_cast<int>(logits.cols());
  for (int y : labels)
    if (y < 0 || y >= classes)
      throw IndexError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
}

// Index of the largest entry other than `skip`; ties resolve to the lowest index.
std::size_t runner_up(std::span<const double> row, std::size_t skip) {
  std::size_t best = skip == 0 ? 1 : 0;
  for (std::size_t i = 0; i < row.size(); ++i)
    if (i != skip && row[i] > row[best]) best = i;
  return best;
}

void add_into(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

Tensor affine_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_matrix(x, "affine input");
  require_matrix(w, "affine weight");
  if (x.cols() != w.rows())
    throw DimensionError("affine: input " + shape_string(x.shape()) + " incompatible with weight " +
                         shape_string(w.shape()));
  if (b.rank() != 1 || b.size() != w.cols())
    throw DimensionError("affine: bias " + shape_string(b.shape()) + " incompatible with weight " +
                         shape_string(w.shape()));
  const std::size_t n = x.rows(), d = x.cols(), m = w.cols();
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i) std::copy(b.raw(), b.raw() + m, out.raw() + i * m);
  kernels::gemm_nn(x.raw(), w.raw(), out.raw(), n, d, m, true);
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor softmax_rows(const Tensor& logits) {
  require_matrix(logits, "logits");
  Tensor out = logits;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double top = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) total += (v = std::exp(v - top));
    for (double& v : row) v /= total;
  }
  return out;
}

double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const double top = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - top);
    total += top + std::log(sum) - row[static_cast<std::size_t>(labels[r])];
  }
  return total / static_cast<double>(logits.rows());
}

Tensor hinge_margin(const Tensor& logits, std::span<const int> labels, double kappa) {
  check_labels(logits, labels);
  if (logits.cols() < 2) throw DimensionError("hinge margin needs at least two classes");
  Tensor out(Shape{logits.rows()});
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const auto y = static_cast<std::size_t>(labels[r]);
    out[r] = std::max(row[y] - row[runner_up(row, y)] + kappa, 0.0);
  }
  return out;
}

Tensor pairwise_spread(const Tensor& logits) {
  require_matrix(logits, "logits");
  Tensor out(Shape{logits.rows()});
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    double total = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i)
      for (std::size_t j = 0; j < row.size(); ++j)
        if (i != j) total += std::abs(row[i] - row[j]);
    out[r] = total;
  }
  return out;
}

const Tensor& Gradients::wrt(NodeRef leaf) const& {
  if (leaf.index >= present_.size() || !present_[leaf.index])
    throw ContractError("node " + std::to_string(leaf.index) + " is not a variable of the differentiated graph");
  return grads_[leaf.index];
}

NodeRef Graph::push(Node node) {
  if (!node.value.all_finite()) throw NumericError("non-finite value produced by graph node " + std::to_string(nodes_.size()));
  for (auto in : node.inputs) node.needs_grad = node.needs_grad || nodes_[in].needs_grad;
  nodes_.push_back(std::move(node));
  return NodeRef{nodes_.size() - 1};
}

const Graph::Node& Graph::at(NodeRef ref) const {
  if (ref.index >= nodes_.size()) throw IndexError("node " + std::to_string(ref.index) + " does not exist");
  return nodes_[ref.index];
}

const Tensor& Graph::value(NodeRef node) const { return at(node).value; }

NodeRef Graph::variable(Tensor value) {
  Node node{Op::variable, {}, std::move(value)};
  node.needs_grad = true;
  return push(std::move(node));
}

NodeRef Graph::constant(Tensor value) { return push(Node{Op::constant, {}, std::move(value)}); }

NodeRef Graph::affine(NodeRef x, NodeRef w, NodeRef b) {
  return push(Node{Op::affine, {x.index, w.index, b.index}, affine_forward(value(x), value(w), value(b))});
}

NodeRef Graph::relu(NodeRef x) { return push(Node{Op::relu, {x.index}, bater::relu(value(x))}); }

NodeRef Graph::softmax_cross_entropy(NodeRef logits, std::span<const int> labels) {
  const Tensor& z = value(logits);
  Node node{Op::softmax_xent, {logits.index}, Tensor::scalar(bater::softmax_cross_entropy(z, labels))};
  node.labels.assign(labels.begin(), labels.end());
  node.aux = softmax_rows(z);
  return push(std::move(node));
}

NodeRef Graph::hinge_margin(NodeRef logits, std::span<const int> labels, double kappa) {
  Node node{Op::hinge, {logits.index}, bater::hinge_margin(value(logits), labels, kappa)};
  node.labels.assign(labels.begin(), labels.end());
  node.p0 = kappa;
  return push(std::move(node));
}

NodeRef Graph::pairwise_spread(NodeRef logits) {
  return push(Node{Op::spread, {logits.index}, bater::pairwise_spread(value(logits))});
}

NodeRef Graph::add(NodeRef a, NodeRef b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb)) throw DimensionError("add: " + shape_string(va.shape()) + " vs " + shape_string(vb.shape()));
  Tensor out = va;
  add_into(out, vb);
  return push(Node{Op::add, {a.index, b.index}, std::move(out)});
}

NodeRef Graph::sub(NodeRef a, NodeRef b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb)) throw DimensionError("sub: " + shape_string(va.shape()) + " vs " + shape_string(vb.shape()));
  Tensor out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
  return push(Node{Op::sub, {a.index, b.index}, std::move(out)});
}

NodeRef Graph::mul(NodeRef a, NodeRef b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb)) throw DimensionError("mul: " + shape_string(va.shape()) + " vs " + shape_string(vb.shape()));
  Tensor out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
  return push(Node{Op::mul, {a.index, b.index}, std::move(out)});
}

NodeRef Graph::scale(NodeRef a, double factor) {
  Tensor out = value(a);
  for (double& v : out.data()) v *= factor;
  Node node{Op::scale, {a.index}, std::move(out)};
  node.p0 = factor;
  return push(std::move(node));
}

NodeRef Graph::shift(NodeRef a, double offset) {
  Tensor out = value(a);
  for (double& v : out.data()) v += offset;
  return push(Node{Op::shift, {a.index}, std::move(out)});
}

NodeRef Graph::exp(NodeRef a) {
  Tensor out = value(a);
  for (double& v : out.data()) v = std::exp(v);
  return push(Node{Op::exp, {a.index}, std::move(out)});
}

NodeRef Graph::tanh(NodeRef a) {
  Tensor out = value(a);
  for (double& v : out.data()) v = std::tanh(v);
  return push(Node{Op::tanh, {a.index}, std::move(out)});
}

NodeRef Graph::clamp(NodeRef a, double lo, double hi) {
  if (!(lo <= hi)) throw ContractError("clamp bounds out of order");
  Tensor out = value(a);
  for (double& v : out.data()) v = std::clamp(v, lo, hi);
  Node node{Op::clamp, {a.index}, std::move(out)};
  node.p0 = lo;
  node.p1 = hi;
  return push(std::move(node));
}

NodeRef Graph::reduce_sum(NodeRef a) {
  double total = 0.0;
  for (double v : value(a).data()) total += v;
  return push(Node{Op::reduce_sum, {a.index}, Tensor::scalar(total)});
}

NodeRef Graph::row_sum(NodeRef a) {
  const Tensor& va = value(a);
  Tensor out(Shape{va.rows()});
  for (std::size_t r = 0; r < va.rows(); ++r) {
    double total = 0.0;
    for (double v : va.row(r)) total += v;
    out[r] = total;
  }
  return push(Node{Op::row_sum, {a.index}, std::move(out)});
}

NodeRef Graph::l2_norm(NodeRef a) {
  double total = 0.0;
  for (double v : value(a).data()) total += v * v;
  return push(Node{Op::l2_norm, {a.index}, Tensor::scalar(std::sqrt(total))});
}

Gradients Graph::backprop(NodeRef root) const {
  const Node& top = at(root);
  if (top.value.size() != 1)
    throw ContractError("backprop root must be scalar, got shape " + shape_string(top.value.shape()));

  std::vector<Tensor> adjoint(root.index + 1);
  std::vector<bool> touched(root.index + 1, false);
  adjoint[root.index] = Tensor(top.value.shape(), 1.0);
  touched[root.index] = true;

  for (std::size_t i = root.index + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!touched[i] || !node.needs_grad) continue;
    if (node.op == Op::variable || node.op == Op::constant) continue;
    backward_node(node, adjoint[i], adjoint, touched);
    if (node.op != Op::variable) adjoint[i] = Tensor();
  }

  Gradients out;
  out.grads_.resize(nodes_.size());
  out.present_.assign(nodes_.size(), false);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op != Op::variable) continue;
    out.present_[i] = true;
    out.grads_[i] = (i <= root.index && touched[i]) ? std::move(adjoint[i]) : Tensor(nodes_[i].value.shape(), 0.0);
  }
  return out;
}

void Graph::backward_node(const Node& node, const Tensor& grad, std::vector<Tensor>& adjoint,
                          std::vector<bool>& touched) const {
  // Accumulate `contribution` into the adjoint of input slot `slot`.
  auto accumulate = [&](std::size_t slot, Tensor contribution) {
    const std::size_t in = node.inputs[slot];
    if (!touched[in]) {
      adjoint[in] = std::move(contribution);
      touched[in] = true;
    } else {
      add_into(adjoint[in], contribution);
    }
  };
  auto wants = [&](std::size_t slot) { return nodes_[node.inputs[slot]].needs_grad; };
  auto input = [&](std::size_t slot) -> const Tensor& { return nodes_[node.inputs[slot]].value; };

  switch (node.op) {
    case Op::variable:
    case Op::constant:
      return;
    case Op::affine: {
      const Tensor& x = input(0);
      const Tensor& w = input(1);
      const std::size_t n = x.rows(), d = x.cols(), m = w.cols();
      if (wants(0)) {
        Tensor gx(x.shape());
        kernels::gemm_nt(grad.raw(), w.raw(), gx.raw(), n, m, d);
        accumulate(0, std::move(gx));
      }
      if (wants(1)) {
        Tensor gw(w.shape());
        kernels::gemm_tn(x.raw(), grad.raw(), gw.raw(), n, d, m);
        accumulate(1, std::move(gw));
      }
      if (wants(2)) {
        Tensor gb(Shape{m}, 0.0);
        for (std::size_t i = 0; i < n; ++i) kernels::axpy(1.0, grad.raw() + i * m, gb.raw(), m);
        accumulate(2, std::move(gb));
      }
      return;
    }
    case Op::relu: {
      Tensor g = grad;
      const Tensor& x = input(0);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!(x[i] > 0.0)) g[i] = 0.0;
      accumulate(0, std::move(g));
      return;
    }
    case Op::softmax_xent: {
      Tensor g = node.aux;
      const double upstream = grad[0] / static_cast<double>(g.rows());
      for (std::size_t r = 0; r < g.rows(); ++r) g.at(r, static_cast<std::size_t>(node.labels[r])) -= 1.0;
      for (double& v : g.data()) v *= upstream;
      accumulate(0, std::move(g));
      return;
    }
    case Op::hinge: {
      const Tensor& z = input(0);
      Tensor g(z.shape(), 0.0);
      for (std::size_t r = 0; r < z.rows(); ++r) {
        if (!(node.value[r] > 0.0)) continue;
        const auto y = static_cast<std::size_t>(node.labels[r]);
        g.at(r, y) += grad[r];
        g.at(r, runner_up(z.row(r), y)) -= grad[r];
      }
      accumulate(0, std::move(g));
      return;
    }
    case Op::spread: {
      const Tensor& z = input(0);
      Tensor g(z.shape(), 0.0);
      for (std::size_t r = 0; r < z.rows(); ++r) {
        auto row = z.row(r);
        for (std::size_t i = 0; i < row.size(); ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < row.size(); ++j) {
            if (i == j) continue;
            s += row[i] > row[j] ? 1.0 : row[i] < row[j] ? -1.0 : 0.0;
          }
          g.at(r, i) = 2.0 * s * grad[r];
        }
      }
      accumulate(0, std::move(g));
      return;
    }
    case Op::add:
      if (wants(0)) accumulate(0, grad);
      if (wants(1)) accumulate(1, grad);
      return;
    case Op::sub:
      if (wants(0)) accumulate(0, grad);
      if (wants(1)) {
        Tensor g = grad;
        for (double& v : g.data()) v = -v;
        accumulate(1, std::move(g));
      }
      return;
    case Op::mul: {
      if (wants(0)) {
        Tensor g = grad;
        const Tensor& other = input(1);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= other[i];
        accumulate(0, std::move(g));
      }
      if (wants(1)) {
        Tensor g = grad;
        const Tensor& other = input(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= other[i];
        accumulate(1, std::move(g));
      }
      return;
    }
    case Op::scale: {
      Tensor g = grad;
      for (double& v : g.data()) v *= node.p0;
      accumulate(0, std::move(g));
      return;
    }
    case Op::shift:
      accumulate(0, grad);
      return;
    case Op::exp: {
      Tensor g = grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= node.value[i];
      accumulate(0, std::move(g));
      return;
    }
    case Op::tanh: {
      Tensor g = grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - node.value[i] * node.value[i];
      accumulate(0, std::move(g));
      return;
    }
    case Op::clamp: {
      Tensor g = grad;
      const Tensor& x = input(0);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!(x[i] > node.p0 && x[i] < node.p1)) g[i] = 0.0;
      accumulate(0, std::move(g));
      return;
    }
    case Op::reduce_sum:
      accumulate(0, Tensor(input(0).shape(), grad[0]));
      return;
    case Op::row_sum: {
      const Tensor& x = input(0);
      Tensor g(x.shape());
      const std::size_t width = x.cols();
      for (std::size_t r = 0; r < x.rows(); ++r)
        std::fill(g.raw() + r * width, g.raw() + (r + 1) * width, grad[r]);
      accumulate(0, std::move(g));
      return;
    }
    case Op::l2_norm: {
      const Tensor& x = input(0);
      const double norm = node.value[0];
      Tensor g(x.shape(), 0.0);
      if (norm > 0.0)
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad[0] * x[i] / norm;
      accumulate(0, std::move(g));
      return;
    }
  }
}

}  // namespace bater
