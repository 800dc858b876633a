// graph.hpp - reverse-mode autodiff tape over Tensor<Scalar>
//
// One Graph instance is built per training step and discarded. Nodes are
// appended in execution order, so node ids already form a topological order
// and the backward sweep is a single reverse pass that touches each node
// once. Every op validates shapes and rejects non-finite results instead of
// propagating them.
#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "qlstm/tensor.hpp"

namespace qlstm {

using NodeId = std::int32_t;

template <class Scalar>
class Graph {
 public:
  using T = Tensor<Scalar>;

  NodeId leaf(T value, bool requires_grad) {
    require_finite(value, "leaf");
    return push(std::move(value), {}, nullptr, requires_grad);
  }
  NodeId constant(T value) { return leaf(std::move(value), false); }

  // Generic append hook; quantizer and other extension ops use this.
  // The backward fn receives the graph and the node's own id, and is expected
  // to call accumulate() on the node's inputs.
  NodeId apply(T value, std::vector<NodeId> inputs,
               std::function<void(Graph&, NodeId)> backward, const char* op) {
    require_finite(value, op);
    bool rg = false;
    for (NodeId i : inputs) rg = rg || node(i).requires_grad;
    return push(std::move(value), std::move(inputs), rg ? std::move(backward) : nullptr,
                rg);
  }

  const T& value(NodeId id) const { return node(id).value; }
  const T& grad(NodeId id) const {
    const Node& n = node(id);
    if (!n.grad_set)
      throw NumericError("gradient requested for a node backward() never reached");
    return n.grad;
  }
  bool has_grad(NodeId id) const { return node(id).grad_set; }
  bool requires_grad(NodeId id) const { return node(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  void accumulate(NodeId id, const T& g) {
    Node& n = node(id);
    if (!n.requires_grad) return;
    if (!n.value.same_shape(g)) throw ShapeError("gradient shape mismatch");
    require_finite(g, "backward");
    if (!n.grad_set) {
      n.grad = g;
      n.grad_set = true;
    } else {
      n.grad.array() += g.array();
    }
  }

  // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. root must be a
  // scalar (the training loss).
  void backward(NodeId root) {
    Node& r = node(root);
    if (r.value.size() != 1) throw ShapeError("backward root must be scalar");
    if (!r.requires_grad)
      throw NumericError("backward on a graph with no differentiable leaves");
    r.grad = T::scalar(Scalar(1));
    r.grad_set = true;
    for (NodeId id = root; id >= 0; --id) {
      Node& n = node(id);
      if (n.grad_set && n.backward) n.backward(*this, id);
    }
  }

  // ---- arithmetic ops -----------------------------------------------------

  NodeId matmul(NodeId a, NodeId b) {
    T out = qlstm::matmul(value(a), value(b));
    return apply(std::move(out), {a, b},
                 [a, b](Graph& g, NodeId self) {
                   const T& up = g.grad(self);
                   if (g.requires_grad(a)) g.accumulate(a, qlstm::matmul_nt(up, g.value(b)));
                   if (g.requires_grad(b)) g.accumulate(b, qlstm::matmul_tn(g.value(a), up));
                 },
                 "matmul");
  }

  // a * b^T; gradients: da = up * b, db = up^T * a.
  NodeId matmul_nt(NodeId a, NodeId b) {
    T out = qlstm::matmul_nt(value(a), value(b));
    return apply(std::move(out), {a, b},
                 [a, b](Graph& g, NodeId self) {
                   const T& up = g.grad(self);
                   if (g.requires_grad(a)) g.accumulate(a, qlstm::matmul(up, g.value(b)));
                   if (g.requires_grad(b)) g.accumulate(b, qlstm::matmul_tn(up, g.value(a)));
                 },
                 "matmul_nt");
  }

  NodeId add(NodeId a, NodeId b) {
    return apply(qlstm::add(value(a), value(b)), {a, b},
                 [a, b](Graph& g, NodeId self) {
                   g.accumulate(a, g.grad(self));
                   g.accumulate(b, g.grad(self));
                 },
                 "add");
  }

  NodeId sub(NodeId a, NodeId b) {
    return apply(qlstm::sub(value(a), value(b)), {a, b},
                 [a, b](Graph& g, NodeId self) {
                   g.accumulate(a, g.grad(self));
                   g.accumulate(b, scale(g.grad(self), Scalar(-1)));
                 },
                 "sub");
  }

  NodeId mul(NodeId a, NodeId b) {
    return apply(qlstm::mul(value(a), value(b)), {a, b},
                 [a, b](Graph& g, NodeId self) {
                   const T& up = g.grad(self);
                   if (g.requires_grad(a)) g.accumulate(a, qlstm::mul(up, g.value(b)));
                   if (g.requires_grad(b)) g.accumulate(b, qlstm::mul(up, g.value(a)));
                 },
                 "mul");
  }

  NodeId add_rowvec(NodeId a, NodeId v) {
    return apply(qlstm::add_rowvec(value(a), value(v)), {a, v},
                 [a, v](Graph& g, NodeId self) {
                   const T& up = g.grad(self);
                   g.accumulate(a, up);
                   if (g.requires_grad(v)) {
                     T gv({up.cols()});
                     Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(gv.data(),
                                                                          gv.size()) =
                         up.matrix().colwise().sum().transpose();
                     g.accumulate(v, gv);
                   }
                 },
                 "add_rowvec");
  }

  NodeId sigmoid(NodeId x) {
    T out = qlstm::sigmoid(value(x));
    return apply(out, {x},
                 [x, out](Graph& g, NodeId self) {
                   T gx(out.shape(),
                        g.grad(self).array() * out.array() * (1 - out.array()));
                   g.accumulate(x, gx);
                 },
                 "sigmoid");
  }

  NodeId tanh(NodeId x) {
    T out = qlstm::tanh(value(x));
    return apply(out, {x},
                 [x, out](Graph& g, NodeId self) {
                   T gx(out.shape(),
                        g.grad(self).array() * (1 - out.array().square()));
                   g.accumulate(x, gx);
                 },
                 "tanh");
  }

  NodeId concat_cols(NodeId a, NodeId b) {
    Index ca = value(a).cols();
    return apply(qlstm::concat_cols(value(a), value(b)), {a, b},
                 [a, b, ca](Graph& g, NodeId self) {
                   const T& up = g.grad(self);
                   g.accumulate(a, qlstm::slice_cols(up, 0, ca));
                   g.accumulate(b, qlstm::slice_cols(up, ca, up.cols() - ca));
                 },
                 "concat_cols");
  }

  NodeId slice_cols(NodeId x, Index begin, Index count) {
    return apply(qlstm::slice_cols(value(x), begin, count), {x},
                 [x, begin, count](Graph& g, NodeId self) {
                   if (!g.requires_grad(x)) return;
                   T gx(g.value(x).shape());
                   gx.matrix().middleCols(begin, count) = g.grad(self).matrix();
                   g.accumulate(x, gx);
                 },
                 "slice_cols");
  }

  // Inverted dropout: mask elements with probability p, scale survivors by
  // 1/(1-p). Identity outside training (returns the input node unchanged).
  NodeId dropout(NodeId x, double p, Rng& rng, bool training) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0,1)");
    if (!training || p == 0.0) return x;
    const T& xv = value(x);
    T mask(xv.shape());
    const Scalar keep = static_cast<Scalar>(1.0 / (1.0 - p));
    for (Index i = 0; i < mask.size(); ++i)
      mask[i] = rng.uniform() < p ? Scalar(0) : keep;
    return apply(qlstm::mul(xv, mask), {x},
                 [x, mask](Graph& g, NodeId self) {
                   g.accumulate(x, qlstm::mul(g.grad(self), mask));
                 },
                 "dropout");
  }

  // Stack same-width matrices vertically (e.g. per-step logits into one
  // [T*B x C] block for the loss).
  NodeId concat_rows(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows of nothing");
    Index rows = 0;
    const Index cols = value(parts[0]).cols();
    for (NodeId p : parts) {
      if (value(p).cols() != cols) throw ShapeError("concat_rows width mismatch");
      rows += value(p).rows();
    }
    T out({rows, cols});
    Index at = 0;
    for (NodeId p : parts) {
      out.matrix().middleRows(at, value(p).rows()) = value(p).matrix();
      at += value(p).rows();
    }
    return apply(std::move(out), parts,
                 [parts](Graph& g, NodeId self) {
                   const T& up = g.grad(self);
                   Index at2 = 0;
                   for (NodeId p : parts) {
                     Index r = g.value(p).rows();
                     T gp({r, up.cols()});
                     gp.matrix() = up.matrix().middleRows(at2, r);
                     g.accumulate(p, gp);
                     at2 += r;
                   }
                 },
                 "concat_rows");
  }

  NodeId sum(NodeId x) {
    return apply(T::scalar(value(x).array().sum()), {x},
                 [x](Graph& g, NodeId self) {
                   if (!g.requires_grad(x)) return;
                   g.accumulate(x, T::full(g.value(x).shape(), g.grad(self)[0]));
                 },
                 "sum");
  }

  // Mean negative log-softmax of the target class, stabilized by row-max
  // subtraction. logits: [N x C], targets: N class indices.
  NodeId cross_entropy(NodeId logits, const std::vector<int>& targets) {
    const T& lv = value(logits);
    if (lv.rank() != 2 || static_cast<Index>(targets.size()) != lv.rows())
      throw ShapeError("cross_entropy expects [N x C] logits and N targets");
    const Index n = lv.rows(), c = lv.cols();
    T softmax({n, c});
    double loss = 0;
    for (Index i = 0; i < n; ++i) {
      if (targets[static_cast<std::size_t>(i)] < 0 ||
          targets[static_cast<std::size_t>(i)] >= c)
        throw ShapeError("cross_entropy target out of range");
      auto row = lv.matrix().row(i);
      Scalar m = row.maxCoeff();
      auto shifted = (row.array() - m).exp();
      Scalar z = shifted.sum();
      softmax.matrix().row(i) = shifted / z;
      loss -= std::log(static_cast<double>(
          softmax.at(i, targets[static_cast<std::size_t>(i)])));
    }
    loss /= static_cast<double>(n);
    return apply(T::scalar(static_cast<Scalar>(loss)), {logits},
                 [logits, softmax, targets](Graph& g, NodeId self) {
                   if (!g.requires_grad(logits)) return;
                   T gx = softmax;
                   const Index n2 = gx.rows();
                   for (Index i = 0; i < n2; ++i)
                     gx.at(i, targets[static_cast<std::size_t>(i)]) -= Scalar(1);
                   Scalar s = g.grad(self)[0] / static_cast<Scalar>(n2);
                   gx.array() *= s;
                   g.accumulate(logits, gx);
                 },
                 "cross_entropy");
  }

 private:
  struct Node {
    T value;
    T grad;
    std::vector<NodeId> inputs;
    std::function<void(Graph&, NodeId)> backward;
    bool requires_grad = false;
    bool grad_set = false;
  };

  NodeId push(T value, std::vector<NodeId> inputs,
              std::function<void(Graph&, NodeId)> backward, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  Node& node(NodeId id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const Node& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  std::vector<Node> nodes_;
};

}  // namespace qlstm
