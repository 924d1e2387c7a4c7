#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ssimfuse/tensor.hpp"

namespace ssimfuse {

using NodeId = std::size_t;

template <class T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <class T>
struct Var {
  Graph<T>* graph = nullptr;
  NodeId id = 0;

  Tensor<T>& tensor() const { return graph->node(id).value; }
  const Shape& shape() const { return tensor().shape(); }
  std::span<const T> value() const { return std::as_const(tensor()).data(); }
  std::span<const T> grad() const { return std::as_const(tensor()).grad(); }
};

/// Tape of operations recorded in topological order. Node ids grow
/// monotonically and every input id is smaller than the id of its consumer,
/// so a reverse sweep over ids is a valid reverse topological traversal.
template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, NodeId)>;

  struct Node {
    std::string op;
    std::vector<NodeId> inputs;
    Tensor<T> value;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = false, std::string name = "leaf") {
    nodes_.push_back(Node{std::move(name), {}, std::move(value), requires_grad, {}});
    return Var<T>{this, nodes_.size() - 1};
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false, "const"); }

  /// Appends an op node. `fn` is stored only when some input needs a gradient.
  Var<T> record(std::string op, std::vector<NodeId> inputs, Tensor<T> value, BackwardFn fn) {
    const NodeId self = nodes_.size();
    bool needs = false;
    for (NodeId in : inputs) {
      if (in >= self) throw InternalError("graph cycle: node " + op + " consumes a later node");
      needs = needs || nodes_[in].requires_grad;
    }
    nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(value), needs,
                          needs ? std::move(fn) : BackwardFn{}});
    return Var<T>{this, self};
  }

  Node& node(NodeId id) { return nodes_.at(id); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of `id` if that node participates in differentiation,
  /// otherwise an empty span. Op backward functions accumulate into it.
  std::span<T> grad_target(NodeId id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return {};
    return n.value.ensure_grad();
  }

  /// Reverse sweep from `root`. A scalar root is seeded with 1; any other root
  /// needs an explicit seed of the same shape. Gradients accumulate.
  void backward(Var<T> root, const Tensor<T>* seed = nullptr) {
    Node& r = node(root.id);
    if (seed == nullptr && r.value.size() != 1)
      throw ArgumentError("backward from non-scalar node '" + r.op + "' requires a seed");
    if (seed != nullptr) require_same_shape(seed->shape(), r.value.shape(), "backward seed");
    if (!r.requires_grad) return;

    auto g = r.value.ensure_grad();
    if (seed == nullptr) {
      g[0] += T(1);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*seed)[i];
    }

    std::vector<char> reachable(root.id + 1, 0);
    reachable[root.id] = 1;
    for (NodeId id = root.id + 1; id-- > 0;) {
      if (!reachable[id]) continue;
      Node& n = nodes_[id];
      if (!n.requires_grad) continue;
      if (n.backward) {
        n.value.ensure_grad();
        n.backward(*this, id);
      }
      for (NodeId in : n.inputs) reachable[in] = 1;
    }
  }

  void zero_grad() {
    for (auto& n : nodes_) n.value.clear_grad();
  }

 private:
  std::deque<Node> nodes_;  // stable addresses: Var::tensor() references survive new nodes
};

}  // namespace ssimfuse
