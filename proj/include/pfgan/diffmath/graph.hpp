#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pfgan/diffmath/tensor.hpp"

namespace pfgan {

class Graph;

// Handle to a node of a Graph. Cheap to copy; only valid while its graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph* graph() const noexcept { return graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  // Convenience for 1x1 nodes.
  double item() const { return value()[0]; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so the append
// order is a topological order and backward() is a single reverse sweep.
//
// A graph built with record = false keeps values only; it is used for
// inference and for the finite-difference probes of grad_check.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  Var constant(Tensor value, const char* label = "constant") {
    return push(std::move(value), false, label, {}, nullptr);
  }

  // Leaf bound to a trainable parameter; backward() accumulates into p.grad.
  // Binding the same Param twice returns the same node.
  Var param(Param& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
    Var v = push(p.value, record_, p.name.c_str(), {}, &p);
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  // Copies the value and cuts the gradient path.
  Var detach(Var v) { return constant(v.value(), "detach"); }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }

  // Gradient of the last backward() with respect to node v, or nullptr when
  // nothing flowed into it.
  const Tensor* grad(Var v) const {
    const Node& n = nodes_[v.id()];
    return n.has_grad ? &n.grad : nullptr;
  }

  bool needs_grad(std::size_t id) const noexcept { return nodes_[id].needs_grad; }
  const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }

  // Gradient accumulator of node id, zero-initialized on first use.
  Tensor& grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor(n.value.shape(), std::vector<double>(n.value.size(), 0.0));
      n.has_grad = true;
    }
    return n.grad;
  }

  // Appends an operation node. The backward closure is dropped when no
  // input needs a gradient. Throws NumericError on non-finite output.
  Var make(Tensor value, std::initializer_list<Var> inputs, const char* label, BackwardFn fn) {
    bool needs = false;
    if (record_) {
      for (const Var& in : inputs) needs = needs || nodes_[in.id()].needs_grad;
    }
    return push(std::move(value), needs, label, needs ? std::move(fn) : BackwardFn{}, nullptr);
  }

  Var make(Tensor value, std::span<const Var> inputs, const char* label, BackwardFn fn) {
    bool needs = false;
    if (record_) {
      for (const Var& in : inputs) needs = needs || nodes_[in.id()].needs_grad;
    }
    return push(std::move(value), needs, label, needs ? std::move(fn) : BackwardFn{}, nullptr);
  }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape backwards. Parameter
  // gradients are added to Param::grad (not overwritten).
  void backward(Var loss) {
    if (!record_) throw ConfigError("backward() on a graph built without recording");
    if (loss.value().size() != 1) throw InputError("backward() requires a 1x1 loss");
    for (auto& n : nodes_) {
      if (n.has_grad) n.grad.fill(0.0);
    }
    grad_ref(loss.id())[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad) continue;
      if (n.param != nullptr) {
        auto& pg = n.param->grad.values();
        const auto& g = n.grad.values();
        for (std::size_t k = 0; k < g.size(); ++k) pg[k] += g[k];
      } else if (n.backward) {
        n.backward(*this, i);
      }
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    bool has_grad = false;
    BackwardFn backward;
    Param* param = nullptr;
    const char* label = "";
  };

  Var push(Tensor value, bool needs, const char* label, BackwardFn fn, Param* p) {
    const std::size_t id = nodes_.size();
    if (!value.all_finite()) {
      throw NumericError("non-finite value at graph node #" + std::to_string(id) + " (" +
                         label + ")");
    }
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.needs_grad = needs;
    n.backward = std::move(fn);
    n.param = p;
    n.label = label;
    return Var(this, id);
  }

  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<const Param*, std::size_t> param_nodes_;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }

}  // namespace pfgan
