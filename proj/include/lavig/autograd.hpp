#pragma once

// Tape-based reverse-mode differentiation over coarse tensor ops.
//
// A Graph records every op applied during one forward pass; backward() walks
// the tape in reverse. Parameters live outside the graph and receive their
// gradients in place, so several graphs (steps) can share one parameter set.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lavig/tensor.hpp"

namespace lavig::ag {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // lazily sized; zeroed by the optimizer

  void zero_grad();
};

class Graph;

class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Graph& graph() const { return *g_; }
  int id() const { return id_; }
  bool valid() const { return g_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, int id) : g_(g), id_(id) {}
  Graph* g_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t);
  Var param(Parameter& p);

  const Tensor& value(int id) const;
  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor& grad(int id);
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  bool grad_enabled() const { return grad_enabled_; }

  /// Register an op output. `fn` runs during backward when the output has a
  /// gradient; it must read grad(self) and accumulate into input gradients.
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  /// Seed d(loss)/d(loss) = 1 for a single-element loss and propagate.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Parameter* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

}  // namespace lavig::ag
