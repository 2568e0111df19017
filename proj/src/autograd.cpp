#include "lavig/autograd.hpp"

namespace lavig::ag {

void Parameter::zero_grad() {
  if (grad.shape() != value.shape()) {
    grad = Tensor(value.shape());
  } else {
    grad.fill(0.0f);
  }
}

const Tensor& Var::value() const { return g_->value(id_); }

Var Graph::constant(Tensor t) {
  Node n;
  n.value = std::move(t);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::param(Parameter& p) {
  Node n;
  n.param = &p;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Tensor& Graph::value(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.param ? n.param->value : n.value;
}

Tensor& Graph::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.param) {
    if (n.param->grad.shape() != n.param->value.shape()) n.param->grad = Tensor(n.param->value.shape());
    n.has_grad = true;
    return n.param->grad;
  }
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

Var Graph::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (const auto& in : inputs) {
      if (in.g_ != this) throw std::logic_error("op input belongs to another graph");
      if (requires_grad(in.id_)) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Graph::backward(Var loss) {
  if (!grad_enabled_) throw std::logic_error("backward on a graph built without gradients");
  if (loss.g_ != this) throw std::logic_error("loss belongs to another graph");
  if (value(loss.id_).size() != 1) throw ShapeError("backward needs a single-element loss");
  if (!requires_grad(loss.id_)) return;
  grad(loss.id_)[0] = 1.0f;
  for (int id = loss.id_; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, id);
    // Intermediate gradients are dead once propagated.
    if (!n.param) {
      n.grad = Tensor();
    }
  }
}

}  // namespace lavig::ag
