#include "pvudf/nn/tape.hpp"

#include <stdexcept>

namespace pvudf::nn {

const Tensor& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) { return record(std::move(value), false, nullptr); }

Var Tape::constant_ref(const Tensor& value) {
  Node node;
  node.external = &value;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::input(Tensor value) {
  return record(std::move(value), true, [](Tape&) {});
}

Var Tape::parameter(ParameterStore& store, const std::string& name) {
  Parameter& p = store.at(name);
  Node node;
  node.external = &p.value;
  node.requires_grad = true;
  const std::size_t id = nodes_.size();
  node.backward = [&p, id](Tape& tape) {
    const Tensor& g = tape.grad(id);
    for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
    p.grad_ready = true;
  };
  nodes_.push_back(std::move(node));
  return Var(this, id);
}

Var Tape::record(Tensor value, bool requires_grad, Backward backward) {
  if (consumed_) throw std::logic_error("tape already replayed; record a new forward pass");
  if (!value.all_finite()) {
    throw std::domain_error("non-finite value produced by op #" + std::to_string(nodes_.size()) +
                            " with shape " + to_string(value.shape()));
  }
  Node node;
  node.owned = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const { return value(v.id()); }

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.owned;
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = node(id);
  if (n.grad.shape() != value(id).shape()) n.grad = Tensor(value(id).shape());
  return n.grad;
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (!n.requires_grad) throw std::logic_error("gradient requested for a constant");
  if (n.grad.shape() != value(v.id()).shape()) {
    throw std::logic_error("gradient not computed; call backward() first");
  }
  return n.grad;
}

void Tape::backward(Var output) {
  if (consumed_) throw std::logic_error("backward already ran on this tape");
  if (&output.tape() != this) throw std::invalid_argument("output belongs to another tape");
  if (value(output).size() != 1) {
    throw std::invalid_argument("backward needs a single-element output, got " +
                                to_string(value(output).shape()));
  }
  consumed_ = true;
  if (!requires_grad(output.id())) return;
  grad(output.id())[0] = 1.0;
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward) continue;
    if (n.external == nullptr && n.grad.empty()) continue;  // nothing flowed here
    grad(i);
    n.backward(*this);
  }
  // Parameters created after the output never saw it; still mark them ready.
  for (std::size_t i = output.id() + 1; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.external && n.backward) {
      grad(i);
      n.backward(*this);
    }
  }
}

}  // namespace pvudf::nn
