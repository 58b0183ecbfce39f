#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <deque>
#include <vector>

#include "pvudf/nn/parameters.hpp"
#include "pvudf/nn/tensor.hpp"

namespace pvudf::nn {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records one forward pass and replays it backwards once.
///
/// Nodes are appended in creation order, and every op's inputs exist before
/// the op does, so reverse creation order is a reverse topological order.
class Tape {
 public:
  using Backward = std::function<void(Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf without gradient. The tensor is moved onto the tape.
  Var constant(Tensor value);
  /// Leaf without gradient that references external storage (must outlive the tape).
  Var constant_ref(const Tensor& value);
  /// Leaf whose gradient can be read back with grad() after backward().
  Var input(Tensor value);
  /// Trainable parameter; backward() accumulates into its store gradient.
  Var parameter(ParameterStore& store, const std::string& name);

  /// Appends an op result. `backward` runs only if `requires_grad`.
  Var record(Tensor value, bool requires_grad, Backward backward);

  /// Seeds d(output)/d(output) = 1 and propagates. Output must hold one element.
  void backward(Var output);

  const Tensor& value(Var v) const;
  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor& grad(std::size_t id);
  const Tensor& grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  Node& node(std::size_t id) { return nodes_.at(id); }

  std::deque<Node> nodes_;  // stable references across push_back
  bool consumed_ = false;
};

}  // namespace pvudf::nn
