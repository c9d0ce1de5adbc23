#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace c2f {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Throws std::invalid_argument; used for op precondition diagnostics.
void check(bool cond, const std::string& message);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this->grad, accumulates into parents' grads.  Never owns a
  // shared_ptr to this node (no reference cycles).
  std::function<void(TensorNode&)> backward;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

}  // namespace detail

// Handle to one node of the reverse-mode tape.  Copies alias the node.
// A tensor's values are written once by the op that produces it; leaf
// tensors (parameters, inputs) may be mutated through mutable_values()
// between tape constructions.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_values(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->values.size(); }
  std::span<const double> values() const { return node_->values; }
  std::span<double> mutable_values() { return node_->values; }
  double at(std::size_t i) const { return node_->values[i]; }

  // Value of a one-element tensor.
  double value() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag);

  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() {
    if (node_) node_->grad.assign(node_->values.size(), 0.0);
  }

  // Reverse-mode accumulation from this one-element tensor: seeds d/dself = 1
  // and walks the tape in reverse topological order.  Grads accumulate into
  // every reachable tensor with requires_grad.
  void backward() const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::TensorNode> node);

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Builds a tape node.  requires_grad is inherited from the parents; when no
// parent requires gradients (or gradients are globally disabled) the parents
// and the backward closure are dropped so inference builds no tape.
Tensor make_op(const char* op, Shape shape, std::vector<double> values,
               std::vector<Tensor> parents,
               std::function<void(detail::TensorNode&)> backward);

// Scoped switch that disables tape construction (forward values only).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

}  // namespace c2f
