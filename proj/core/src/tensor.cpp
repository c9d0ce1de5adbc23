#include "c2f/tensor.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace c2f {

namespace {
bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void check(bool cond, const std::string& message) {
  if (!cond) throw std::invalid_argument(message);
}

Tensor Tensor::zeros(Shape shape) {
  return full(std::move(shape), 0.0);
}

Tensor Tensor::full(Shape shape, double value) {
  auto node = std::make_shared<detail::TensorNode>();
  node->values.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  return from_node(std::move(node));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values) {
  check(shape_numel(shape) == values.size(),
        "tensor: value count " + std::to_string(values.size()) +
            " does not match shape " + shape_str(shape));
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  return from_node(std::move(node));
}

Tensor Tensor::scalar(double value) {
  return from_values({1}, {value});
}

Tensor Tensor::from_node(std::shared_ptr<detail::TensorNode> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

double Tensor::value() const {
  check(node_ && node_->values.size() == 1,
        "tensor: value() requires a one-element tensor, got " +
            (node_ ? shape_str(node_->shape) : std::string("undefined")));
  return node_->values[0];
}

void Tensor::set_requires_grad(bool flag) {
  check(node_ != nullptr, "tensor: set_requires_grad on undefined tensor");
  check(!flag || node_->parents.empty(),
        "tensor: requires_grad can only be toggled on leaf tensors");
  node_->requires_grad = flag;
}

void Tensor::backward() const {
  check(node_ && node_->values.size() == 1,
        "backward: root must be a one-element tensor");
  // Post-order DFS over grad-requiring ancestry; reversed it is topological.
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> seen;
  std::vector<std::pair<detail::TensorNode*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::TensorNode* parent = node->parents[next++].get();
      if (parent->requires_grad && !seen.count(parent)) {
        seen.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

Tensor make_op(const char* op, Shape shape, std::vector<double> values,
               std::vector<Tensor> parents,
               std::function<void(detail::TensorNode&)> backward) {
  Tensor out = Tensor::from_values(std::move(shape), std::move(values));
  auto& node = *out.node();
  node.op = op;
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const Tensor& p : parents) {
      if (p.requires_grad()) {
        needs_grad = true;
        break;
      }
    }
  }
  if (needs_grad) {
    node.requires_grad = true;
    node.parents.reserve(parents.size());
    for (Tensor& p : parents) node.parents.push_back(p.node());
    node.backward = std::move(backward);
  }
  return out;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() {
  g_grad_enabled = previous_;
}

bool grad_enabled() {
  return g_grad_enabled;
}

}  // namespace c2f
