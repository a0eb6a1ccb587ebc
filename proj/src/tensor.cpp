// SPDX-License-Identifier: Apache-2.0
#include "mmfusion/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace mmf {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + shape_to_string(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  if (requires_grad) node->ensure_grad();
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({}, {value}, requires_grad); }

void Tensor::check_defined() const {
  if (!node_) throw std::logic_error("use of undefined tensor");
}

const Shape& Tensor::shape() const {
  check_defined();
  return node_->shape;
}

std::size_t Tensor::dim(int axis) const {
  const auto& s = shape();
  const int r = static_cast<int>(s.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(s));
  return s[static_cast<std::size_t>(a)];
}

std::size_t Tensor::size() const {
  check_defined();
  return node_->data.size();
}

std::span<const double> Tensor::data() const {
  check_defined();
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  check_defined();
  return node_->data;
}

std::span<const double> Tensor::grad() const {
  check_defined();
  node_->ensure_grad();
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  check_defined();
  node_->ensure_grad();
  return node_->grad;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch for " + shape_to_string(s));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw ShapeError("index out of range for " + shape_to_string(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

bool Tensor::requires_grad() const {
  check_defined();
  return node_->requires_grad;
}

bool Tensor::is_leaf() const {
  check_defined();
  return node_->is_leaf();
}

void Tensor::zero_grad() {
  check_defined();
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  check_defined();
  return from_data(node_->shape, node_->data, false);
}

void Tensor::backward() const {
  check_defined();
  if (node_->data.size() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " + shape_to_string(node_->shape));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->is_leaf()) {
      n->grad.assign(n->data.size(), 0.0);
    } else {
      n->ensure_grad();
    }
  }
  if (node_->is_leaf()) {
    node_->grad[0] += 1.0;
    return;
  }
  node_->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
  }
}

void zero_grads(std::span<const NamedTensor> params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

std::size_t total_size(std::span<const NamedTensor> params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

namespace detail {

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   std::function<void(Node& self)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

}  // namespace mmf
