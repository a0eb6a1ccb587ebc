// SPDX-License-Identifier: Apache-2.0
#ifndef MMFUSION_TENSOR_HPP
#define MMFUSION_TENSOR_HPP

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmf {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until needed; same length as data once allocated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node& self)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

/// Handle to a node of the autodiff graph. Copies share the node.
///
/// Leaves created with requires_grad=true are parameters: their gradient buffer
/// accumulates across backward() calls until zero_grad() is called. Interior
/// nodes are reset at the start of each backward pass.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  /// Size of axis `axis`; negative values count from the back.
  std::size_t dim(int axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  /// Gradient buffer; all zeros when nothing has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool is_leaf() const;
  void zero_grad();

  /// Reverse-mode sweep from this scalar. Throws ShapeError when not scalar.
  void backward() const;

  /// Same values, no graph history, no gradient.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  void check_defined() const;
  std::shared_ptr<detail::Node> node_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

void zero_grads(std::span<const NamedTensor> params);
std::size_t total_size(std::span<const NamedTensor> params);

namespace detail {

/// Creates an op output. When no parent requires grad the graph link is dropped.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   std::function<void(Node& self)> backward_fn);

}  // namespace detail

}  // namespace mmf

#endif  // MMFUSION_TENSOR_HPP
