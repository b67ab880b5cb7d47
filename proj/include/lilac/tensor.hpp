#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lilac/error.hpp"

namespace lilac {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename Real>
struct Node {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;
  // Parents are recorded only when at least one of them requires grad.
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return parents.empty(); }
};

}  // namespace detail

// Disables recording of the computation graph on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled();

 private:
  bool previous_;
};

// Dense row-major array with an optional reverse-mode gradient record.
// Copies share storage (handle semantics); use clone() for a deep copy.
template <typename Real>
class Tensor {
 public:
  using Scalar = Real;
  using NodePtr = std::shared_ptr<detail::Node<Real>>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return node().shape.size(); }
  std::size_t numel() const { return node().data.size(); }

  std::span<const Real> data() const { return node().data; }
  // Mutable access is reserved for leaves (parameters, inputs); interior nodes are immutable.
  std::span<Real> mutable_data();
  Real item() const;
  Real at(std::size_t flat_index) const { return node().data.at(flat_index); }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool flag);
  // Empty span when the tensor does not track gradients.
  std::span<const Real> grad() const { return node().grad; }
  std::span<Real> mutable_grad() { return node().grad; }
  void zero_grad();

  // Same values, no history, no grad.
  Tensor detach() const;
  // Deep copy of the values; the copy is a leaf with the requested grad flag.
  Tensor clone(bool requires_grad = false) const;

  bool is_leaf() const { return node().is_leaf(); }
  const NodePtr& node_ptr() const { return node_; }

  // Builds an op output. When grad recording is active and any parent needs a
  // gradient, the parents and backward closure are attached.
  static Tensor make_result(Shape shape, std::vector<Real> values,
                            std::initializer_list<const Tensor*> parents,
                            std::function<void(detail::Node<Real>&)> backward_fn);

 private:
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}
  detail::Node<Real>& node() const;

  NodePtr node_;
};

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across calls
// until zero_grad(); interior gradients are rebuilt on every call.
template <typename Real>
void backward(const Tensor<Real>& loss);

// Throws TrainingError naming `what` if any value is NaN or infinite.
template <typename Real>
void check_finite(const Tensor<Real>& t, const std::string& what);

}  // namespace lilac
