#include "lilac/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace lilac {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

template <typename Real>
detail::Node<Real>& Tensor<Real>::node() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return *node_;
}

template <typename Real>
Tensor<Real> Tensor<Real>::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  auto n = std::make_shared<detail::Node<Real>>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  Tensor t(std::move(n));
  t.set_requires_grad(requires_grad);
  return t;
}

template <typename Real>
Tensor<Real> Tensor<Real>::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<Real>(n, Real(0)), requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::full(Shape shape, Real value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::scalar(Real value, bool requires_grad) {
  return from(Shape{1}, {value}, requires_grad);
}

template <typename Real>
std::size_t Tensor<Real>::dim(std::size_t axis) const {
  const auto& s = node().shape;
  if (axis >= s.size()) throw DimensionError("axis out of range for shape " + shape_str(s));
  return s[axis];
}

template <typename Real>
std::span<Real> Tensor<Real>::mutable_data() {
  auto& n = node();
  if (!n.is_leaf()) throw ContractError("interior tensors are immutable");
  return n.data;
}

template <typename Real>
Real Tensor<Real>::item() const {
  const auto& n = node();
  if (n.data.size() != 1) throw ContractError("item() requires a single-element tensor");
  return n.data[0];
}

template <typename Real>
void Tensor<Real>::set_requires_grad(bool flag) {
  auto& n = node();
  n.requires_grad = flag;
  if (flag) {
    n.grad.assign(n.data.size(), Real(0));
  } else {
    n.grad.clear();
  }
}

template <typename Real>
void Tensor<Real>::zero_grad() {
  auto& n = node();
  std::fill(n.grad.begin(), n.grad.end(), Real(0));
}

template <typename Real>
Tensor<Real> Tensor<Real>::detach() const {
  auto n = std::make_shared<detail::Node<Real>>();
  n->shape = node().shape;
  n->data = node().data;
  return Tensor(std::move(n));
}

template <typename Real>
Tensor<Real> Tensor<Real>::clone(bool requires_grad) const {
  auto t = detach();
  t.set_requires_grad(requires_grad);
  return t;
}

template <typename Real>
Tensor<Real> Tensor<Real>::make_result(Shape shape, std::vector<Real> values,
                                       std::initializer_list<const Tensor*> parents,
                                       std::function<void(detail::Node<Real>&)> backward_fn) {
  auto n = std::make_shared<detail::Node<Real>>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  if (NoGradGuard::grad_enabled()) {
    bool any = false;
    for (const auto* p : parents) any = any || p->requires_grad();
    if (any) {
      n->requires_grad = true;
      for (const auto* p : parents) n->parents.push_back(p->node_);
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(n));
}

template <typename Real>
void backward(const Tensor<Real>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  using NodeT = detail::Node<Real>;
  NodeT* root = loss.node_ptr().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (NodeT* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), Real(0));
  }
  root->grad[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

template <typename Real>
void check_finite(const Tensor<Real>& t, const std::string& what) {
  for (Real v : t.data()) {
    if (!std::isfinite(v)) throw TrainingError("non-finite value in " + what);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);
template void check_finite(const Tensor<float>&, const std::string&);
template void check_finite(const Tensor<double>&, const std::string&);

}  // namespace lilac
