#include "stjla/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace stjla {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Index element_count(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

namespace {

void check_shape(const Shape& shape, Index data_size) {
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
  }
  if (element_count(shape) != data_size) {
    throw ShapeError("shape " + to_string(shape) + " does not match " +
                     std::to_string(data_size) + " data elements");
  }
}

}  // namespace

void detail::Node::accumulate(const Eigen::Ref<const Vector>& g) {
  if (!requires_grad) return;
  if (grad.size() != value.size()) {
    grad = g;
  } else {
    grad += g;
  }
}

Tensor::Tensor(Shape shape, Vector data, bool requires_grad) {
  check_shape(shape, data.size());
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0, requires_grad); }

Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1, requires_grad); }

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  const Index n = element_count(shape);
  return Tensor(std::move(shape), Vector::Constant(n, value), requires_grad);
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) {
  return Tensor({1}, Vector::Constant(1, value), requires_grad);
}

Tensor Tensor::from_matrix(const Eigen::Ref<const Matrix>& m, bool requires_grad) {
  Vector v(m.size());
  MatrixMap(v.data(), m.rows(), m.cols()) = m;
  return Tensor({m.rows(), m.cols()}, std::move(v), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<Scalar> values, bool requires_grad) {
  Vector v(static_cast<Index>(values.size()));
  Index i = 0;
  for (Scalar x : values) v[i++] = x;
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Index Tensor::dim(Index axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(axis)];
}

Scalar Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

Scalar Tensor::at(std::initializer_list<Index> index) const {
  if (static_cast<Index>(index.size()) != rank()) {
    throw ShapeError("index rank does not match " + to_string(shape()));
  }
  Index flat = 0;
  std::size_t axis = 0;
  for (Index i : index) {
    const Index d = node_->shape[axis++];
    if (i < 0 || i >= d) throw ShapeError("index out of range for " + to_string(shape()));
    flat = flat * d + i;
  }
  return node_->value[flat];
}

ConstMatrixMap Tensor::matrix() const {
  const Index cols = node_->shape.back();
  return ConstMatrixMap(node_->value.data(), size() / cols, cols);
}

Vector Tensor::grad() const {
  if (has_grad()) return node_->grad;
  return Vector::Zero(size());
}

Vector& Tensor::mutable_leaf_data() const {
  if (!node_->inputs.empty()) throw ContractError("mutable_leaf_data() on a non-leaf tensor");
  return node_->value;
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value, false); }

void Tensor::backward() const {
  if (size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + to_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; reversed it is a topological order from the loss.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      detail::Node* child = n->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order) {
    if (!n->inputs.empty()) n->grad.resize(0);
  }
  node_->accumulate(Vector::Ones(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->inputs.empty() || !n->backward) continue;
    if (n->grad.size() != n->value.size()) continue;  // unreachable from the loss
    n->backward(*n);
  }
}

Tensor detail::make_result(Shape shape, Vector value, std::vector<Tensor> inputs,
                           std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool any = false;
  for (const Tensor& t : inputs) any = any || t.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const Tensor& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(node));
}

}  // namespace stjla
