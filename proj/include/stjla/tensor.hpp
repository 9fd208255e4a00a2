#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace stjla {

#ifdef STJLA_SINGLE_PRECISION
using Scalar = float;
#else
using Scalar = double;
#endif

using Index = Eigen::Index;
using Shape = std::vector<Index>;

using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
// Row-major so that a flat tensor buffer and its 2D view agree.
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string to_string(const Shape& shape);
Index element_count(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  Vector value;
  Vector grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads self.grad and accumulates into self.inputs[i]->grad.
  std::function<void(Node& self)> backward;

  void accumulate(const Eigen::Ref<const Vector>& g);
};

}  // namespace detail

/// Dense row-major tensor with optional reverse-mode gradient tracking.
///
/// A Tensor is a cheap handle; copies share the same underlying node. Operations
/// never modify their inputs. Leaves created with `requires_grad` collect
/// gradients on `backward()`; repeated `backward()` calls accumulate into
/// leaves until `zero_grad()`.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Vector data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);
  static Tensor from_matrix(const Eigen::Ref<const Matrix>& m, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::initializer_list<Scalar> values,
                            bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index axis) const;
  Index size() const { return node_->value.size(); }

  const Vector& data() const { return node_->value; }
  Scalar item() const;
  Scalar at(std::initializer_list<Index> index) const;

  /// 2D view: rows = product of all leading dims, cols = last dim.
  ConstMatrixMap matrix() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  /// Gradient buffer; zeros if nothing has been accumulated yet.
  Vector grad() const;
  void zero_grad() const { node_->grad.resize(0); }

  /// In-place parameter update hook for optimizers. Only valid on leaves.
  Vector& mutable_leaf_data() const;

  /// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls;
  /// interior gradients are reset at the start of each sweep.
  void backward() const;

  /// Same values, no graph linkage.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Builds an op result. Inputs and the backward rule are only retained when
/// at least one input requires a gradient.
Tensor make_result(Shape shape, Vector value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward);

}  // namespace detail

}  // namespace stjla
