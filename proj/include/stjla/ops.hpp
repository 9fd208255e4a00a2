#pragma once

#include <vector>

#include "stjla/tensor.hpp"

namespace stjla {

// Matrix product of two rank-2 tensors.
Tensor matmul(const Tensor& a, const Tensor& b);

// x[..., in] * w[in, out] (+ bias[out]).
Tensor linear(const Tensor& x, const Tensor& w);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor transpose(const Tensor& a);

// Binary elementwise ops. `b` may either match `a` exactly or match a's
// trailing dimensions, in which case it is broadcast over the leading ones.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, Scalar s);
Tensor add_scalar(const Tensor& a, Scalar s);
Tensor one_minus(const Tensor& a);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
// Subgradient 0 at the origin.
Tensor abs(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor softmax(const Tensor& a, Index axis);

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, Index axis);
Tensor stack(const std::vector<Tensor>& parts, Index axis = 0);
Tensor slice(const Tensor& a, Index axis, Index start, Index length);
// Slice of length one with the axis removed.
Tensor select(const Tensor& a, Index axis, Index index);
// Inserts a new axis of size `count` at `axis`, repeating the data.
Tensor expand(const Tensor& a, Index axis, Index count);

// Sum over all entries of |pred - target|.
Tensor l1_loss(const Tensor& pred, const Tensor& target);

}  // namespace stjla
