#include "stjla/ops.hpp"

#include <cmath>

namespace stjla {

using detail::make_result;
using detail::Node;

namespace {

Index normalize_axis(Index axis, Index rank, const Shape& shape) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape));
  }
  return axis;
}

// Product of dims in [from, to).
Index span_size(const Shape& s, Index from, Index to) {
  Index n = 1;
  for (Index i = from; i < to; ++i) n *= s[static_cast<std::size_t>(i)];
  return n;
}

enum class Broadcast { kExact, kTrailing };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kExact;
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sb.size() < sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) {
    return Broadcast::kTrailing;
  }
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(sa) + " and " + to_string(sb));
}

// View of a as [outer x b.size()] so that b lines up with each row.
Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> rows_view(
    const Vector& v, Index cols) {
  return {v.data(), v.size() / cols, cols};
}

template <typename Fwd, typename GradA, typename GradB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, GradA grad_a, GradB grad_b) {
  const Broadcast kind = broadcast_kind(a, b, name);
  const Index cols = b.size();
  using RowArray = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowArray out = fwd(rows_view(a.data(), cols), rows_view(b.data(), cols).row(0).replicate(a.size() / cols, 1));
  Vector value = Eigen::Map<const Vector>(out.data(), out.size());
  return make_result(a.shape(), std::move(value), {a, b}, [kind, cols, grad_a, grad_b](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const Index rows = self.value.size() / cols;
    auto g = rows_view(self.grad, cols);
    auto av = rows_view(na.value, cols);
    RowArray bv = rows_view(nb.value, cols).row(0).replicate(rows, 1);
    auto out = rows_view(self.value, cols);
    if (na.requires_grad) {
      RowArray ga = grad_a(g, av, bv, out);
      na.accumulate(Eigen::Map<const Vector>(ga.data(), ga.size()));
    }
    if (nb.requires_grad) {
      RowArray gb = grad_b(g, av, bv, out);
      if (kind == Broadcast::kTrailing) {
        Eigen::Matrix<Scalar, 1, Eigen::Dynamic> reduced = gb.colwise().sum().matrix();
        nb.accumulate(reduced.transpose());
      } else {
        nb.accumulate(Eigen::Map<const Vector>(gb.data(), gb.size()));
      }
    }
  });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  Vector value = fwd(a.data().array()).matrix();
  return make_result(a.shape(), std::move(value), {a}, [deriv](Node& self) {
    Node& in = *self.inputs[0];
    in.accumulate((self.grad.array() * deriv(in.value.array(), self.value.array())).matrix());
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const Index m = a.dim(0), p = a.dim(1), n = b.dim(1);
  Vector value(m * n);
  MatrixMap(value.data(), m, n).noalias() = a.matrix() * b.matrix();
  return make_result({m, n}, std::move(value), {a, b}, [m, p, n](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    ConstMatrixMap g(self.grad.data(), m, n);
    if (na.requires_grad) {
      Vector ga(m * p);
      MatrixMap(ga.data(), m, p).noalias() = g * ConstMatrixMap(nb.value.data(), p, n).transpose();
      na.accumulate(ga);
    }
    if (nb.requires_grad) {
      Vector gb(p * n);
      MatrixMap(gb.data(), p, n).noalias() = ConstMatrixMap(na.value.data(), m, p).transpose() * g;
      nb.accumulate(gb);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w) {
  if (w.rank() != 2 || x.shape().back() != w.dim(0)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " does not match weight " + to_string(w.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  const Tensor flat = x.rank() == 2 ? x : reshape(x, {x.size() / x.shape().back(), x.shape().back()});
  const Tensor y = matmul(flat, w);
  return x.rank() == 2 ? y : reshape(y, std::move(out_shape));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (bias.rank() != 1 || bias.dim(0) != w.dim(1)) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " does not match weight " + to_string(w.shape()));
  }
  return add(linear(x, w), bias);
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects rank 2, got " + to_string(a.shape()));
  const Index r = a.dim(0), c = a.dim(1);
  Vector value(a.size());
  MatrixMap(value.data(), c, r) = a.matrix().transpose();
  return make_result({c, r}, std::move(value), {a}, [r, c](Node& self) {
    Vector g(r * c);
    MatrixMap(g.data(), r, c) = ConstMatrixMap(self.grad.data(), c, r).transpose();
    self.inputs[0]->accumulate(g);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](const auto& x, const auto& y) { return x + y; },
      [](const auto& g, const auto&, const auto&, const auto&) { return g; },
      [](const auto& g, const auto&, const auto&, const auto&) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](const auto& x, const auto& y) { return x - y; },
      [](const auto& g, const auto&, const auto&, const auto&) { return g; },
      [](const auto& g, const auto&, const auto&, const auto&) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](const auto& x, const auto& y) { return x * y; },
      [](const auto& g, const auto&, const auto& y, const auto&) { return g * y; },
      [](const auto& g, const auto& x, const auto&, const auto&) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](const auto& x, const auto& y) { return x / y; },
      [](const auto& g, const auto&, const auto& y, const auto&) { return g / y; },
      [](const auto& g, const auto&, const auto& y, const auto& out) { return -g * out / y; });
}

Tensor scale(const Tensor& a, Scalar s) {
  return make_result(a.shape(), a.data() * s, {a}, [s](Node& self) { self.inputs[0]->accumulate(self.grad * s); });
}

Tensor add_scalar(const Tensor& a, Scalar s) {
  return make_result(a.shape(), (a.data().array() + s).matrix(), {a},
                     [](Node& self) { self.inputs[0]->accumulate(self.grad); });
}

Tensor one_minus(const Tensor& a) {
  return make_result(a.shape(), (1 - a.data().array()).matrix(), {a},
                     [](Node& self) { self.inputs[0]->accumulate(-self.grad); });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, [](const auto& x) { return 1 / (1 + (-x).exp()); },
      [](const auto&, const auto& y) { return y * (1 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](const auto& x) { return x.tanh(); }, [](const auto&, const auto& y) { return 1 - y.square(); });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](const auto& x) { return x.exp(); }, [](const auto&, const auto& y) { return y; });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, [](const auto& x) { return x.abs(); }, [](const auto& x, const auto&) { return x.sign(); });
}

Tensor sum(const Tensor& a) {
  const Index n = a.size();
  return make_result({1}, Vector::Constant(1, a.data().sum()), {a},
                     [n](Node& self) { self.inputs[0]->accumulate(Vector::Constant(n, self.grad[0])); });
}

Tensor mean(const Tensor& a) { return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.size())); }

Tensor softmax(const Tensor& a, Index axis) {
  axis = normalize_axis(axis, a.rank(), a.shape());
  const Index outer = span_size(a.shape(), 0, axis);
  const Index len = a.shape()[static_cast<std::size_t>(axis)];
  const Index inner = span_size(a.shape(), axis + 1, a.rank());
  Vector value(a.size());
  const Vector& x = a.data();
  for (Index o = 0; o < outer; ++o) {
    for (Index i = 0; i < inner; ++i) {
      const Index base = o * len * inner + i;
      Scalar mx = x[base];
      for (Index j = 1; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      Scalar total = 0;
      for (Index j = 0; j < len; ++j) {
        const Scalar e = std::exp(x[base + j * inner] - mx);
        value[base + j * inner] = e;
        total += e;
      }
      for (Index j = 0; j < len; ++j) value[base + j * inner] /= total;
    }
  }
  return make_result(a.shape(), std::move(value), {a}, [outer, len, inner](Node& self) {
    Vector g(self.value.size());
    for (Index o = 0; o < outer; ++o) {
      for (Index i = 0; i < inner; ++i) {
        const Index base = o * len * inner + i;
        Scalar dot = 0;
        for (Index j = 0; j < len; ++j) dot += self.grad[base + j * inner] * self.value[base + j * inner];
        for (Index j = 0; j < len; ++j) {
          const Index at = base + j * inner;
          g[at] = self.value[at] * (self.grad[at] - dot);
        }
      }
    }
    self.inputs[0]->accumulate(g);
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (element_count(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  return make_result(std::move(shape), a.data(), {a}, [](Node& self) { self.inputs[0]->accumulate(self.grad); });
}

Tensor concat(const std::vector<Tensor>& parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  axis = normalize_axis(axis, parts.front().rank(), first);
  Shape out_shape = first;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const Tensor& p : parts) {
    bool ok = p.rank() == parts.front().rank();
    for (Index d = 0; ok && d < p.rank(); ++d) {
      ok = d == axis || p.shape()[static_cast<std::size_t>(d)] == first[static_cast<std::size_t>(d)];
    }
    if (!ok) {
      throw ShapeError("concat: " + to_string(p.shape()) + " does not match " + to_string(first) +
                       " outside axis " + std::to_string(axis));
    }
    out_shape[static_cast<std::size_t>(axis)] += p.shape()[static_cast<std::size_t>(axis)];
  }
  const Index outer = span_size(first, 0, axis);
  const Index out_block = span_size(out_shape, axis, static_cast<Index>(out_shape.size()));
  std::vector<Index> blocks;
  std::vector<Index> offsets;
  Index offset = 0;
  for (const Tensor& p : parts) {
    const Index blk = p.size() / outer;
    blocks.push_back(blk);
    offsets.push_back(offset);
    offset += blk;
  }
  Vector value(element_count(out_shape));
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Vector& src = parts[k].data();
    for (Index o = 0; o < outer; ++o) {
      value.segment(o * out_block + offsets[k], blocks[k]) = src.segment(o * blocks[k], blocks[k]);
    }
  }
  return make_result(std::move(out_shape), std::move(value), parts, [outer, out_block, blocks, offsets](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      Node& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      Vector g(outer * blocks[k]);
      for (Index o = 0; o < outer; ++o) {
        g.segment(o * blocks[k], blocks[k]) = self.grad.segment(o * out_block + offsets[k], blocks[k]);
      }
      in.accumulate(g);
    }
  });
}

Tensor stack(const std::vector<Tensor>& parts, Index axis) {
  if (parts.empty()) throw ShapeError("stack of zero tensors");
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    const Index ax = axis < 0 ? axis + p.rank() + 1 : axis;
    if (ax < 0 || ax > p.rank()) throw ShapeError("stack: axis out of range for " + to_string(s));
    s.insert(s.begin() + ax, 1);
    expanded.push_back(reshape(p, std::move(s)));
  }
  return concat(expanded, axis < 0 ? axis + parts.front().rank() + 1 : axis);
}

Tensor slice(const Tensor& a, Index axis, Index start, Index length) {
  axis = normalize_axis(axis, a.rank(), a.shape());
  const Index len = a.shape()[static_cast<std::size_t>(axis)];
  if (start < 0 || length <= 0 || start + length > len) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for axis " + std::to_string(axis) + " of " + to_string(a.shape()));
  }
  const Index outer = span_size(a.shape(), 0, axis);
  const Index inner = span_size(a.shape(), axis + 1, a.rank());
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  Vector value(outer * length * inner);
  for (Index o = 0; o < outer; ++o) {
    value.segment(o * length * inner, length * inner) = a.data().segment((o * len + start) * inner, length * inner);
  }
  return make_result(std::move(out_shape), std::move(value), {a}, [outer, len, inner, start, length](Node& self) {
    Vector g = Vector::Zero(outer * len * inner);
    for (Index o = 0; o < outer; ++o) {
      g.segment((o * len + start) * inner, length * inner) = self.grad.segment(o * length * inner, length * inner);
    }
    self.inputs[0]->accumulate(g);
  });
}

Tensor select(const Tensor& a, Index axis, Index index) {
  axis = normalize_axis(axis, a.rank(), a.shape());
  Tensor s = slice(a, axis, index, 1);
  if (a.rank() == 1) return s;
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + axis);
  return reshape(s, std::move(out_shape));
}

Tensor expand(const Tensor& a, Index axis, Index count) {
  if (axis < 0) axis += a.rank() + 1;
  if (axis < 0 || axis > a.rank() || count <= 0) {
    throw ShapeError("expand: invalid axis/count for " + to_string(a.shape()));
  }
  const Index outer = span_size(a.shape(), 0, axis);
  const Index inner = span_size(a.shape(), axis, a.rank());
  Shape out_shape = a.shape();
  out_shape.insert(out_shape.begin() + axis, count);
  Vector value(outer * count * inner);
  for (Index o = 0; o < outer; ++o) {
    for (Index c = 0; c < count; ++c) {
      value.segment((o * count + c) * inner, inner) = a.data().segment(o * inner, inner);
    }
  }
  return make_result(std::move(out_shape), std::move(value), {a}, [outer, count, inner](Node& self) {
    Vector g = Vector::Zero(outer * inner);
    for (Index o = 0; o < outer; ++o) {
      for (Index c = 0; c < count; ++c) g.segment(o * inner, inner) += self.grad.segment((o * count + c) * inner, inner);
    }
    self.inputs[0]->accumulate(g);
  });
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("l1_loss: prediction " + to_string(pred.shape()) + " vs target " + to_string(target.shape()));
  }
  return sum(abs(sub(pred, target)));
}

}  // namespace stjla
