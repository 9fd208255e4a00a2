#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stjla/tensor.hpp"

namespace stjla {

template <typename S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Plain Eigen kernels. These work on any dense expression and are what the
// complexity benchmark times.
// ---------------------------------------------------------------------------

namespace detail {

template <typename DQ, typename DK, typename DV>
void check_attention_shapes(const Eigen::MatrixBase<DQ>& q, const Eigen::MatrixBase<DK>& k,
                            const Eigen::MatrixBase<DV>& v) {
  if (q.cols() != k.cols()) {
    throw ShapeError("attention: query dim " + std::to_string(q.cols()) + " != key dim " + std::to_string(k.cols()));
  }
  if (k.rows() != v.rows()) {
    throw ShapeError("attention: " + std::to_string(k.rows()) + " keys but " + std::to_string(v.rows()) + " values");
  }
  if (k.rows() == 0) throw ShapeError("attention over zero keys");
}

}  // namespace detail

/// softmax(Q K^T / sqrt(d)) V with per-row max subtraction. Materializes the
/// full M x M' score matrix.
template <typename DQ, typename DK, typename DV>
RowMatrix<typename DQ::Scalar> softmax_attention(const Eigen::MatrixBase<DQ>& q, const Eigen::MatrixBase<DK>& k,
                                                 const Eigen::MatrixBase<DV>& v) {
  using S = typename DQ::Scalar;
  detail::check_attention_shapes(q, k, v);
  RowMatrix<S> scores = (q * k.transpose()) / std::sqrt(static_cast<S>(q.cols()));
  scores = (scores.array().colwise() - scores.array().rowwise().maxCoeff()).exp();
  scores.array().colwise() /= scores.array().rowwise().sum();
  return scores * v;
}

/// General kernel-similarity form: out_i = sum_j sim(q_i, k_j) v_j / sum_j sim(q_i, k_j).
/// Quadratic; evaluated row by row without forming a score matrix.
template <typename DQ, typename DK, typename DV, typename Similarity>
RowMatrix<typename DQ::Scalar> similarity_attention(const Eigen::MatrixBase<DQ>& q, const Eigen::MatrixBase<DK>& k,
                                                    const Eigen::MatrixBase<DV>& v, Similarity sim) {
  using S = typename DQ::Scalar;
  detail::check_attention_shapes(q, k, v);
  RowMatrix<S> out(q.rows(), v.cols());
  Eigen::Matrix<S, 1, Eigen::Dynamic> num(v.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    num.setZero();
    S den = 0;
    for (Eigen::Index j = 0; j < k.rows(); ++j) {
      const S w = sim(q.row(i), k.row(j));
      num += w * v.row(j);
      den += w;
    }
    out.row(i) = num / den;
  }
  return out;
}

/// sim(q, k) = exp(q k^T / sqrt(d)); makes similarity_attention equal to softmax_attention.
struct ScaledExpSimilarity {
  double inv_sqrt_d;
  explicit ScaledExpSimilarity(Eigen::Index d) : inv_sqrt_d(1.0 / std::sqrt(static_cast<double>(d))) {}
  template <typename A, typename B>
  auto operator()(const A& q, const B& k) const {
    return std::exp(q.dot(k) * static_cast<typename A::Scalar>(inv_sqrt_d));
  }
};

enum class FeatureShift {
  kNone,       // plain exp(x)
  kRowMax,     // subtract each row's maximum (queries)
  kGlobalMax,  // subtract the global maximum (keys)
};

/// phi(x) = exp(x - shift). The row shift on queries and the global shift on
/// keys cancel in the attention ratio; a per-row key shift would not.
template <typename Derived>
RowMatrix<typename Derived::Scalar> feature_map_exp(const Eigen::MatrixBase<Derived>& x,
                                                    FeatureShift shift = FeatureShift::kNone) {
  switch (shift) {
    case FeatureShift::kRowMax:
      return (x.array().colwise() - x.array().rowwise().maxCoeff()).exp();
    case FeatureShift::kGlobalMax:
      return (x.array() - x.maxCoeff()).exp();
    case FeatureShift::kNone:
      break;
  }
  return x.array().exp();
}

inline constexpr double kMinAttentionDenominator = 1e-30;

/// Ratio of phi(Q_i) S to phi(Q_i) z with S = sum_j phi(K_j)^T V_j (d x d_v) and
/// z = sum_j phi(K_j)^T. Linear time and memory in the token count.
template <typename DQ, typename DK, typename DV>
RowMatrix<typename DQ::Scalar> linear_attention(const Eigen::MatrixBase<DQ>& q, const Eigen::MatrixBase<DK>& k,
                                                const Eigen::MatrixBase<DV>& v, bool stabilize = true) {
  using S = typename DQ::Scalar;
  detail::check_attention_shapes(q, k, v);
  const RowMatrix<S> phi_q = feature_map_exp(q, stabilize ? FeatureShift::kRowMax : FeatureShift::kNone);
  const RowMatrix<S> phi_k = feature_map_exp(k, stabilize ? FeatureShift::kGlobalMax : FeatureShift::kNone);
  const RowMatrix<S> kv = phi_k.transpose() * v;
  const Eigen::Matrix<S, Eigen::Dynamic, 1> z = phi_k.colwise().sum().transpose();
  const Eigen::Matrix<S, Eigen::Dynamic, 1> den = phi_q * z;
  for (Eigen::Index i = 0; i < den.size(); ++i) {
    if (!(den[i] >= static_cast<S>(kMinAttentionDenominator))) {
      throw NumericError("linear attention denominator degenerate at query row " + std::to_string(i));
    }
  }
  RowMatrix<S> out = phi_q * kv;
  out.array().colwise() /= den.array();
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable layer.
// ---------------------------------------------------------------------------

struct AttentionConfig {
  Index heads = 8;
  Index head_dim = 16;

  Index model_dim() const { return heads * head_dim; }
};

/// [T x N x F] -> [(T N) x F], time-major: tokens 0..N-1 are t = 0.
Tensor st_joint_reshape(const Tensor& x);
/// Inverse of st_joint_reshape given the node count.
Tensor st_joint_unreshape(const Tensor& tokens, Index n_nodes);

/// Differentiable linear attention on [M x d] queries and [M' x d] keys/values.
/// Stabilization shifts are constants of the backward pass; they cancel in
/// the ratio so gradients are exact.
Tensor linear_attention(const Tensor& q, const Tensor& k, const Tensor& v);

struct AttentionParams {
  std::vector<Tensor> w_q;  // per head, F x d
  std::vector<Tensor> w_k;
  std::vector<Tensor> w_v;
  Tensor w_o;  // F x F
};

/// Concat(head_1..head_K) W^O with head_h = LinearAttention(x W^Q_h, kv W^K_h, kv W^V_h),
/// where kv is `cross_kv` when given and x otherwise.
Tensor multi_head_attention(const Tensor& x, const std::optional<Tensor>& cross_kv, const AttentionParams& params,
                            const AttentionConfig& cfg);

}  // namespace stjla
