#pragma once

#include <filesystem>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "stjla/tensor.hpp"

namespace stjla {

struct Edge {
  Index src;
  Index dst;
  Scalar weight;
};

/// Weighted directed sensor graph. Edges with zero weight are treated as
/// absent; a repeated (src, dst) pair keeps the last weight.
class RoadGraph {
 public:
  RoadGraph(Index n_nodes, const std::vector<Edge>& edges);

  Index size() const { return n_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const Matrix& adjacency() const { return adjacency_; }

 private:
  Index n_;
  std::vector<Edge> edges_;
  Matrix adjacency_;
};

class GraphFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses `src,dst,weight` lines. An optional `N=<int>` line declares the node
/// count; otherwise it is max index + 1. Non-numeric first lines are treated
/// as a header.
RoadGraph load_road_graph(const std::filesystem::path& path);
void save_road_graph(const std::filesystem::path& path, const RoadGraph& g);

inline constexpr int kUnreachable = std::numeric_limits<int>::max();

using HopDistanceMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using SparseMatrix = Eigen::SparseMatrix<Scalar, Eigen::RowMajor>;

/// Directed hop counts by BFS from every node. Self-loops are ignored,
/// S(i,i) == 0 and unreachable pairs hold kUnreachable.
HopDistanceMatrix shortest_path_hops(const RoadGraph& g);

/// The stack of exactly-i-hop adjacency matrices for i = 1..k, kept as
/// per-hop pair lists plus the degree-normalized propagation operator of
/// each hop.
class HopMatrix {
 public:
  HopMatrix(Index n_nodes, std::vector<std::vector<std::pair<Index, Index>>> pairs);

  Index hops() const { return static_cast<Index>(pairs_.size()); }
  Index nodes() const { return n_; }
  /// `hop` is 1-based.
  const std::vector<std::pair<Index, Index>>& pairs(Index hop) const;
  Eigen::MatrixXi dense(Index hop) const;
  /// D_O^-1 H + D_I^-1 H^T for the given hop.
  const std::shared_ptr<const SparseMatrix>& propagation(Index hop) const;

 private:
  Index n_;
  std::vector<std::vector<std::pair<Index, Index>>> pairs_;
  std::vector<std::shared_ptr<const SparseMatrix>> propagation_;
};

HopMatrix hop_adjacency(const HopDistanceMatrix& s, Index k);

enum class FlowDirection { kOut, kIn };

/// kOut: D_O^-1 h with D_O = diag(row sums of h).
/// kIn:  D_I^-1 h^T with D_I = diag(row sums of h^T).
/// Zero-degree rows come out as zero rows.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> degree_normalize(
    const Eigen::MatrixBase<Derived>& h, FlowDirection direction) {
  using S = typename Derived::Scalar;
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out;
  if (direction == FlowDirection::kOut) {
    out = h;
  } else {
    out = h.transpose();
  }
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const S degree = out.row(i).sum();
    if (degree != S(0)) {
      out.row(i) /= degree;
    } else {
      out.row(i).setZero();
    }
  }
  return out;
}

/// Dense transition operator of one diffusion step:
/// (D_O^-1 A)^k + (D_I^-1 A^T)^k.
Matrix diffusion_operator(const Matrix& adjacency, int k_step);

/// Applies a constant N x N operator along the node axis of x, which is
/// [N x G] or [T x N x G]. Differentiable in x.
Tensor propagate(std::shared_ptr<const SparseMatrix> op, const Tensor& x);

/// One step-k term of the bidirectional diffusion convolution, one shared W.
Tensor diffusion_conv(const Tensor& x, const Matrix& adjacency, int k_step, const Tensor& w);

struct MhdcnWeights {
  std::vector<Tensor> w_x;  // one F x F/k projection per hop head
  Tensor w_d;               // F x F output projection
};

/// Multi-hop diffusion convolution: concatenation of one head per hop,
/// head_i = (D_O^-1 H_i + D_I^-1 H_i^T)(X W^X_i), projected by W^D.
/// x is [N x F] or [T x N x F]; heads are applied per time step.
Tensor mhdcn(const Tensor& x, const HopMatrix& hops, const MhdcnWeights& weights);

}  // namespace stjla
