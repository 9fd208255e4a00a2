#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "stjla/graph.hpp"
#include "stjla/tensor.hpp"

namespace stjla::test {

/// A per-process path under the system temp directory.
std::filesystem::path temp_path(const std::string& name);

Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0);
Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, bool requires_grad = false, double lo = -1.0,
                     double hi = 1.0);

/// Linear attention written as the per-query double sum over keys with
/// similarity exp(q) . exp(k); no reassociation, no shifts.
Matrix double_sum_linear_attention(const Matrix& q, const Matrix& k, const Matrix& v);

/// Hop counts from Floyd-Warshall over unit edge lengths (self-loops ignored).
HopDistanceMatrix floyd_warshall_hops(const RoadGraph& g);

RoadGraph random_graph(Index n, double density, std::mt19937_64& rng);

struct GradCheck {
  double max_rel_error = 0;
  std::string worst;  // "<leaf>[<entry>]"
  Index entries = 0;
};

/// Central differences on every entry of every leaf against one backward
/// sweep of `loss`. Relative error is |a - n| / max(|a|, |n|, floor).
GradCheck check_gradients(const std::function<Tensor()>& loss,
                          const std::vector<std::pair<std::string, Tensor>>& leaves, double h = 1e-5,
                          double floor = 1e-6);

}  // namespace stjla::test
