#include "support.hpp"

#include <algorithm>
#include <cmath>

#include <unistd.h>

namespace stjla::test {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("stjla_test_" + std::to_string(::getpid()) + "_" + name);
}

Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, bool requires_grad, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(element_count(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = u(rng);
  return Tensor(shape, std::move(v), requires_grad);
}

Matrix double_sum_linear_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  Matrix out = Matrix::Zero(q.rows(), v.cols());
  for (Index i = 0; i < q.rows(); ++i) {
    double den = 0;
    for (Index j = 0; j < k.rows(); ++j) {
      double sim = 0;
      for (Index c = 0; c < q.cols(); ++c) sim += std::exp(q(i, c)) * std::exp(k(j, c));
      den += sim;
      for (Index c = 0; c < v.cols(); ++c) out(i, c) += sim * v(j, c);
    }
    out.row(i) /= den;
  }
  return out;
}

HopDistanceMatrix floyd_warshall_hops(const RoadGraph& g) {
  const Index n = g.size();
  constexpr long long inf = 1LL << 40;
  std::vector<long long> d(static_cast<std::size_t>(n * n), inf);
  auto at = [&](Index i, Index j) -> long long& { return d[static_cast<std::size_t>(i * n + j)]; };
  for (Index i = 0; i < n; ++i) at(i, i) = 0;
  for (const Edge& e : g.edges()) {
    if (e.src != e.dst && e.weight > 0) at(e.src, e.dst) = 1;
  }
  for (Index m = 0; m < n; ++m) {
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) at(i, j) = std::min(at(i, j), at(i, m) + at(m, j));
    }
  }
  HopDistanceMatrix out(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) out(i, j) = at(i, j) >= inf ? kUnreachable : static_cast<int>(at(i, j));
  }
  return out;
}

RoadGraph random_graph(Index n, double density, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Edge> edges;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (u(rng) < density) edges.push_back({i, j, 0.1 + u(rng)});
    }
  }
  return RoadGraph(n, edges);
}

GradCheck check_gradients(const std::function<Tensor()>& loss,
                          const std::vector<std::pair<std::string, Tensor>>& leaves, double h, double floor) {
  for (const auto& [name, leaf] : leaves) leaf.zero_grad();
  loss().backward();
  GradCheck out;
  for (const auto& [name, leaf] : leaves) {
    const Vector analytic = leaf.grad();
    Vector& x = leaf.mutable_leaf_data();
    for (Index i = 0; i < x.size(); ++i) {
      const Scalar saved = x[i];
      x[i] = saved + h;
      const double up = loss().item();
      x[i] = saved - h;
      const double down = loss().item();
      x[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++out.entries;
      if (rel > out.max_rel_error || std::isnan(rel)) {
        out.max_rel_error = std::isnan(rel) ? INFINITY : rel;
        out.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(a) + " numeric " +
                    std::to_string(numeric);
      }
    }
  }
  return out;
}

}  // namespace stjla::test
