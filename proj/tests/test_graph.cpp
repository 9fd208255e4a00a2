#include <catch_amalgamated.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include "stjla/graph.hpp"
#include "stjla/ops.hpp"
#include "support.hpp"

using namespace stjla;
using namespace stjla::test;

namespace {

constexpr int U = kUnreachable;

RoadGraph line3() { return RoadGraph(3, {{0, 1, 1.0}, {1, 2, 1.0}}); }

/// Dense evaluation of the multi-hop layer, independent of the sparse path.
Matrix mhdcn_reference(const Matrix& x, const HopDistanceMatrix& s, const std::vector<Matrix>& wx, const Matrix& wd) {
  const Index n = x.rows();
  std::vector<Matrix> heads;
  for (std::size_t i = 0; i < wx.size(); ++i) {
    Matrix h = Matrix::Zero(n, n);
    for (Index a = 0; a < n; ++a) {
      for (Index b = 0; b < n; ++b) h(a, b) = s(a, b) == static_cast<int>(i + 1) ? 1.0 : 0.0;
    }
    Matrix out_deg = Matrix::Zero(n, n), in_deg = Matrix::Zero(n, n);
    for (Index a = 0; a < n; ++a) {
      const double ro = h.row(a).sum(), ri = h.col(a).sum();
      if (ro > 0) out_deg(a, a) = 1.0 / ro;
      if (ri > 0) in_deg(a, a) = 1.0 / ri;
    }
    const Matrix xw = x * wx[i];
    heads.push_back(out_deg * h * xw + in_deg * h.transpose() * xw);
  }
  Matrix cat(n, x.cols());
  Index col = 0;
  for (const Matrix& h : heads) {
    cat.middleCols(col, h.cols()) = h;
    col += h.cols();
  }
  return cat * wd;
}

}  // namespace

TEST_CASE("hop distances on a line graph", "[graph]") {
  HopDistanceMatrix expect(3, 3);
  expect << 0, 1, 2, U, 0, 1, U, U, 0;
  CHECK(shortest_path_hops(line3()) == expect);
}

TEST_CASE("edgeless graph is unreachable off the diagonal", "[graph]") {
  const HopDistanceMatrix s = shortest_path_hops(RoadGraph(4, {}));
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 4; ++j) CHECK(s(i, j) == (i == j ? 0 : U));
  }
}

TEST_CASE("self-loops do not affect distances", "[graph]") {
  const RoadGraph g(2, {{0, 0, 1.0}, {0, 1, 2.0}});
  CHECK(shortest_path_hops(g)(0, 0) == 0);
  CHECK(shortest_path_hops(g)(0, 1) == 1);
}

TEST_CASE("BFS hop distances match Floyd-Warshall", "[graph]") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<Index> size(1, 30);
  std::uniform_real_distribution<double> dens(0.0, 0.3);
  for (int trial = 0; trial < 50; ++trial) {
    const RoadGraph g = random_graph(size(rng), dens(rng), rng);
    REQUIRE(shortest_path_hops(g) == floyd_warshall_hops(g));
  }
}

TEST_CASE("hop sets of a line graph", "[graph]") {
  const HopMatrix h = hop_adjacency(shortest_path_hops(line3()), 2);
  using P = std::vector<std::pair<Index, Index>>;
  CHECK(h.pairs(1) == P{{0, 1}, {1, 2}});
  CHECK(h.pairs(2) == P{{0, 2}});
  REQUIRE_THROWS(h.pairs(3));
  REQUIRE_THROWS(hop_adjacency(shortest_path_hops(line3()), 0));
}

TEST_CASE("one hop equals the binarized adjacency without self-loops", "[graph]") {
  std::mt19937_64 rng(4);
  const RoadGraph g = random_graph(12, 0.25, rng);
  const Eigen::MatrixXi h1 = hop_adjacency(shortest_path_hops(g), 1).dense(1);
  for (Index i = 0; i < 12; ++i) {
    for (Index j = 0; j < 12; ++j) CHECK(h1(i, j) == (i != j && g.adjacency()(i, j) > 0 ? 1 : 0));
  }
}

TEST_CASE("hop sets are disjoint and cover 1 <= S <= k", "[graph]") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const RoadGraph g = random_graph(15, 0.12, rng);
    const HopDistanceMatrix s = shortest_path_hops(g);
    const HopMatrix h = hop_adjacency(s, 4);
    Eigen::MatrixXi total = Eigen::MatrixXi::Zero(15, 15);
    for (Index i = 1; i <= 4; ++i) total += h.dense(i);
    for (Index a = 0; a < 15; ++a) {
      for (Index b = 0; b < 15; ++b) {
        CHECK(total(a, b) == (s(a, b) >= 1 && s(a, b) <= 4 ? 1 : 0));
        for (Index i = 1; i <= 4; ++i) {
          if (h.dense(i)(a, b)) CHECK(s(a, b) == i);
        }
      }
    }
  }
}

TEST_CASE("degree normalization", "[graph]") {
  Matrix h(2, 2);
  h << 0, 1, 0, 0;
  Matrix out_expect(2, 2), in_expect(2, 2);
  out_expect << 0, 1, 0, 0;
  in_expect << 0, 0, 1, 0;
  CHECK(degree_normalize(h, FlowDirection::kOut) == out_expect);
  CHECK(degree_normalize(h, FlowDirection::kIn) == in_expect);

  std::mt19937_64 rng(2);
  const Matrix a = random_graph(10, 0.3, rng).adjacency();
  for (FlowDirection dir : {FlowDirection::kOut, FlowDirection::kIn}) {
    const Matrix p = degree_normalize(a, dir);
    for (Index i = 0; i < 10; ++i) {
      const double s = p.row(i).sum();
      if (p.row(i).cwiseAbs().maxCoeff() > 0) CHECK(std::abs(s - 1) <= 1e-12);
    }
  }
}

TEST_CASE("diffusion convolution", "[graph]") {
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor({4, 3}, rng);
  const Tensor w = random_tensor({3, 3}, rng);
  const Matrix a = random_graph(4, 0.5, rng).adjacency();
  const Matrix expect0 = 2.0 * (x.matrix() * w.matrix());
  CHECK(diffusion_conv(x, a, 0, w).matrix() == expect0);

  Matrix a2(2, 2);
  a2 << 0, 1, 0, 0;
  const Tensor y = diffusion_conv(Tensor::from_values({2, 1}, {1, 2}), a2, 1, Tensor::from_values({1, 1}, {1}));
  CHECK(y.data() == (Vector(2) << 2, 1).finished());

  const Matrix big = random_graph(6, 0.4, rng).adjacency();
  const Tensor x6 = random_tensor({6, 3}, rng);
  for (int k = 1; k <= 3; ++k) {
    Matrix po = Matrix::Identity(6, 6), pi = Matrix::Identity(6, 6);
    const Matrix to = degree_normalize(big, FlowDirection::kOut), ti = degree_normalize(big, FlowDirection::kIn);
    for (int s = 0; s < k; ++s) {
      po = po * to;
      pi = pi * ti;
    }
    const Matrix ref = (po + pi) * x6.matrix() * w.matrix();
    CHECK((diffusion_conv(x6, big, k, w).matrix() - ref).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("mhdcn on an edgeless graph is zero", "[graph]") {
  std::mt19937_64 rng(1);
  const HopMatrix hops = hop_adjacency(shortest_path_hops(RoadGraph(3, {})), 2);
  MhdcnWeights w{{random_tensor({4, 2}, rng), random_tensor({4, 2}, rng)}, random_tensor({4, 4}, rng)};
  CHECK(mhdcn(random_tensor({3, 4}, rng), hops, w).data().cwiseAbs().maxCoeff() == 0);
}

TEST_CASE("single-hop mhdcn equals one diffusion step", "[graph]") {
  std::mt19937_64 rng(12);
  std::vector<Edge> edges;
  const RoadGraph base = random_graph(6, 0.35, rng);
  for (const Edge& e : base.edges()) {
    if (e.src != e.dst) edges.push_back({e.src, e.dst, 1.0});
  }
  const RoadGraph g(6, edges);
  const Tensor x = random_tensor({6, 4}, rng);
  const Tensor wx = random_tensor({4, 4}, rng);
  const Tensor eye = Tensor::from_matrix(Matrix::Identity(4, 4));
  const Tensor a = mhdcn(x, hop_adjacency(shortest_path_hops(g), 1), {{wx}, eye});
  const Tensor b = diffusion_conv(x, g.adjacency(), 1, wx);
  CHECK((a.data() - b.data()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mhdcn matches a dense reference", "[graph]") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const RoadGraph g = random_graph(5, 0.3, rng);
    const HopDistanceMatrix s = shortest_path_hops(g);
    const HopMatrix hops = hop_adjacency(s, 3);
    MhdcnWeights w;
    std::vector<Matrix> wx;
    for (int i = 0; i < 3; ++i) {
      w.w_x.push_back(random_tensor({6, 2}, rng));
      wx.push_back(w.w_x.back().matrix());
    }
    w.w_d = random_tensor({6, 6}, rng);
    const Tensor x = random_tensor({5, 6}, rng);
    const Matrix ref = mhdcn_reference(x.matrix(), s, wx, w.w_d.matrix());
    CHECK((mhdcn(x, hops, w).matrix() - ref).cwiseAbs().maxCoeff() < 1e-10);

    // The [T x N x F] form applies the same layer per time step.
    const Tensor xt = stack({x, scale(x, -2)}, 0);
    const Tensor yt = mhdcn(xt, hops, w);
    CHECK((select(yt, 0, 1).matrix() + 2 * ref).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("mhdcn is permutation equivariant", "[graph]") {
  std::mt19937_64 rng(17);
  const Index n = 7;
  const RoadGraph g = random_graph(n, 0.3, rng);
  std::vector<Index> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Edge> pe;
  for (const Edge& e : g.edges()) pe.push_back({perm[e.src], perm[e.dst], e.weight});
  const RoadGraph gp(n, pe);

  MhdcnWeights w{{random_tensor({4, 2}, rng), random_tensor({4, 2}, rng)}, random_tensor({4, 4}, rng)};
  const Tensor x = random_tensor({n, 4}, rng);
  Matrix xp(n, 4);
  for (Index i = 0; i < n; ++i) xp.row(perm[i]) = x.matrix().row(i);
  const Matrix y = mhdcn(x, hop_adjacency(shortest_path_hops(g), 2), w).matrix();
  const Matrix yp = mhdcn(Tensor::from_matrix(xp), hop_adjacency(shortest_path_hops(gp), 2), w).matrix();
  for (Index i = 0; i < n; ++i) CHECK((yp.row(perm[i]) - y.row(i)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("mhdcn gradients match finite differences", "[graph]") {
  std::mt19937_64 rng(31);
  const RoadGraph g = random_graph(5, 0.35, rng);
  const HopMatrix hops = hop_adjacency(shortest_path_hops(g), 2);
  MhdcnWeights w{{random_tensor({4, 2}, rng, true), random_tensor({4, 2}, rng, true)},
                 random_tensor({4, 4}, rng, true)};
  const Tensor x = random_tensor({2, 5, 4}, rng, true);
  const Tensor r = random_tensor({2, 5, 4}, rng);
  const auto gc = check_gradients([&] { return sum(mul(mhdcn(x, hops, w), r)); },
                                  {{"x", x}, {"w_x0", w.w_x[0]}, {"w_x1", w.w_x[1]}, {"w_d", w.w_d}});
  INFO(gc.worst);
  CHECK(gc.max_rel_error < 1e-6);
}

TEST_CASE("graph file round trip and errors", "[graph]") {
  const auto p = temp_path("graph.csv");
  {
    std::ofstream out(p);
    out << "from,to,cost\n# comment\n0,1,0.5\n2,0,1\n";
  }
  const RoadGraph g = load_road_graph(p);
  CHECK(g.size() == 3);
  CHECK(g.adjacency()(0, 1) == 0.5);
  CHECK(g.adjacency()(2, 0) == 1);
  save_road_graph(p, RoadGraph(5, {{0, 1, 2.0}}));
  CHECK(load_road_graph(p).size() == 5);
  {
    std::ofstream out(p);
    out << "0,1,1\n0,x,1\n";
  }
  REQUIRE_THROWS_WITH(load_road_graph(p), Catch::Matchers::ContainsSubstring(":2"));
  {
    std::ofstream out(p);
    out << "0,1,-1\n";
  }
  REQUIRE_THROWS(load_road_graph(p));
  std::filesystem::remove(p);
  REQUIRE_THROWS(RoadGraph(2, {{0, 2, 1.0}}));
}
