#include <catch_amalgamated.hpp>

#include <random>

#include "stjla/attention.hpp"
#include "stjla/ops.hpp"
#include "support.hpp"

using namespace stjla;
using namespace stjla::test;

TEST_CASE("joint reshape is time-major and invertible", "[attention]") {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({2, 2, 3}, rng);
  const Tensor tokens = st_joint_reshape(x);
  CHECK(tokens.shape() == Shape{4, 3});
  // token 2 is (t = 1, node = 0) with zero-based indices
  CHECK(tokens.matrix().row(2) == select(select(x, 0, 1), 0, 0).matrix());
  CHECK(st_joint_unreshape(tokens, 2).data() == x.data());
  CHECK(st_joint_unreshape(tokens, 2).shape() == x.shape());
  CHECK(tokens.data().sum() == x.data().sum());
  REQUIRE_THROWS_AS(st_joint_unreshape(tokens, 3), ShapeError);
}

TEST_CASE("softmax attention basics", "[attention]") {
  std::mt19937_64 rng(2);
  const Matrix q = random_matrix(1, 4, rng), k = random_matrix(1, 4, rng), v = random_matrix(1, 4, rng);
  CHECK(softmax_attention(q, k, v) == v);
  Matrix qs = random_matrix(1, 4, rng).replicate(5, 1);
  const Matrix k5 = random_matrix(5, 4, rng), v5 = random_matrix(5, 3, rng);
  const Matrix out = softmax_attention(qs, k5, v5);
  for (Index i = 1; i < 5; ++i) CHECK((out.row(i) - out.row(0)).cwiseAbs().maxCoeff() < 1e-15);
  REQUIRE_THROWS_AS(softmax_attention(q, random_matrix(1, 3, rng), v), ShapeError);
}

TEST_CASE("softmax attention equals its kernel form", "[attention]") {
  std::mt19937_64 rng(3);
  const Matrix q = random_matrix(8, 4, rng), k = random_matrix(8, 4, rng), v = random_matrix(8, 4, rng);
  const Matrix a = softmax_attention(q, k, v);
  const Matrix b = similarity_attention(q, k, v, ScaledExpSimilarity(4));
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("feature map", "[attention]") {
  const Matrix z = Matrix::Zero(3, 2);
  CHECK(feature_map_exp(z, FeatureShift::kNone) == Matrix::Ones(3, 2));
  CHECK(feature_map_exp(z, FeatureShift::kRowMax) == Matrix::Ones(3, 2));
  std::mt19937_64 rng(4);
  const Matrix x = random_matrix(6, 3, rng, -800, 800);
  for (FeatureShift s : {FeatureShift::kRowMax, FeatureShift::kGlobalMax}) {
    const Matrix f = feature_map_exp(x, s);
    CHECK(f.allFinite());
    CHECK(f.minCoeff() >= 0);
  }
  CHECK(feature_map_exp(random_matrix(6, 3, rng, -5, 5), FeatureShift::kNone).minCoeff() > 0);
}

TEST_CASE("linear attention basics", "[attention]") {
  std::mt19937_64 rng(5);
  const Matrix v = random_matrix(1, 3, rng);
  CHECK((linear_attention(random_matrix(1, 3, rng), random_matrix(1, 3, rng), v) - v).cwiseAbs().maxCoeff() < 1e-15);
  const Matrix qs = random_matrix(1, 3, rng).replicate(4, 1);
  const Matrix out = linear_attention(qs, random_matrix(6, 3, rng), random_matrix(6, 2, rng));
  for (Index i = 1; i < 4; ++i) CHECK(out.row(i) == out.row(0));
}

TEST_CASE("linear attention equals the double sum", "[attention]") {
  std::mt19937_64 rng(6);
  const Matrix q = random_matrix(32, 8, rng), k = random_matrix(32, 8, rng), v = random_matrix(32, 8, rng);
  CHECK((linear_attention(q, k, v) - double_sum_linear_attention(q, k, v)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("stabilization shifts cancel", "[attention]") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix q = random_matrix(16, 4, rng, -5, 5), k = random_matrix(20, 4, rng, -5, 5);
    const Matrix v = random_matrix(20, 3, rng);
    CHECK((linear_attention(q, k, v, true) - linear_attention(q, k, v, false)).cwiseAbs().maxCoeff() < 1e-10);
  }
  // Unshifted exp overflows here; the shifted form stays finite.
  const Matrix q = random_matrix(4, 2, rng, 700, 760), k = random_matrix(4, 2, rng, 700, 760);
  CHECK(linear_attention(q, k, random_matrix(4, 2, rng)).allFinite());
}

TEST_CASE("linear attention rejects degenerate input", "[attention]") {
  Matrix q = Matrix::Zero(2, 2);
  q(1, 0) = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_WITH(linear_attention(q, Matrix::Zero(2, 2), Matrix::Zero(2, 2)),
                      Catch::Matchers::ContainsSubstring("row 1"));
}

TEST_CASE("linear attention outputs stay in the hull of V", "[attention]") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix v = random_matrix(12, 3, rng, -4, 4);
    const Matrix out = linear_attention(random_matrix(9, 5, rng, -3, 3), random_matrix(12, 5, rng, -3, 3), v);
    for (Index j = 0; j < 3; ++j) {
      CHECK(out.col(j).minCoeff() >= v.col(j).minCoeff() - 1e-10);
      CHECK(out.col(j).maxCoeff() <= v.col(j).maxCoeff() + 1e-10);
    }
  }
}

TEST_CASE("differentiable linear attention matches the kernel", "[attention]") {
  std::mt19937_64 rng(9);
  const Tensor q = random_tensor({7, 4}, rng), k = random_tensor({5, 4}, rng), v = random_tensor({5, 3}, rng);
  const Matrix ref = linear_attention(q.matrix(), k.matrix(), v.matrix());
  CHECK((linear_attention(q, k, v).matrix() - ref).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("linear attention gradients match finite differences", "[attention]") {
  std::mt19937_64 rng(10);
  const Tensor q = random_tensor({6, 3}, rng, true), k = random_tensor({5, 3}, rng, true);
  const Tensor v = random_tensor({5, 2}, rng, true), r = random_tensor({6, 2}, rng);
  const auto gc = check_gradients([&] { return sum(mul(linear_attention(q, k, v), r)); },
                                  {{"q", q}, {"k", k}, {"v", v}});
  INFO(gc.worst);
  CHECK(gc.max_rel_error < 1e-6);
}

TEST_CASE("single identity head reduces to linear attention", "[attention]") {
  std::mt19937_64 rng(11);
  const Tensor eye = Tensor::from_matrix(Matrix::Identity(4, 4));
  const AttentionParams p{{eye}, {eye}, {eye}, eye};
  const Tensor x = random_tensor({6, 4}, rng);
  const Tensor a = multi_head_attention(x, std::nullopt, p, {1, 4});
  CHECK((a.matrix() - linear_attention(x.matrix(), x.matrix(), x.matrix())).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("multi-head attention shapes and cross attention", "[attention]") {
  std::mt19937_64 rng(12);
  AttentionParams p;
  for (int h = 0; h < 2; ++h) {
    p.w_q.push_back(random_tensor({4, 2}, rng, true));
    p.w_k.push_back(random_tensor({4, 2}, rng, true));
    p.w_v.push_back(random_tensor({4, 2}, rng, true));
  }
  p.w_o = random_tensor({4, 4}, rng, true);
  const Tensor x = random_tensor({5, 4}, rng, true);
  const Tensor kv = random_tensor({9, 4}, rng, true);
  CHECK(multi_head_attention(x, kv, p, {2, 2}).shape() == Shape{5, 4});
  REQUIRE_THROWS_AS(multi_head_attention(x, random_tensor({9, 3}, rng), p, {2, 2}), ShapeError);

  const Tensor r = random_tensor({5, 4}, rng);
  const auto gc = check_gradients([&] { return sum(mul(multi_head_attention(x, kv, p, {2, 2}), r)); },
                                  {{"x", x}, {"kv", kv}, {"w_q0", p.w_q[0]}, {"w_k1", p.w_k[1]},
                                   {"w_v0", p.w_v[0]}, {"w_o", p.w_o}});
  INFO(gc.worst);
  CHECK(gc.max_rel_error < 1e-4);
}
