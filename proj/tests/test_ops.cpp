#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "stjla/ops.hpp"
#include "support.hpp"

using namespace stjla;
using stjla::test::check_gradients;
using stjla::test::random_tensor;

TEST_CASE("matmul values", "[ops]") {
  const Tensor i2 = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  const Tensor b = Tensor::from_values({2, 2}, {3, 4, 5, 6});
  CHECK(matmul(i2, b).data() == b.data());
  const Tensor r = matmul(Tensor::from_values({1, 2}, {1, 2}), Tensor::from_values({2, 1}, {3, 4}));
  CHECK(r.item() == 11);
}

TEST_CASE("matmul shape error names both shapes", "[ops]") {
  const Tensor a = Tensor::zeros({2, 3});
  REQUIRE_THROWS_WITH(matmul(a, a), Catch::Matchers::ContainsSubstring("[2x3] and [2x3]"));
}

TEST_CASE("elementwise values", "[ops]") {
  CHECK(sigmoid(Tensor::scalar(0)).item() == 0.5);
  const Tensor c = concat({Tensor::from_values({2, 1}, {1, 2}), Tensor::from_values({2, 1}, {3, 4})}, 1);
  CHECK(c.shape() == Shape{2, 2});
  CHECK(c.data() == (Vector(4) << 1, 3, 2, 4).finished());
  REQUIRE_THROWS_AS(reshape(c, {3}), ShapeError);
  REQUIRE_THROWS_AS(add(c, Tensor::zeros({3})), ShapeError);
  REQUIRE_THROWS_AS(concat({c, Tensor::zeros({3, 2})}, 1), ShapeError);
}

TEST_CASE("broadcast add over a trailing axis", "[ops]") {
  const Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::from_values({2}, {10, 20});
  CHECK(add(a, b).data() == (Vector(4) << 11, 22, 13, 24).finished());
}

TEST_CASE("softmax values and stability", "[ops]") {
  const Tensor s0 = softmax(Tensor::from_values({2}, {0, 0}), 0);
  CHECK(s0.data()[0] == 0.5);
  const Tensor big = softmax(Tensor::from_values({2}, {1000, 1000}), 0);
  CHECK(big.data()[0] == 0.5);
  CHECK(big.data()[1] == 0.5);
  const Tensor s = softmax(Tensor::from_values({2}, {0, std::log(3.0)}), 0);
  CHECK(s.data()[0] == Catch::Approx(0.25).margin(1e-15));
  CHECK(s.data()[1] == Catch::Approx(0.75).margin(1e-15));
}

TEST_CASE("softmax rows sum to one and are shift invariant", "[ops]") {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({4, 5, 6}, rng, false, -20, 20);
  for (Index axis : {0, 1, 2}) {
    const Tensor s = softmax(x, axis);
    CHECK(s.data().minCoeff() >= 0);
    const Tensor shifted = softmax(add_scalar(x, 123.0), axis);
    CHECK((s.data() - shifted.data()).cwiseAbs().maxCoeff() <= 1e-12);
  }
  const Tensor s = softmax(x, 2);
  for (Index r = 0; r < 20; ++r) CHECK(std::abs(s.matrix().row(r).sum() - 1) <= 1e-12);
}

TEST_CASE("l1 loss is a sum of absolute differences", "[ops]") {
  CHECK(l1_loss(Tensor::from_values({1, 2}, {1, 2}), Tensor::zeros({1, 2})).item() == 3);
  const Tensor x = Tensor::from_values({2}, {1.5, -2});
  CHECK(l1_loss(x, x).item() == 0);
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor({2, 2}, rng), b = random_tensor({2, 2}, rng);
  double brute = 0;
  for (Index i = 0; i < 4; ++i) brute += std::abs(a.data()[i] - b.data()[i]);
  CHECK(l1_loss(a, b).item() == Catch::Approx(brute).epsilon(1e-15));
  REQUIRE_THROWS_AS(l1_loss(a, Tensor::zeros({4})), ShapeError);
}

TEST_CASE("l1 subgradient is zero at ties", "[ops]") {
  Tensor p = Tensor::from_values({2}, {1, 3}, true);
  l1_loss(p, Tensor::from_values({2}, {1, 2})).backward();
  CHECK(p.grad()[0] == 0);
  CHECK(p.grad()[1] == 1);
}

TEST_CASE("ops do not mutate inputs", "[ops]") {
  std::mt19937_64 rng(5);
  const Tensor a = random_tensor({3, 4}, rng, true);
  const Vector before = a.data();
  sum(softmax(tanh(mul(a, a)), 1)).backward();
  CHECK(a.data() == before);
}

TEST_CASE("gradients match finite differences", "[ops]") {
  std::mt19937_64 rng(11);
  const Tensor a = random_tensor({3, 4}, rng, true);
  const Tensor b = random_tensor({4, 2}, rng, true);
  const Tensor c = random_tensor({3, 4}, rng, true);
  const Tensor bias = random_tensor({4}, rng, true);
  const Tensor r = random_tensor({3, 2}, rng);  // weights the output so the loss is not symmetric
  const Tensor rs = random_tensor({3, 4}, rng);
  const std::vector<std::pair<std::string, Tensor>> ab{{"a", a}, {"b", b}};
  const std::vector<std::pair<std::string, Tensor>> ac{{"a", a}, {"c", c}};

  struct Case {
    const char* name;
    std::function<Tensor()> loss;
    std::vector<std::pair<std::string, Tensor>> leaves;
    double tol;
  };
  const std::vector<Case> cases{
      {"matmul", [&] { return sum(mul(matmul(a, b), r)); }, ab, 1e-6},
      {"linear", [&] { return sum(mul(linear(a, b), r)); }, ab, 1e-6},
      {"transpose", [&] { return sum(mul(transpose(matmul(a, b)), transpose(r))); }, ab, 1e-6},
      {"add", [&] { return sum(mul(add(a, c), rs)); }, ac, 1e-6},
      {"add broadcast", [&] { return sum(mul(add(a, bias), rs)); }, {{"a", a}, {"bias", bias}}, 1e-6},
      {"sub", [&] { return sum(mul(sub(a, c), rs)); }, ac, 1e-6},
      {"mul", [&] { return sum(mul(mul(a, c), rs)); }, ac, 1e-6},
      {"div", [&] { return sum(mul(div(a, add_scalar(mul(c, c), 1.0)), rs)); }, ac, 1e-6},
      {"sigmoid", [&] { return sum(mul(sigmoid(a), rs)); }, {{"a", a}}, 1e-6},
      {"tanh", [&] { return sum(mul(tanh(a), rs)); }, {{"a", a}}, 1e-6},
      {"exp", [&] { return sum(mul(exp(a), rs)); }, {{"a", a}}, 1e-6},
      {"one_minus", [&] { return sum(mul(one_minus(a), rs)); }, {{"a", a}}, 1e-6},
      {"mean", [&] { return mean(mul(a, a)); }, {{"a", a}}, 1e-6},
      {"softmax", [&] { return sum(mul(softmax(a, 1), rs)); }, {{"a", a}}, 1e-6},
      {"softmax axis 0", [&] { return sum(mul(softmax(a, 0), rs)); }, {{"a", a}}, 1e-6},
      {"reshape", [&] { return sum(mul(reshape(a, {4, 3}), reshape(rs, {4, 3}))); }, {{"a", a}}, 1e-6},
      {"concat", [&] { return sum(mul(concat({a, c}, 1), concat({rs, rs}, 1))); }, ac, 1e-6},
      {"stack", [&] { return sum(mul(stack({a, c}, 0), stack({rs, rs}, 0))); }, ac, 1e-6},
      {"slice", [&] { return sum(mul(slice(a, 1, 1, 2), slice(rs, 1, 0, 2))); }, {{"a", a}}, 1e-6},
      {"select", [&] { return sum(mul(select(a, 0, 1), select(rs, 0, 2))); }, {{"a", a}}, 1e-6},
      {"expand", [&] { return sum(mul(expand(bias, 0, 3), rs)); }, {{"bias", bias}}, 1e-6},
      {"abs", [&] { return sum(mul(abs(a), rs)); }, {{"a", a}}, 1e-6},
  };
  for (const Case& c : cases) {
    INFO(c.name);
    const auto g = check_gradients(c.loss, c.leaves);
    INFO(g.worst);
    CHECK(g.max_rel_error < c.tol);
  }
}
