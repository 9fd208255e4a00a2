#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "stjla/checkpoint.hpp"
#include "stjla/ops.hpp"
#include "support.hpp"

using namespace stjla;
namespace fs = std::filesystem;

using stjla::test::temp_path;

TEST_CASE("checkpoint round-trips parameters, metadata and optimizer state", "[checkpoint]") {
  ParameterSet ps;
  const Tensor a = ps.add("a", Tensor::from_values({2, 2}, {1, -2.5, 1e-300, 3.14159}));
  const Tensor b = ps.add("b", Tensor::from_values({3}, {0, 1, 2}));
  AdamState st = AdamState::for_parameters(ps);
  sum(mul(a, a)).backward();
  adam_step(ps, st, 1e-3);

  Checkpoint ck;
  ck.metadata = {{"epoch", "3"}, {"note", "x = y"}};
  append_parameters(ck, ps);
  ck.optimizer = st;
  const fs::path p = temp_path("roundtrip.bin");
  write_checkpoint(p, ck);
  const Checkpoint back = read_checkpoint(p);
  fs::remove(p);

  CHECK(back.meta("epoch") == "3");
  CHECK(back.meta("note") == "x = y");
  CHECK_FALSE(back.meta("missing"));
  REQUIRE(back.arrays.size() == 2);
  CHECK(back.find("a")->shape == Shape{2, 2});
  CHECK(back.find("a")->data == a.data());
  REQUIRE(back.optimizer);
  CHECK(back.optimizer->step == 1);
  CHECK(back.optimizer->m[0] == st.m[0]);
  CHECK(back.optimizer->v[1] == st.v[1]);

  ParameterSet fresh;
  const Tensor a2 = fresh.add("a", Tensor::zeros({2, 2}));
  const Tensor b2 = fresh.add("b", Tensor::zeros({3}));
  load_parameters(back, fresh);
  CHECK(a2.data() == a.data());
  CHECK(b2.data() == b.data());
}

TEST_CASE("loading rejects missing names and shape mismatches", "[checkpoint]") {
  ParameterSet ps;
  ps.add("a", Tensor::zeros({2}));
  Checkpoint ck;
  append_parameters(ck, ps);
  ParameterSet other;
  other.add("b", Tensor::zeros({2}));
  REQUIRE_THROWS_WITH(load_parameters(ck, other), Catch::Matchers::ContainsSubstring("b"));
  ParameterSet wrong;
  wrong.add("a", Tensor::zeros({3}));
  REQUIRE_THROWS(load_parameters(ck, wrong));
}

TEST_CASE("corrupt files are rejected", "[checkpoint]") {
  const fs::path p = temp_path("bad.bin");
  {
    std::ofstream out(p, std::ios::binary);
    out << "NOTACKPT";
  }
  REQUIRE_THROWS_AS(read_checkpoint(p), FormatError);
  Checkpoint ck;
  ck.arrays.push_back({"x", {4}, Vector::Ones(4)});
  write_checkpoint(p, ck);
  fs::resize_file(p, fs::file_size(p) - 5);
  REQUIRE_THROWS_AS(read_checkpoint(p), FormatError);
  fs::remove(p);
  REQUIRE_THROWS(read_checkpoint(temp_path("does_not_exist.bin")));
}
