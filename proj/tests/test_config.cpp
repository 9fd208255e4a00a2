#include <catch_amalgamated.hpp>

#include <fstream>

#include "stjla/config.hpp"
#include "support.hpp"

using namespace stjla;
using Catch::Matchers::ContainsSubstring;

TEST_CASE("key value parsing", "[config]") {
  const KeyValues kv = parse_key_values("# header\nmodel_dim = 64  # trailing\n\n  heads=4\n");
  REQUIRE(kv.size() == 2);
  CHECK(kv[0] == std::pair<std::string, std::string>{"model_dim", "64"});
  CHECK(kv[1].second == "4");
  REQUIRE_THROWS_WITH(parse_key_values("a = 1\nnonsense\n", "cfg"), ContainsSubstring("cfg:2"));
}

TEST_CASE("unknown keys and bad values are named", "[config]") {
  ModelConfig cfg;
  REQUIRE_THROWS_WITH(cfg.apply({{"modle_dim", "3"}}), ContainsSubstring("modle_dim"));
  REQUIRE_THROWS_WITH(cfg.apply({{"heads", "four"}}), ContainsSubstring("heads"));
  REQUIRE_THROWS_WITH(cfg.apply({{"use_ssc", "maybe"}}), ContainsSubstring("use_ssc"));
}

TEST_CASE("validation enforces F = K d and F divisible by k", "[config]") {
  ModelConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.heads = 4;
  REQUIRE_THROWS_WITH(cfg.validate(), ContainsSubstring("heads * head_dim"));
  cfg = ModelConfig{};
  cfg.hops = 3;
  REQUIRE_THROWS_WITH(cfg.validate(), ContainsSubstring("hops"));
  CHECK_NOTHROW(ModelConfig::toy().validate());
  CHECK_NOTHROW(ModelConfig::england().validate());
  CHECK_NOTHROW(ModelConfig::pemsd7().validate());
}

TEST_CASE("config round trips through key values and files", "[config]") {
  ModelConfig a = ModelConfig::england();
  a.learning_rate = 0.1 + 0.2;
  a.seed = 77;
  a.use_dtc = false;
  ModelConfig b;
  b.apply(a.to_key_values());
  CHECK(b.to_key_values() == a.to_key_values());
  CHECK(b.learning_rate == a.learning_rate);

  const auto p = stjla::test::temp_path("cfg.txt");
  write_key_values(p, a.to_key_values());
  CHECK(ModelConfig::from_file(p).to_key_values() == a.to_key_values());
  std::filesystem::remove(p);
}

TEST_CASE("defaults and presets", "[config]") {
  const ModelConfig d;
  CHECK(d.model_dim == 128);
  CHECK(d.heads == 8);
  CHECK(d.head_dim == 16);
  CHECK(d.hops == 8);
  CHECK(d.batch_size == 16);
  CHECK(d.history == 12);
  CHECK(d.horizon == 12);
  CHECK(d.learning_rate == 1e-3);
  CHECK(ModelConfig::england().epochs == 40);
  CHECK(ModelConfig::pemsd7().epochs == 8);
  CHECK(ModelConfig::england().slots_per_day == 96);
  CHECK(ModelConfig::pemsd7().slots_per_day == 288);
}

TEST_CASE("learning-rate schedule", "[config]") {
  const ModelConfig e = ModelConfig::england();
  CHECK(learning_rate_at(e, 1) == 1e-3);
  CHECK(learning_rate_at(e, 24) == 1e-3);
  CHECK(learning_rate_at(e, 25) == Catch::Approx(1e-4).epsilon(1e-12));
  CHECK(learning_rate_at(e, 34) == Catch::Approx(1e-4).epsilon(1e-12));
  CHECK(learning_rate_at(e, 35) == Catch::Approx(1e-5).epsilon(1e-12));
  CHECK(learning_rate_at(e, 40) == Catch::Approx(1e-5).epsilon(1e-12));
  const ModelConfig p = ModelConfig::pemsd7();
  CHECK(learning_rate_at(p, 4) == 1e-3);
  CHECK(learning_rate_at(p, 5) == Catch::Approx(1e-4).epsilon(1e-12));
  CHECK(learning_rate_at(p, 6) == Catch::Approx(1e-5).epsilon(1e-12));
  CHECK(learning_rate_at(p, 8) == Catch::Approx(1e-6).epsilon(1e-12));
}
