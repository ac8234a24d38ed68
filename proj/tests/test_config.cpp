#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "policylab/config.hpp"
#include "policylab/error.hpp"

using namespace policylab;
using json = nlohmann::json;

namespace {

json minimal() {
  return json{{"data", {{"synthetic", {{"n", 200}, {"d", 4}}}}}, {"decision", {{"direction", "lower-better"}}}};
}

}  // namespace

TEST_CASE("minimal config parses and validates") {
  const auto c = PipelineConfig::from_json(minimal());
  c.validate();
  REQUIRE(c.data.synthetic);
  CHECK(c.data.synthetic->n == 200);
  CHECK(c.rule().direction == Direction::LowerBetter);
  CHECK(c.learners.count("ridge") == 1);
  CHECK(c.cate.primary == "T-ridge");
}

TEST_CASE("unknown keys are rejected at every level") {
  auto j = minimal();
  j["bogus"] = 1;
  CHECK_THROWS_AS(PipelineConfig::from_json(j), ConfigError);
  j = minimal();
  j["uncertainty"] = {{"alpha", 0.9}};
  CHECK_THROWS_AS(PipelineConfig::from_json(j), ConfigError);
  j = minimal();
  j["data"]["synthetic"]["outcome"] = {{"lamda", 0.5}};
  CHECK_THROWS_AS(PipelineConfig::from_json(j), ConfigError);
}

TEST_CASE("decision direction has no default") {
  auto j = minimal();
  j.erase("decision");
  const auto c = PipelineConfig::from_json(j);
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("invalid references fail validation") {
  auto j = minimal();
  j["cate"] = {{"primary", "T-forest"}};
  CHECK_THROWS_AS(PipelineConfig::from_json(j).validate(), ConfigError);

  j = minimal();
  j["cate"] = {{"learners", json::array({"ridge", "nope"})}};
  CHECK_THROWS_AS(PipelineConfig::from_json(j).validate(), ConfigError);

  j = minimal();
  j["stages"] = {{"skip", json::array({"ingest"})}};
  CHECK_THROWS_AS(PipelineConfig::from_json(j).validate(), ConfigError);

  j = minimal();
  j["data"]["path"] = "cohort.csv";
  CHECK_THROWS_AS(PipelineConfig::from_json(j).validate(), ConfigError);

  j = minimal();
  j["simulation"] = {{"primary", "T"}};
  CHECK_THROWS_AS(PipelineConfig::from_json(j).validate(), ConfigError);

  j = minimal();
  j["learners"] = {{"clf", {{"type", "logistic"}}}};
  j["cate"] = {{"learners", json::array({"clf"})}, {"primary", "T-clf"}};
  CHECK_THROWS_AS(PipelineConfig::from_json(j).validate(), ConfigError);
}

TEST_CASE("overrides set nested keys with JSON or string values") {
  auto j = minimal();
  apply_override(j, "uncertainty.lambda=1.5");
  apply_override(j, "deferral.mode=inclusive");
  apply_override(j, "cate.learners=[\"ridge\"]");
  CHECK(j["uncertainty"]["lambda"].get<double>() == 1.5);
  CHECK(j["deferral"]["mode"].get<std::string>() == "inclusive");
  const auto c = PipelineConfig::from_json(j);
  CHECK(c.uncertainty.lambda == 1.5);
  CHECK(c.deferral_mode == DeferralMode::Inclusive);
  CHECK(c.cate.learners == std::vector<std::string>{"ridge"});
  CHECK_THROWS_AS(apply_override(j, "novalue"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "a..b=1"), ConfigError);
}

TEST_CASE("to_json round-trips and the hash tracks every value") {
  const auto c = PipelineConfig::from_json(minimal());
  const auto again = PipelineConfig::from_json(c.to_json());
  CHECK(again.to_json() == c.to_json());
  CHECK(config_hash(again) == config_hash(c));

  auto j = minimal();
  apply_override(j, "evaluation.bootstrap=999");
  CHECK(config_hash(PipelineConfig::from_json(j)) != config_hash(c));
}

TEST_CASE("FNV-1a reference values") {
  // Published 64-bit FNV-1a test vectors.
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("load_config applies overrides before validation") {
  const auto dir = std::filesystem::temp_directory_path() / "policylab_test_config";
  std::filesystem::create_directories(dir);
  const auto path = dir / "c.json";
  auto j = minimal();
  j.erase("decision");
  std::ofstream(path) << j.dump();
  CHECK_THROWS_AS(load_config(path), ConfigError);
  const auto c = load_config(path, {"decision.direction=higher-better"});
  CHECK(c.rule().direction == Direction::HigherBetter);
  CHECK(c.base_dir == dir);

  std::ofstream(path) << "{ not json";
  CHECK_THROWS_AS(load_config(path), ConfigError);
  CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
}
