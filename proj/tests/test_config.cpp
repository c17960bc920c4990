#include <doctest.h>

#include "instructpt/error.hpp"
#include "instructpt/config.hpp"
#include "instructpt/util.hpp"
#include "test_support.hpp"

using namespace instructpt;

namespace {

std::vector<std::string> violations_of(const json& j, const std::filesystem::path& base) {
  try {
    config_from_json(j, base);
  } catch (const ConfigInvalid& e) {
    return e.violations();
  }
  return {};
}

bool mentions(const std::vector<std::string>& v, const std::string& needle) {
  for (const auto& s : v) {
    if (s.find(needle) != std::string::npos) return true;
  }
  return false;
}

json base_config() {
  return {{"corpus", "data/fixtures/nine_docs.jsonl"}, {"out_dir", "out/x"}};
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("shipped example config is valid") {
    auto cfg = validate_config(testing::source_path("configs/example_pipeline.json"));
    CHECK(cfg.num_rounds == 3);
    CHECK(cfg.seed == 7);
    CHECK(cfg.backend.url == "stub:random?pairs=2&words=6");
    CHECK(cfg.backend.in_flight == 8);
    REQUIRE(cfg.template_pool);
    CHECK(std::filesystem::exists(*cfg.template_pool));
    CHECK(std::filesystem::exists(cfg.corpus));
  }

  TEST_CASE("defaults") {
    auto cfg = config_from_json(base_config(), testing::source_path(""));
    CHECK(cfg.num_rounds == 2);
    CHECK(cfg.fraction == 1.0);
    CHECK(cfg.backend.in_flight == 16);
    CHECK(cfg.backend.max_new_tokens == 700);
    CHECK(cfg.backend.temperature == 0.0);
    CHECK(cfg.tuning_max_len == 2048);
    CHECK(cfg.inference_max_len == 4096);
    CHECK_FALSE(cfg.template_pool);
    auto opts = synthesis_options(cfg);
    CHECK(opts.limits.retry.max_retries == 3);
    CHECK(opts.limits.retry.initial_delay == std::chrono::milliseconds(1000));
  }

  TEST_CASE("zero fraction is rejected") {
    auto j = base_config();
    j["fraction"] = 0;
    CHECK(mentions(violations_of(j, testing::source_path("")), "fraction"));
  }

  TEST_CASE("missing template pool is named") {
    auto j = base_config();
    j["template_pool"] = "no/such/pool.json";
    auto v = violations_of(j, testing::source_path(""));
    CHECK(mentions(v, "template_pool"));
    CHECK(mentions(v, "no/such/pool.json"));
  }

  TEST_CASE("every violation is reported at once") {
    json j = {{"num_rounds", 0},
              {"fraction", 2},
              {"colour", "blue"},
              {"backend", {{"in_flight", 0}, {"max_new_tokens", 5000}, {"bogus", 1}}},
              {"token_counter", "bpe"},
              {"sanitize", "maybe"}};
    auto v = violations_of(j, testing::source_path(""));
    for (const char* key : {"corpus", "out_dir", "num_rounds", "fraction", "colour", "backend.in_flight",
                            "max_len.inference", "backend.bogus", "token_counter", "sanitize"}) {
      CHECK_MESSAGE(mentions(v, key), key);
    }
  }

  TEST_CASE("bad sentinels are a violation") {
    auto j = base_config();
    j["sentinels"] = {{"example_open", ""}};
    CHECK(mentions(violations_of(j, testing::source_path("")), "sentinels"));
  }

  TEST_CASE("unreadable and unparsable files") {
    testing::TempDir dir("cfg");
    CHECK_THROWS_AS(validate_config(dir / "absent.json"), ConfigInvalid);
    write_file_atomic(dir / "broken.json", "{");
    CHECK_THROWS_AS(validate_config(dir / "broken.json"), ConfigInvalid);
  }

  TEST_CASE("config JSON round trip") {
    auto cfg = validate_config(testing::source_path("configs/example_pipeline.json"));
    auto again = config_from_json(config_to_json(cfg), "/");
    CHECK(config_to_json(again) == config_to_json(cfg));
  }
}
