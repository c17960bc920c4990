#include <doctest.h>

#include "instructpt/error.hpp"
#include "instructpt/util.hpp"
#include "test_support.hpp"

using namespace instructpt;

namespace {

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("help and unknown commands") {
    testing::TempDir dir("clihelp");
    CHECK(testing::run_cli("--help", dir / "out", dir / "err") == 0);
    CHECK(read_file(dir / "out").find("synthesize") != std::string::npos);
    CHECK(testing::run_cli("frobnicate", dir / "out", dir / "err") != 0);
  }

  TEST_CASE("format renders and parses back") {
    testing::TempDir dir("clifmt");
    const auto in = testing::source_path("data/fixtures/table7_examples.jsonl");
    REQUIRE(testing::run_cli("format --in " + q(in) + " --out " + q(dir / "r.jsonl"), {}, dir / "err") == 0);
    auto rendered = read_jsonl((dir / "r.jsonl").string());
    REQUIRE(rendered.size() == 2);
    std::string joined = rendered[0]["text"].get<std::string>() + rendered[1]["text"].get<std::string>();
    CHECK(joined == testing::read_text(testing::source_path("data/fixtures/table7_expected.txt")));
    REQUIRE(testing::run_cli("format --parse --in " + q(dir / "r.jsonl") + " --out " + q(dir / "p.jsonl"), {},
                             dir / "err") == 0);
    auto orig = read_jsonl(in.string());
    auto parsed = read_jsonl((dir / "p.jsonl").string());
    REQUIRE(parsed.size() == orig.size());
    for (std::size_t i = 0; i < orig.size(); ++i) {
      CHECK(example_from_json(parsed[i]) == example_from_json(orig[i]));
    }
  }

  TEST_CASE("synthesize, assemble and mix chained through files") {
    testing::TempDir dir("clichain");
    const auto corpus = testing::source_path("data/fixtures/nine_docs.jsonl");
    REQUIRE(testing::run_cli("synthesize --corpus " + q(corpus) + " --rounds 3 --seed 7 --out " + q(dir / "syn"), {},
                             dir / "err") == 0);
    auto summary = json::parse(read_file(dir / "err"));
    CHECK(summary["chains"] == 3);
    REQUIRE(testing::run_cli("assemble --chains " + q(dir / "syn/chains.jsonl") + " --out " + q(dir / "aug.jsonl"), {},
                             dir / "err") == 0);
    CHECK(read_jsonl((dir / "aug.jsonl").string()).size() == 3);
    write_file_atomic(dir / "mix.json", json{{"seed", 1},
                                             {"sources",
                                              {{{"stream_id", "aug"}, {"path", "aug.jsonl"}, {"repeat", 4}, {"role", "augmented"}}}}}
                                            .dump());
    REQUIRE(testing::run_cli("mix --spec " + q(dir / "mix.json") + " --out " + q(dir / "mixed.jsonl"), {},
                             dir / "err") == 0);
    CHECK(read_lines((dir / "mixed.jsonl").string()).size() == 12);
    CHECK(std::filesystem::exists(dir / "mixed.jsonl.manifest.json"));
  }

  TEST_CASE("errors carry the code") {
    testing::TempDir dir("clierr");
    write_file_atomic(dir / "bad.json", R"({"fraction": 0, "corpus": "missing.jsonl"})");
    CHECK(testing::run_cli("validate --config " + q(dir / "bad.json"), dir / "out", dir / "err") == 1);
    CHECK(read_file(dir / "err").find("ConfigInvalid") != std::string::npos);
    CHECK(testing::run_cli("--json-errors validate --config " + q(dir / "bad.json"), dir / "out", dir / "err") == 1);
    auto j = json::parse(read_file(dir / "err"));
    CHECK(j["error"]["code"] == "ConfigInvalid");
    CHECK(j["error"]["violations"].size() >= 2);
  }

  TEST_CASE("validate accepts the shipped config") {
    testing::TempDir dir("clival");
    CHECK(testing::run_cli("validate --config " + q(testing::source_path("configs/example_pipeline.json")), dir / "out",
                           dir / "err") == 0);
  }

  TEST_CASE("eval subcommands") {
    testing::TempDir dir("clieval");
    testing::write_jsonl(dir / "pred.jsonl", {json("the cat sat"), json{{"response", "blue"}}});
    testing::write_jsonl(dir / "gold.jsonl", {json("cat sat"), json{{"response", "red"}}});
    REQUIRE(testing::run_cli("eval f1 --pred " + q(dir / "pred.jsonl") + " --gold " + q(dir / "gold.jsonl"),
                             dir / "out", dir / "err") == 0);
    auto r = json::parse(read_file(dir / "out"));
    CHECK(r["count"] == 2);
    CHECK(r["mean"].get<double>() == doctest::Approx(0.4));
    REQUIRE(testing::run_cli("eval domains --labels " + q(testing::source_path("data/fixtures/domain_labels.jsonl")),
                             dir / "out", dir / "err") == 0);
    auto d = json::parse(read_file(dir / "out"));
    CHECK(d["coverage"].get<double>() == doctest::Approx(79.0 / 120.0));
  }

  TEST_CASE("contam reports a delta") {
    testing::TempDir dir("clicontam");
    const std::string leak = "a benchmark passage long enough to exceed the fifty character probe length easily";
    testing::write_jsonl(dir / "bench.jsonl", {json{{"id", "x"}, {"text", leak}}});
    testing::write_jsonl(dir / "aug.jsonl", {json{{"text", "intro " + leak}}});
    testing::write_jsonl(dir / "raw.jsonl", {json{{"text", "nothing here"}}});
    REQUIRE(testing::run_cli("contam --eval " + q(dir / "bench.jsonl") + " --train " + q(dir / "aug.jsonl") +
                                 " --train " + q(dir / "raw.jsonl") + " --mode exhaustive --delta aug,raw",
                             dir / "out", dir / "err") == 0);
    auto j = json::parse(read_file(dir / "out"));
    CHECK(j["deltas"][0]["delta"] == 1);
  }
}
