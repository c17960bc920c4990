#include <doctest.h>

#include <map>
#include <sstream>

#include "instructpt/error.hpp"
#include "instructpt/metrics.hpp"
#include "instructpt/util.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace instructpt;

namespace {

InstructionResponsePair qa(std::string q, std::string a) { return {std::move(q), std::move(a), PairFormat::FreeForm, {}, {}}; }

double fraction(const std::string& s) {
  auto slash = s.find('/');
  return std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("answer normalization") {
    CHECK(normalize_answer("  The  Cat, sat!  ") == "the cat sat");
    CHECK(normalize_answer("The cat", {true}) == "cat");
    CHECK(answer_tokens("a b  c") == std::vector<std::string>{"a", "b", "c"});
  }

  TEST_CASE("token F1 hand cases") {
    CHECK(token_f1("the cat sat", "the cat sat") == doctest::Approx(1.0));
    CHECK(token_f1("", "") == 1.0);
    CHECK(token_f1("", "x") == 0.0);
    CHECK(token_f1("x", "") == 0.0);
    CHECK(token_f1("a b", "c d") == 0.0);
    // pred {cat, sat}, gold {the, cat, sat, down}: p = 1, r = 1/2.
    CHECK(token_f1("cat sat", "the cat sat down") == doctest::Approx(2.0 / 3.0));
    // multiset: pred has two "a", gold one.
    CHECK(token_f1("a a b", "a b c") == doctest::Approx(2.0 / 3.0));
    CHECK(token_f1("The answer", "answer", {true}) == doctest::Approx(1.0));
    CHECK(token_f1("The answer", "answer") == doctest::Approx(2.0 / 3.0));
  }

  TEST_CASE("token F1 is symmetric and bounded") {
    SeededRng rng(4);
    for (int i = 0; i < 500; ++i) {
      auto a = testing::random_words(rng, 0, 8);
      auto b = testing::random_words(rng, 0, 8);
      const double f = token_f1(a, b);
      CHECK(f == doctest::Approx(token_f1(b, a)));
      CHECK(f >= 0.0);
      CHECK(f <= 1.0);
    }
  }

  TEST_CASE("reports and percentages") {
    auto r = response_accuracy({{"yes", "yes"}, {"no", "yes"}, {"blue sky", "blue"}});
    CHECK(r.count == 3);
    CHECK(r.mean == doctest::Approx((1.0 + 0.0 + 2.0 / 3.0) / 3.0));
    CHECK(make_report({}).mean == 0.0);
    CHECK(format_percent(0.7) == "70.0");
    CHECK(format_percent(0.12345) == "12.3");
    CHECK(format_percent(1.0) == "100.0");
    CHECK(eval_report_to_json(r)["count"] == 3);
  }

  TEST_CASE("greedy matching picks the best pairs first") {
    std::vector<InstructionResponsePair> pred{qa("what color", "red"), qa("how many", "three")};
    std::vector<InstructionResponsePair> gold{qa("how many", "three"), qa("what color", "blue")};
    auto m = greedy_pair_matching(pred, gold);
    REQUIRE(m.size() == 2);
    CHECK(m[0].pred == 1);
    CHECK(m[0].gold == 0);
    CHECK(m[0].f1 == doctest::Approx(1.0));
    CHECK(m[1].pred == 0);
    CHECK(m[1].gold == 1);
    CHECK(pair_set_quality(pred, gold) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
    CHECK(pair_set_quality({}, {}) == 1.0);
    CHECK(pair_set_quality(pred, {}) == 0.0);
    CHECK(pair_set_quality(pred, {gold[0]}) == doctest::Approx(0.5));
  }

  TEST_CASE("greedy matching ties go to the lowest indices") {
    std::vector<InstructionResponsePair> pred{qa("x", "y"), qa("x", "y")};
    std::vector<InstructionResponsePair> gold{qa("x", "y"), qa("x", "y")};
    auto m = greedy_pair_matching(pred, gold);
    REQUIRE(m.size() == 2);
    CHECK(m[0].pred == 0);
    CHECK(m[0].gold == 0);
    CHECK(m[1].pred == 1);
    CHECK(m[1].gold == 1);
  }

  TEST_CASE("greedy matching never exceeds the optimum and stays close") {
    SeededRng rng(12);
    for (int t = 0; t < 150; ++t) {
      std::vector<InstructionResponsePair> pred, gold;
      for (std::size_t i = rng.uniform(5); i > 0; --i) pred.push_back(qa(testing::random_words(rng, 1, 3), testing::random_words(rng, 1, 3)));
      for (std::size_t i = rng.uniform(5); i > 0; --i) gold.push_back(qa(testing::random_words(rng, 1, 3), testing::random_words(rng, 1, 3)));
      const double got = pair_set_quality(pred, gold);
      const double best = oracle::exhaustive_pair_quality(pred, gold);
      CHECK(got <= best + 1e-12);
      // Greedy on a maximum-weight matching is a 1/2 approximation.
      CHECK(got >= best / 2.0 - 1e-12);
    }
  }

  TEST_CASE("concat mode") {
    std::vector<InstructionResponsePair> pred{qa("a", "b")};
    std::vector<InstructionResponsePair> gold{qa("a", "c")};
    CHECK(pair_set_quality(pred, gold, PairQualityMode::Concat) == doctest::Approx(0.5));
    CHECK(flatten_pair(qa("a", "b")) == "a b");
  }

  TEST_CASE("helpfulness prompts") {
    TemplateEntry e{"t", "{text}\n\n{pairs}", "Q: {instruction}{options}\nA: {cot}{response}"};
    auto with = build_helpfulness_prompt("Doc.", {qa("q1", "r1")}, "test?", e);
    CHECK(with == "Doc.\n\nQ: q1\nA: r1\n\nQ: test?\nA: ");
    auto without = build_helpfulness_prompt("Doc.", {}, "test?", e);
    CHECK(without == "Doc.\n\nQ: test?\nA: ");
    std::vector<SynthesisExample> docs{{"D0", {qa("q0", "r0")}, "0", ""}, {"D1", {qa("q1", "r1")}, "1", ""}};
    CHECK(build_random_context_prompt(docs, 0, "t?", e, 3) == "D0\n\nQ: q1\nA: r1\n\nQ: t?\nA: ");
    CHECK_THROWS_AS(build_random_context_prompt({docs[0]}, 0, "t?", e, 3), Error);
  }

  TEST_CASE("domain coverage and overlap per row") {
    DomainLabelSet d{"x", {"a", "b"}, {"b", "c"}};
    CHECK(domain_coverage(d) == doctest::Approx(0.5));
    CHECK(domain_overlap(d) == doctest::Approx(1.0 / 3.0));
    try {
      domain_coverage({"e", {}, {"a"}});
      FAIL("expected EmptyTextDomains");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::EmptyTextDomains);
    }
    try {
      domain_overlap({"e", {}, {}});
      FAIL("expected EmptyUnion");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::EmptyUnion);
    }
    CHECK_FALSE(coverage_multidomain_mean({{"s", {"a"}, {"a"}}}).has_value());
    CHECK(*coverage_multidomain_mean({d}) == doctest::Approx(0.5));
  }

  TEST_CASE("labelled fixture matches the hand-computed sheet") {
    auto rows = load_domain_labels(testing::source_path("data/fixtures/domain_labels.jsonl").string());
    REQUIRE(rows.size() == 20);
    std::istringstream sheet(testing::read_text(testing::source_path("data/fixtures/domain_labels_expected.csv")));
    std::string line;
    std::getline(sheet, line);
    std::size_t i = 0;
    std::map<std::string, double> aggregates;
    while (std::getline(sheet, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cells;
      std::stringstream ss(line);
      for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
      if (cells[0].rfind("mean_", 0) == 0) {
        aggregates[cells[0]] = fraction(cells[4].empty() ? cells[5] : cells[4]);
        continue;
      }
      REQUIRE(cells.size() == 7);
      REQUIRE(i < rows.size());
      CHECK(rows[i].doc_id == cells[0]);
      CHECK(domain_coverage(rows[i]) == doctest::Approx(fraction(cells[4])));
      CHECK(domain_overlap(rows[i]) == doctest::Approx(fraction(cells[5])));
      ++i;
    }
    CHECK(i == 20);
    auto rep = domain_report(rows);
    CHECK(rep.rows == 20);
    REQUIRE(rep.coverage);
    CHECK(*rep.coverage == doctest::Approx(79.0 / 120.0));
    REQUIRE(rep.overlap);
    CHECK(*rep.overlap == doctest::Approx(31.0 / 60.0));
    REQUIRE(rep.coverage_multidomain);
    CHECK(*rep.coverage_multidomain == doctest::Approx(37.0 / 60.0));
    CHECK(rep.multidomain_rows == 10);
    REQUIRE(aggregates.size() == 3);
    CHECK(*rep.coverage == doctest::Approx(aggregates["mean_coverage"]));
    CHECK(*rep.overlap == doctest::Approx(aggregates["mean_overlap"]));
    CHECK(*rep.coverage_multidomain == doctest::Approx(aggregates["mean_coverage_multidomain"]));
    auto j = domain_report_to_json(rep);
    CHECK(j["rows"] == 20);
  }

  TEST_CASE("report tolerates rows without text domains") {
    std::vector<DomainLabelSet> rows{{"a", {}, {"x"}}, {"b", {"x"}, {"x"}}};
    auto rep = domain_report(rows);
    CHECK(rep.rows_without_text_domains == 1);
    CHECK(*rep.coverage == doctest::Approx(1.0));
    CHECK(*rep.overlap == doctest::Approx(0.5));
    CHECK_FALSE(rep.coverage_multidomain.has_value());
    CHECK(domain_report_to_json(rep)["coverage_multidomain"].is_null());
  }
}
