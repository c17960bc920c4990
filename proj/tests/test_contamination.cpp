#include <doctest.h>

#include "instructpt/error.hpp"
#include "instructpt/contamination.hpp"
#include "instructpt/util.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace instructpt;

namespace {

struct Corpus {
  std::vector<std::string> docs;
  std::vector<std::string> examples;
};

// Examples are half fresh text, half copies of document spans with case and
// spacing perturbed, so both outcomes are common.
Corpus make_corpus(std::uint64_t seed, std::size_t n_docs, std::size_t n_examples) {
  SeededRng rng(seed);
  Corpus c;
  for (std::size_t i = 0; i < n_docs; ++i) c.docs.push_back(testing::random_words(rng, 30, 120));
  for (std::size_t i = 0; i < n_examples; ++i) {
    std::string ex;
    if (rng.uniform(2) == 0) {
      ex = testing::random_words(rng, 2, 25);
    } else {
      const auto& d = c.docs[rng.uniform(c.docs.size())];
      const auto start = rng.uniform(d.size() / 2);
      const auto len = 5 + rng.uniform(std::min<std::size_t>(120, d.size() - start - 1));
      std::string span = d.substr(start, len);
      for (auto& ch : span) {
        if (ch == ' ' && rng.uniform(4) == 0) ch = '\n';
        if (rng.uniform(3) == 0) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      }
      ex = testing::random_words(rng, 0, 3) + " " + span;
    }
    c.examples.push_back(ex);
  }
  return c;
}

SubstringIndex build_index(const std::vector<std::string>& docs, std::size_t window, std::size_t stride) {
  SubstringIndex idx(window, stride);
  for (const auto& d : docs) idx.add(d);
  idx.build(2);
  return idx;
}

void check_evidence(const ExampleCheck& r, const std::string& example, const SubstringIndex& idx) {
  REQUIRE(r.evidence);
  const auto norm = normalize_for_contam(example);
  const auto& ev = *r.evidence;
  CHECK(norm.substr(ev.probe_offset, ev.length) == idx.document(ev.doc).substr(ev.doc_offset, ev.length));
}

}  // namespace

TEST_SUITE("contamination") {
  TEST_CASE("normalization") {
    CHECK(normalize_for_contam("A  b\t\nC ") == "a b c ");
    CHECK(normalize_for_contam("  x") == " x");
    SeededRng rng(1);
    for (int i = 0; i < 200; ++i) {
      auto t = testing::random_text(rng);
      const auto n = normalize_for_contam(t);
      CHECK(normalize_for_contam(n) == n);
      CHECK(n == oracle::normalize(t));
    }
  }

  TEST_CASE("index parameters are validated") {
    CHECK_THROWS_AS(SubstringIndex(8, 1), Error);
    CHECK_THROWS_AS(SubstringIndex(20, 0), Error);
    CHECK_THROWS_AS(SubstringIndex(20, 21), Error);
    CHECK(SubstringIndex(20, 4).probe_length() == 23);
  }

  TEST_CASE("exhaustive mode agrees with the naive search") {
    for (std::size_t window : {16u, 24u, 50u}) {
      for (std::size_t stride : {1u, 4u, 16u}) {
        if (stride > window) continue;
        auto c = make_corpus(window * 31 + stride, 30, 150);
        auto idx = build_index(c.docs, window, stride);
        std::vector<std::string> norm_docs;
        for (const auto& d : c.docs) norm_docs.push_back(oracle::normalize(d));
        ContamConfig cfg;
        cfg.window = window;
        cfg.stride = stride;
        std::size_t hits = 0;
        for (std::size_t i = 0; i < c.examples.size(); ++i) {
          const auto got = check_example(c.examples[i], idx, cfg, i);
          const bool want = oracle::naive_contaminated(c.examples[i], norm_docs, idx.probe_length());
          CHECK_MESSAGE(got.contaminated == want, "window " << window << " stride " << stride << " example " << i);
          if (got.contaminated) {
            ++hits;
            check_evidence(got, c.examples[i], idx);
          }
        }
        CHECK(hits > 10);
        CHECK(hits < c.examples.size());
      }
    }
  }

  TEST_CASE("sampled probes only report true hits") {
    auto c = make_corpus(99, 40, 300);
    auto idx = build_index(c.docs, 50, 16);
    auto fast = ContamConfig::fast();
    auto exhaustive = ContamConfig::exhaustive();
    exhaustive.stride = 16;
    CHECK(fast.samples == 3);
    CHECK(fast.stride == 16);
    for (std::size_t i = 0; i < c.examples.size(); ++i) {
      auto f = check_example(c.examples[i], idx, fast, i);
      auto e = check_example(c.examples[i], idx, exhaustive, i);
      if (f.contaminated) {
        CHECK(e.contaminated);
        check_evidence(f, c.examples[i], idx);
      }
    }
  }

  TEST_CASE("more training data never lowers contamination") {
    auto c = make_corpus(7, 40, 200);
    std::vector<std::string> half(c.docs.begin(), c.docs.begin() + 20);
    auto small = build_index(half, 24, 1);
    auto big = build_index(c.docs, 24, 1);
    ContamConfig cfg;
    cfg.window = 24;
    std::size_t n_small = 0, n_big = 0;
    for (std::size_t i = 0; i < c.examples.size(); ++i) {
      const bool s = check_example(c.examples[i], small, cfg, i).contaminated;
      const bool b = check_example(c.examples[i], big, cfg, i).contaminated;
      if (s) CHECK(b);
      n_small += s;
      n_big += b;
    }
    CHECK(n_big >= n_small);
  }

  TEST_CASE("short and empty examples") {
    auto idx = build_index({"the quick brown fox jumps over the lazy dog and keeps running far away"}, 16, 1);
    ContamConfig cfg;
    cfg.window = 16;
    CHECK(check_example("LAZY   dog", idx, cfg, 0).contaminated);
    CHECK_FALSE(check_example("lazy cat", idx, cfg, 0).contaminated);
    CHECK_FALSE(check_example("", idx, cfg, 0).contaminated);
    CHECK_FALSE(check_example("   \n ", idx, cfg, 0).contaminated);
    CHECK(check_example("The Quick brown fox jumps over", idx, cfg, 0).contaminated);
  }

  TEST_CASE("probe offsets") {
    ContamConfig cfg;
    cfg.window = 20;
    cfg.stride = 1;
    CHECK(probe_offsets(10, cfg, 0) == std::vector<std::size_t>{0});
    CHECK(probe_offsets(22, cfg, 0) == std::vector<std::size_t>{0, 1, 2});
    cfg.samples = 3;
    auto a = probe_offsets(500, cfg, 5);
    CHECK(a.size() == 3);
    CHECK(a == probe_offsets(500, cfg, 5));
    for (auto o : a) CHECK(o + 20 <= 500);
  }

  TEST_CASE("report over files and the augmented minus raw delta") {
    testing::TempDir dir("contam");
    const std::string leaked = "this sentence was copied from the benchmark into the web crawl verbatim today";
    testing::write_jsonl(dir / "raw.jsonl", {{{"text", "unrelated filler text about rivers and lanterns"}},
                                             {{"text", "prefix " + leaked + " suffix"}}});
    testing::write_jsonl(dir / "aug.jsonl", {{{"text", "prefix " + leaked + " suffix"}},
                                             {{"text", "Question: " + std::string("another benchmark item that only the synthesized data repeats word for word")}}});
    testing::write_jsonl(dir / "eval.jsonl", {{{"id", "e1"}, {"text", leaked}},
                                              {{"text", "another benchmark item that only the synthesized data repeats word for word"}},
                                              {{"id", "e3"}, {"text", "a clean example nobody copied anywhere at all in the corpus"}}});
    auto set = load_eval_set((dir / "eval.jsonl").string(), "bench");
    REQUIRE(set.examples.size() == 3);
    CHECK(set.examples[1].id == "2");
    auto cfg = ContamConfig::exhaustive(32);
    auto report = contamination_report({set}, {{"aug", {(dir / "aug.jsonl").string()}}, {"raw", {(dir / "raw.jsonl").string()}}}, cfg);
    REQUIRE(report.streams.size() == 2);
    CHECK(report.streams[0].per_dataset[0].contaminated == 2);
    CHECK(report.streams[1].per_dataset[0].contaminated == 1);
    auto delta = contamination_delta(report, "aug", "raw");
    REQUIRE(delta.size() == 1);
    CHECK(delta[0].delta == 1);
    auto j = contamination_report_to_json(report, delta);
    CHECK(j["config"]["substring_len"] == 32);
    CHECK_THROWS_AS(contamination_report({set}, {{"x", {(dir / "missing.jsonl").string()}}}, cfg), Error);
  }
}
