#include <doctest.h>

#include <atomic>
#include <set>

#include "instructpt/error.hpp"
#include "instructpt/synthesis.hpp"
#include "instructpt/util.hpp"
#include "test_support.hpp"

using namespace instructpt;

namespace {

std::vector<std::string> ids(std::size_t n, const std::string& prefix = "d") {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

std::vector<RawDocument> corpus(std::size_t n) {
  SeededRng rng(17);
  std::vector<RawDocument> out;
  for (std::size_t i = 0; i < n; ++i) {
    RawDocument d;
    d.id = "doc" + std::to_string(i);
    d.text = testing::random_words(rng, 10, 30);
    d.line = dump_line(json{{"id", d.id}, {"text", d.text}, {"extra", i}});
    out.push_back(d);
  }
  return out;
}

class CountingBackend final : public CompletionBackend {
 public:
  explicit CountingBackend(CompletionBackend& inner) : inner_(inner) {}
  std::string complete(const CompletionRequest& r) override {
    ++calls;
    return inner_.complete(r);
  }
  std::atomic<std::size_t> calls{0};

 private:
  CompletionBackend& inner_;
};

class FailingBackend final : public CompletionBackend {
 public:
  std::string complete(const CompletionRequest&) override { throw BackendError("down", true); }
};

SynthesisOptions quick_options(std::size_t rounds, double fraction = 1.0) {
  SynthesisOptions o;
  o.num_rounds = rounds;
  o.fraction = fraction;
  o.seed = 42;
  o.backend_url = "stub:";
  o.limits.in_flight = 4;
  o.limits.retry.sleep = [](std::chrono::milliseconds) {};
  return o;
}

}  // namespace

TEST_SUITE("synthesis") {
  TEST_CASE("partition sizes are near equal and sum to n") {
    CHECK(partition_sizes(10, 3) == std::vector<std::size_t>{4, 3, 3});
    CHECK(partition_sizes(9, 3) == std::vector<std::size_t>{3, 3, 3});
    CHECK(partition_sizes(200'000'000, 5) == std::vector<std::size_t>(5, 40'000'000));
    for (std::size_t n = 0; n < 60; ++n) {
      for (std::size_t r = 1; r < 8; ++r) {
        auto s = partition_sizes(n, r);
        std::size_t sum = 0;
        for (auto x : s) sum += x;
        CHECK(sum == n);
        CHECK(*std::max_element(s.begin(), s.end()) - *std::min_element(s.begin(), s.end()) <= 1);
      }
    }
    CHECK_THROWS_AS(partition_sizes(5, 0), Error);
  }

  TEST_CASE("conversion count floors and tolerates binary rounding") {
    CHECK(conversion_count(10, 0.2) == 2);
    CHECK(conversion_count(10, 0.3) == 3);
    CHECK(conversion_count(10, 0.25) == 2);
    CHECK(conversion_count(7, 1.0) == 7);
    CHECK(conversion_count(3, 0.1) == 0);
    CHECK_THROWS_AS(conversion_count(10, 0.0), Error);
    CHECK_THROWS_AS(conversion_count(10, 1.5), Error);
  }

  TEST_CASE("conversion split is seeded, disjoint and in corpus order") {
    auto all = ids(50);
    auto a = select_for_conversion(all, 0.4, 3);
    auto b = select_for_conversion(all, 0.4, 3);
    CHECK(a.selected == b.selected);
    CHECK(a.selected.size() == 20);
    CHECK(a.passthrough.size() == 30);
    std::set<std::string> u(a.selected.begin(), a.selected.end());
    for (const auto& p : a.passthrough) CHECK(u.insert(p).second);
    CHECK(std::is_sorted(a.selected.begin(), a.selected.end(), [&](const auto& x, const auto& y) {
      return std::find(all.begin(), all.end(), x) < std::find(all.begin(), all.end(), y);
    }));
    CHECK(select_for_conversion(all, 0.4, 4).selected != a.selected);
  }

  TEST_CASE("round plan partitions every document once") {
    auto all = ids(23);
    auto plan = plan_rounds(all, 4, 5);
    REQUIRE(plan.partitions.size() == 4);
    std::multiset<std::string> seen;
    for (const auto& p : plan.partitions) seen.insert(p.begin(), p.end());
    CHECK(seen == std::multiset<std::string>(all.begin(), all.end()));
    CHECK(plan.max_prompt_tokens == std::numeric_limits<std::size_t>::max());
    CHECK(plan_rounds(all, 4, 5).partitions == plan.partitions);
    CHECK_THROWS_AS(plan_rounds(ids(2), 3, 0), Error);
  }

  TEST_CASE("prompt evicts oldest history first") {
    SentinelConfig cfg;
    WordCounter words;
    ChainState st;
    for (int i = 0; i < 3; ++i) {
      SynthesisExample ex;
      ex.text = "history " + std::to_string(i) + " with some words";
      ex.pairs.push_back({"q" + std::to_string(i), "a", PairFormat::FreeForm, {}, {}});
      ex.source_id = "h" + std::to_string(i);
      st.history.push_back(ex);
    }
    const std::string cur = "the current document";
    const auto full = build_inference_prompt_ex(st, cur, cfg, 100000, words);
    CHECK(full.history_used == 3);
    CHECK(full.text == render_example(st.history[0]) + render_example(st.history[1]) + render_example(st.history[2]) +
                           render_context_stub(cur));
    const auto last_two = render_example(st.history[1]) + render_example(st.history[2]) + render_context_stub(cur);
    const auto trimmed = build_inference_prompt_ex(st, cur, cfg, words.count(last_two), words);
    CHECK(trimmed.history_used == 2);
    CHECK(trimmed.text == last_two);
    const auto stub = render_context_stub(cur);
    CHECK(build_inference_prompt(st, cur, cfg, words.count(stub), words) == stub);
    CHECK_THROWS_AS(build_inference_prompt(st, cur, cfg, words.count(stub) - 1, words), Error);
  }

  TEST_CASE("chain assignment") {
    auto plan = plan_rounds(ids(9), 3, 1);
    auto r0 = assign_chains(plan, 0, {}, 1);
    for (const auto& [id, st] : r0) CHECK(st.history.empty());
    CHECK_THROWS_AS(assign_chains(plan, 1, {}, 1), Error);
    std::vector<ChainState> prior(2);
    prior[0].history.push_back(SynthesisExample{"a", {}, "A", ""});
    prior[1].history.push_back(SynthesisExample{"b", {}, "B", ""});
    auto r1 = assign_chains(plan, 1, prior, 1);
    std::map<std::string, int> uses;
    for (const auto& [id, st] : r1) uses[st.history.back().source_id]++;
    CHECK(uses.size() == 2);  // three documents over two chains: both used
    CHECK(uses["A"] + uses["B"] == 3);
  }

  TEST_CASE("records round trip through JSON") {
    SynthesisRecord r;
    r.doc_id = "x";
    r.round = 2;
    r.status = DocStatus::EmptySynthesis;
    r.example = SynthesisExample{"t", {{"q", "a", PairFormat::FreeForm, {}, {}}}, "x", ""};
    r.history_ids = {"a", "b"};
    r.history_used = 1;
    r.attempts = 3;
    r.issues.push_back({ParseIssueKind::TruncatedPair, 4, "detail"});
    r.error = "err";
    auto back = record_from_json(record_to_json(r));
    CHECK(back.doc_id == r.doc_id);
    CHECK(back.status == r.status);
    CHECK(back.example == r.example);
    CHECK(back.history_ids == r.history_ids);
    CHECK(back.issues.size() == 1);
    CHECK(back.issues[0].kind == ParseIssueKind::TruncatedPair);
  }

  TEST_CASE("three rounds produce three-shot chains") {
    testing::TempDir dir("synth3");
    auto docs = corpus(9);
    auto stub = StubBackend::from_url("stub:random?pairs=2", {});
    auto summary = run_synthesis(docs, quick_options(3), *stub, {}, WordCounter{}, dir.path());
    CHECK(summary.complete);
    CHECK(summary.documents_ok == 9);
    CHECK(summary.chains == 3);
    CHECK(summary.passthrough == 0);
    auto chains = load_chains((dir / "chains.jsonl").string());
    REQUIRE(chains.size() == 3);
    std::set<std::string> used;
    for (const auto& c : chains) {
      CHECK(c.size() == 3);
      for (const auto& ex : c) {
        CHECK(used.insert(ex.source_id).second);
        CHECK(ex.pairs == stub->pairs_for(ex.text));
      }
    }
    CHECK(used.size() == 9);
  }

  TEST_CASE("unconverted and failed documents pass through verbatim") {
    testing::TempDir dir("synthpass");
    auto docs = corpus(10);
    auto stub = StubBackend::from_url("stub:", {});
    auto summary = run_synthesis(docs, quick_options(1, 0.2), *stub, {}, WordCounter{}, dir.path());
    CHECK(summary.documents_ok == 2);
    CHECK(summary.passthrough == 8);
    auto lines = read_lines((dir / "passthrough.jsonl").string());
    CHECK(lines.size() == 8);
    for (const auto& l : lines) {
      bool found = false;
      for (const auto& d : docs) found = found || d.line == l;
      CHECK(found);
    }

    testing::TempDir dir2("synthgarbage");
    auto garbage = StubBackend::from_url("stub:garbage", {});
    auto s2 = run_synthesis(docs, quick_options(1), *garbage, {}, WordCounter{}, dir2.path());
    CHECK(s2.documents_failed == 10);
    CHECK(s2.chains == 0);
    CHECK(read_lines((dir2 / "passthrough.jsonl").string()).size() == 10);
    auto rec = record_from_json(read_jsonl((dir2 / "round_0.jsonl").string()).front());
    CHECK(rec.status == DocStatus::EmptySynthesis);
  }

  TEST_CASE("backend failures are recorded per document after retries") {
    testing::TempDir dir("synthfail");
    FailingBackend failing;
    auto s = run_synthesis(corpus(3), quick_options(1), failing, {}, WordCounter{}, dir.path());
    CHECK(s.documents_failed == 3);
    for (const auto& j : read_jsonl((dir / "round_0.jsonl").string())) {
      auto r = record_from_json(j);
      CHECK(r.status == DocStatus::BackendFailed);
      CHECK(r.attempts == 4);
    }
  }

  TEST_CASE("round with no prior successes raises NoPriorOutputs") {
    testing::TempDir dir("synthnoprior");
    auto garbage = StubBackend::from_url("stub:garbage", {});
    try {
      run_synthesis(corpus(4), quick_options(2), *garbage, {}, WordCounter{}, dir.path());
      FAIL("expected NoPriorOutputs");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NoPriorOutputs);
    }
  }

  TEST_CASE("oversized documents fail with PromptTooLong") {
    testing::TempDir dir("synthlong");
    auto docs = corpus(2);
    docs[0].text.clear();
    for (int i = 0; i < 500; ++i) docs[0].text += "word ";
    docs[0].line.clear();
    auto opts = quick_options(1);
    opts.inference_max_len = 300;
    opts.limits.max_new_tokens = 100;
    auto stub = StubBackend::from_url("stub:", {});
    auto s = run_synthesis(docs, opts, *stub, {}, WordCounter{}, dir.path());
    CHECK(s.documents_ok == 1);
    CHECK(s.documents_failed == 1);
    opts.limits.max_new_tokens = 300;
    CHECK_THROWS_AS(run_synthesis(docs, opts, *stub, {}, WordCounter{}, dir.path()), Error);
  }

  TEST_CASE("sentinel collisions are rejected or escaped per policy") {
    auto docs = corpus(2);
    docs[1].text = "contains </s> inside";
    auto stub = StubBackend::from_url("stub:", {});
    {
      testing::TempDir dir("synthsent");
      auto s = run_synthesis(docs, quick_options(1), *stub, {}, WordCounter{}, dir.path());
      CHECK(s.documents_failed == 1);
    }
    {
      testing::TempDir dir("synthesc");
      auto opts = quick_options(1);
      opts.limits.sanitize = SanitizePolicy::Escape;
      auto s = run_synthesis(docs, opts, *stub, {}, WordCounter{}, dir.path());
      CHECK(s.documents_failed == 0);
    }
  }

  TEST_CASE("resume skips persisted rounds and reproduces the same output") {
    auto docs = corpus(12);
    auto stub = StubBackend::from_url("stub:", {});
    testing::TempDir full("synthfull");
    run_synthesis(docs, quick_options(3), *stub, {}, WordCounter{}, full.path());

    testing::TempDir part("synthpart");
    CountingBackend counting(*stub);
    auto opts = quick_options(3);
    opts.stop_after_round = 1;
    auto first = run_synthesis(docs, opts, counting, {}, WordCounter{}, part.path());
    CHECK_FALSE(first.complete);
    CHECK(first.rounds_completed == 1);
    CHECK(counting.calls == 4);
    CHECK_FALSE(std::filesystem::exists(part / "chains.jsonl"));

    opts.stop_after_round.reset();
    auto second = run_synthesis(docs, opts, counting, {}, WordCounter{}, part.path());
    CHECK(second.complete);
    CHECK(second.rounds_resumed == 1);
    CHECK(counting.calls == 12);
    for (const char* f : {"chains.jsonl", "passthrough.jsonl", "round_0.jsonl", "round_1.jsonl", "round_2.jsonl",
                          "synthesis_manifest.json"}) {
      CHECK_MESSAGE(read_file(full / f) == read_file(part / f), f);
    }

    // A tampered round file is redone rather than trusted.
    write_file_atomic(part / "round_2.jsonl", "{}\n");
    auto third = run_synthesis(docs, opts, counting, {}, WordCounter{}, part.path());
    CHECK(third.rounds_resumed == 2);
    CHECK(counting.calls == 16);
    CHECK(read_file(full / "chains.jsonl") == read_file(part / "chains.jsonl"));

    // Changing the seed invalidates everything.
    opts.seed = 43;
    auto fourth = run_synthesis(docs, opts, counting, {}, WordCounter{}, part.path());
    CHECK(fourth.rounds_resumed == 0);
  }

  TEST_CASE("records come back in partition order under concurrency") {
    auto docs = corpus(40);
    auto stub = StubBackend::from_url("stub:random?delay_ms=1", {});
    auto opts = quick_options(1);
    opts.limits.in_flight = 8;
    testing::TempDir a("synthconc");
    run_synthesis(docs, opts, *stub, {}, WordCounter{}, a.path());
    opts.limits.in_flight = 1;
    testing::TempDir b("synthserial");
    run_synthesis(docs, opts, *stub, {}, WordCounter{}, b.path());
    CHECK(read_file(a / "round_0.jsonl") == read_file(b / "round_0.jsonl"));
  }
}
