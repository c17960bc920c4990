#include "instructpt/contamination.hpp"

#include <algorithm>
#include <atomic>
#include <functional>
#include <set>
#include <thread>

#include "instructpt/error.hpp"
#include "instructpt/util.hpp"

namespace instructpt {

namespace {

constexpr std::uint64_t kMod = (std::uint64_t{1} << 61) - 1;
constexpr std::uint64_t kBase = 0x5bd1e995ULL;

std::uint64_t mulmod(std::uint64_t a, std::uint64_t b) {
  const unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
  std::uint64_t r = static_cast<std::uint64_t>(p & kMod) + static_cast<std::uint64_t>(p >> 61);
  if (r >= kMod) r -= kMod;
  return r;
}

std::uint64_t addmod(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r = a + b;
  if (r >= kMod) r -= kMod;
  return r;
}

std::uint64_t symbol(char c) { return static_cast<std::uint64_t>(static_cast<unsigned char>(c)) + 1; }

std::size_t resolve_threads(std::size_t requested) {
  if (requested) return requested;
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::min(resolve_threads(threads), std::max<std::size_t>(n, 1));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
}

}  // namespace

std::string normalize_for_contam(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool in_space = false;
  for (char c : text) {
    if (is_space(c)) {
      if (!in_space) out += ' ';
      in_space = true;
      continue;
    }
    in_space = false;
    out += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
  }
  return out;
}

std::uint64_t window_fingerprint(std::string_view window) {
  std::uint64_t h = 0;
  for (char c : window) h = addmod(mulmod(h, kBase), symbol(c));
  return h;
}

SubstringIndex::SubstringIndex(std::size_t window, std::size_t stride) : window_(window), stride_(stride) {
  if (window < 16) throw Error(ErrorCode::InvalidArgument, "substring length must be at least 16");
  if (stride < 1 || stride > window) throw Error(ErrorCode::InvalidArgument, "stride must be in [1, L]");
}

void SubstringIndex::add(std::string_view text) {
  if (built_) throw Error(ErrorCode::InvalidArgument, "index is already built");
  auto norm = normalize_for_contam(text);
  if (norm.size() > UINT32_MAX) throw Error(ErrorCode::InvalidArgument, "document larger than 4 GiB");
  if (docs_.size() >= UINT32_MAX) throw Error(ErrorCode::InvalidArgument, "too many documents");
  bytes_ += norm.size();
  docs_.push_back(std::move(norm));
}

void SubstringIndex::build(std::size_t threads) {
  if (built_) return;
  std::uint64_t top = 1;  // kBase^(window - 1)
  for (std::size_t i = 1; i < window_; ++i) top = mulmod(top, kBase);

  threads = std::min(resolve_threads(threads), std::max<std::size_t>(docs_.size(), 1));
  std::vector<std::vector<Posting>> parts(threads);
  // Contiguous document ranges per worker keep the merged order independent of scheduling.
  parallel_for(threads, threads, [&](std::size_t t) {
    const std::size_t lo = docs_.size() * t / threads, hi = docs_.size() * (t + 1) / threads;
    auto& out = parts[t];
    for (std::size_t d = lo; d < hi; ++d) {
      const auto& doc = docs_[d];
      if (doc.size() < window_) continue;
      std::uint64_t h = window_fingerprint(std::string_view(doc).substr(0, window_));
      for (std::size_t i = 0;; ++i) {
        if (i % stride_ == 0) {
          out.push_back({h, static_cast<std::uint32_t>(d), static_cast<std::uint32_t>(i)});
        }
        if (i + window_ >= doc.size()) break;
        h = addmod(h, kMod - mulmod(symbol(doc[i]), top));
        h = addmod(mulmod(h, kBase), symbol(doc[i + window_]));
      }
    }
  });
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  postings_.clear();
  postings_.reserve(total);
  for (auto& p : parts) {
    postings_.insert(postings_.end(), p.begin(), p.end());
    std::vector<Posting>().swap(p);
  }
  std::sort(postings_.begin(), postings_.end(), [](const Posting& a, const Posting& b) {
    if (a.fp != b.fp) return a.fp < b.fp;
    if (a.doc != b.doc) return a.doc < b.doc;
    return a.offset < b.offset;
  });
  built_ = true;
}

std::optional<ContamEvidence> SubstringIndex::find_probe(std::string_view probe) const {
  if (!built_) throw Error(ErrorCode::InvalidArgument, "index is not built");
  if (probe.size() != probe_length()) throw Error(ErrorCode::InvalidArgument, "probe has the wrong length");
  for (std::size_t j = 0; j < stride_; ++j) {
    const auto fp = window_fingerprint(probe.substr(j, window_));
    auto lo = std::lower_bound(postings_.begin(), postings_.end(), fp,
                               [](const Posting& p, std::uint64_t v) { return p.fp < v; });
    for (auto it = lo; it != postings_.end() && it->fp == fp; ++it) {
      if (it->offset < j) continue;
      const std::size_t start = it->offset - j;
      const auto& doc = docs_[it->doc];
      if (start + probe.size() > doc.size()) continue;
      if (std::string_view(doc).substr(start, probe.size()) == probe) {
        return ContamEvidence{0, probe.size(), it->doc, start};
      }
    }
  }
  return std::nullopt;
}

std::optional<ContamEvidence> SubstringIndex::scan(std::string_view needle) const {
  if (needle.empty()) return std::nullopt;
  const std::boyer_moore_horspool_searcher searcher(needle.begin(), needle.end());
  for (std::size_t d = 0; d < docs_.size(); ++d) {
    const auto& doc = docs_[d];
    auto it = std::search(doc.begin(), doc.end(), searcher);
    if (it != doc.end()) return ContamEvidence{0, needle.size(), d, static_cast<std::size_t>(it - doc.begin())};
  }
  return std::nullopt;
}

ContamConfig ContamConfig::exhaustive(std::size_t window) {
  ContamConfig c;
  c.window = window;
  c.stride = 1;
  c.samples = 0;
  return c;
}

ContamConfig ContamConfig::fast(std::size_t window) {
  ContamConfig c;
  c.window = window;
  c.stride = 16;
  c.samples = 3;
  return c;
}

std::string ContamConfig::mode() const {
  if (samples == 0) return stride == 1 ? "exhaustive" : "all-offsets";
  return "sampled";
}

std::vector<std::size_t> probe_offsets(std::size_t length, const ContamConfig& cfg, std::uint64_t example_seed) {
  const std::size_t probe = cfg.window + cfg.stride - 1;
  if (length < probe) return {0};
  const std::size_t count = length - probe + 1;
  std::vector<std::size_t> offsets;
  if (cfg.samples == 0 || cfg.samples >= count) {
    offsets.resize(count);
    for (std::size_t i = 0; i < count; ++i) offsets[i] = i;
    return offsets;
  }
  SeededRng rng(example_seed);
  std::set<std::size_t> chosen;
  while (chosen.size() < cfg.samples) chosen.insert(static_cast<std::size_t>(rng.uniform(count)));
  return {chosen.begin(), chosen.end()};
}

ExampleCheck check_example(std::string_view example_text, const SubstringIndex& index, const ContamConfig& cfg,
                           std::uint64_t example_seed) {
  const auto norm = normalize_for_contam(example_text);
  ExampleCheck result;
  if (norm.find_first_not_of(' ') == std::string::npos) return result;
  if (norm.size() < index.probe_length()) {
    result.evidence = index.scan(norm);
  } else {
    const std::string_view view(norm);
    for (auto off : probe_offsets(norm.size(), cfg, example_seed)) {
      if (auto ev = index.find_probe(view.substr(off, index.probe_length()))) {
        ev->probe_offset = off;
        result.evidence = ev;
        break;
      }
    }
  }
  result.contaminated = result.evidence.has_value();
  return result;
}

std::vector<DatasetContamination> check_eval_sets(const std::vector<EvalSet>& eval_sets, const SubstringIndex& index,
                                                  const ContamConfig& cfg) {
  std::vector<DatasetContamination> out;
  for (const auto& set : eval_sets) {
    std::vector<ExampleCheck> checks(set.examples.size());
    const auto set_seed = derive_seed(cfg.seed, set.dataset_id);
    parallel_for(set.examples.size(), cfg.threads, [&](std::size_t i) {
      const auto& ex = set.examples[i];
      checks[i] = check_example(ex.text, index, cfg, derive_seed(set_seed, ex.id));
    });
    DatasetContamination dc;
    dc.dataset_id = set.dataset_id;
    dc.total = set.examples.size();
    for (std::size_t i = 0; i < checks.size(); ++i) {
      if (!checks[i].contaminated) continue;
      dc.contaminated_ids.push_back(set.examples[i].id);
      dc.evidence.push_back(*checks[i].evidence);
    }
    dc.contaminated = dc.contaminated_ids.size();
    out.push_back(std::move(dc));
  }
  return out;
}

ContaminationReport contamination_report(const std::vector<EvalSet>& eval_sets,
                                         const std::vector<TrainingStream>& streams, const ContamConfig& cfg) {
  ContaminationReport report;
  report.config = cfg;
  for (const auto& stream : streams) {
    SubstringIndex index(cfg.window, cfg.stride);
    for (const auto& path : stream.paths) {
      if (path != "-" && !std::filesystem::is_regular_file(path)) {
        throw Error(ErrorCode::StreamUnreadable, "stream '" + stream.stream_id + "': cannot read " + path);
      }
      std::size_t line_no = 0;
      try {
        for_each_line(path, [&](std::string& line) {
          ++line_no;
          if (trim(line).empty()) return;
          auto j = json::parse(line, nullptr, false);
          if (j.is_discarded() || !j.is_object() || !j.contains("text") || !j["text"].is_string()) {
            throw Error(ErrorCode::StreamUnreadable, "line " + std::to_string(line_no) + " has no \"text\" string");
          }
          index.add(j["text"].get_ref<const std::string&>());
        });
      } catch (const Error& e) {
        throw Error(ErrorCode::StreamUnreadable, "stream '" + stream.stream_id + "' (" + path + "): " + e.what());
      }
    }
    index.build(cfg.threads);
    StreamContamination sc;
    sc.stream_id = stream.stream_id;
    sc.documents = index.documents();
    sc.bytes = index.indexed_bytes();
    sc.per_dataset = check_eval_sets(eval_sets, index, cfg);
    report.streams.push_back(std::move(sc));
  }
  return report;
}

std::vector<DatasetDelta> contamination_delta(const ContaminationReport& report, const std::string& augmented_stream,
                                              const std::string& raw_stream) {
  const StreamContamination* aug = nullptr;
  const StreamContamination* raw = nullptr;
  for (const auto& s : report.streams) {
    if (s.stream_id == augmented_stream) aug = &s;
    if (s.stream_id == raw_stream) raw = &s;
  }
  if (!aug || !raw) throw Error(ErrorCode::InvalidArgument, "delta needs both streams in the report");
  std::vector<DatasetDelta> out;
  for (std::size_t i = 0; i < aug->per_dataset.size(); ++i) {
    DatasetDelta d;
    d.dataset_id = aug->per_dataset[i].dataset_id;
    d.augmented = aug->per_dataset[i].contaminated;
    d.raw = raw->per_dataset.at(i).contaminated;
    d.delta = static_cast<long long>(d.augmented) - static_cast<long long>(d.raw);
    out.push_back(d);
  }
  return out;
}

json contamination_report_to_json(const ContaminationReport& report, const std::vector<DatasetDelta>& deltas) {
  const auto& c = report.config;
  json assumptions = json::array({
      "substring length L=" + std::to_string(c.window) +
          " characters and the per-example probe count are tool defaults, not values fixed by the method",
      "text is lowercased (ASCII) and whitespace runs are collapsed before matching",
      "examples shorter than the probe length are matched whole; empty examples never match",
  });
  json streams = json::array();
  for (const auto& s : report.streams) {
    json sets = json::array();
    for (const auto& d : s.per_dataset) {
      json evidence = json::array();
      for (const auto& e : d.evidence) {
        evidence.push_back(
            {{"probe_offset", e.probe_offset}, {"length", e.length}, {"doc", e.doc}, {"doc_offset", e.doc_offset}});
      }
      sets.push_back({{"dataset_id", d.dataset_id},
                      {"total_examples", d.total},
                      {"contaminated", d.contaminated},
                      {"contaminated_ids", d.contaminated_ids},
                      {"evidence", evidence}});
    }
    streams.push_back({{"stream_id", s.stream_id}, {"documents", s.documents}, {"bytes", s.bytes}, {"per_dataset", sets}});
  }
  json out = {{"assumptions", assumptions},
              {"config",
               {{"substring_len", c.window},
                {"stride", c.stride},
                {"probe_len", c.window + c.stride - 1},
                {"samples_per_example", c.samples},
                {"mode", c.mode()},
                {"seed", c.seed},
                {"normalization", {{"lowercase", true}, {"collapse_whitespace", true}}}}},
              {"streams", streams}};
  if (!deltas.empty()) {
    json arr = json::array();
    for (const auto& d : deltas) {
      arr.push_back({{"dataset_id", d.dataset_id}, {"raw", d.raw}, {"augmented", d.augmented}, {"delta", d.delta}});
    }
    out["deltas"] = arr;
  }
  return out;
}

EvalSet load_eval_set(const std::string& path, const std::string& dataset_id) {
  EvalSet set;
  set.dataset_id = dataset_id;
  std::size_t n = 0;
  for (const auto& j : read_jsonl(path)) {
    ++n;
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
      throw Error(ErrorCode::SchemaViolation, path + ": example " + std::to_string(n) + " needs a \"text\" string");
    }
    EvalExample ex;
    ex.text = j["text"].get<std::string>();
    if (j.contains("id")) {
      ex.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    } else {
      ex.id = std::to_string(n);
    }
    set.examples.push_back(std::move(ex));
  }
  return set;
}

}  // namespace instructpt
