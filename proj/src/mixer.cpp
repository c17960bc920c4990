#include "instructpt/mixer.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <queue>
#include <set>

#include "instructpt/error.hpp"
#include "instructpt/util.hpp"

namespace instructpt {

std::string Repeat::str() const {
  if (den == 1) return std::to_string(num);
  return std::to_string(num) + "/" + std::to_string(den);
}

namespace {

std::uint64_t gcd(std::uint64_t a, std::uint64_t b) {
  while (b) {
    a %= b;
    std::swap(a, b);
  }
  return a;
}

std::uint64_t parse_digits(std::string_view s, const std::string& whole) {
  if (s.empty() || s.size() > 18) throw Error(ErrorCode::InvalidArgument, "bad repeat '" + whole + "'");
  std::uint64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') throw Error(ErrorCode::InvalidArgument, "bad repeat '" + whole + "'");
    v = v * 10 + static_cast<std::uint64_t>(c - '0');
  }
  return v;
}

}  // namespace

Repeat parse_repeat(const std::string& text) {
  const std::string t = trim(text);
  Repeat r;
  if (auto slash = t.find('/'); slash != std::string::npos) {
    r.num = parse_digits(std::string_view(t).substr(0, slash), text);
    r.den = parse_digits(std::string_view(t).substr(slash + 1), text);
  } else if (auto dot = t.find('.'); dot != std::string::npos) {
    const auto frac = std::string_view(t).substr(dot + 1);
    const auto int_part = std::string_view(t).substr(0, dot);
    r.den = 1;
    for (std::size_t i = 0; i < frac.size(); ++i) r.den *= 10;
    r.num = (int_part.empty() ? 0 : parse_digits(int_part, text)) * r.den + parse_digits(frac, text);
  } else {
    r.num = parse_digits(t, text);
  }
  if (r.den == 0 || r.num == 0) throw Error(ErrorCode::InvalidArgument, "repeat must be > 0, got '" + text + "'");
  const auto g = gcd(r.num, r.den);
  r.num /= g;
  r.den /= g;
  return r;
}

Repeat repeat_from_json(const json& j) {
  if (j.is_string()) return parse_repeat(j.get<std::string>());
  if (j.is_number_unsigned() || j.is_number_integer()) {
    if (j.get<std::int64_t>() <= 0) throw Error(ErrorCode::InvalidArgument, "repeat must be > 0");
    return Repeat{j.get<std::uint64_t>(), 1};
  }
  if (j.is_number_float()) return parse_repeat(j.dump());
  throw Error(ErrorCode::InvalidArgument, "repeat must be a number or \"p/q\" string");
}

std::string_view source_role_name(SourceRole role) {
  switch (role) {
    case SourceRole::Augmented: return "augmented";
    case SourceRole::Raw: return "raw";
    case SourceRole::TuningData: return "tuning_data";
    case SourceRole::GeneralInstructions: return "general_instructions";
  }
  return "raw";
}

SourceRole source_role_from_name(std::string_view name) {
  for (auto r : {SourceRole::Augmented, SourceRole::Raw, SourceRole::TuningData, SourceRole::GeneralInstructions}) {
    if (source_role_name(r) == name) return r;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown source role '" + std::string(name) + "'");
}

MixSpec mix_spec_from_json(const json& j, const std::filesystem::path& base_dir) {
  std::vector<std::string> problems;
  MixSpec spec;
  if (!j.is_object()) throw ConfigInvalid({"mix spec must be a JSON object"});
  if (j.contains("seed")) {
    if (is_non_negative_integer(j["seed"])) {
      spec.seed = j["seed"].get<std::uint64_t>();
    } else {
      problems.push_back("seed: must be a non-negative integer");
    }
  }
  if (j.contains("memory_limit_bytes")) {
    if (is_non_negative_integer(j["memory_limit_bytes"])) {
      spec.memory_limit_bytes = j["memory_limit_bytes"].get<std::size_t>();
    } else {
      problems.push_back("memory_limit_bytes: must be a non-negative integer");
    }
  }
  if (!j.contains("sources") || !j["sources"].is_array() || j["sources"].empty()) {
    problems.push_back("sources: must be a non-empty array");
  } else {
    std::set<std::string> ids;
    for (std::size_t i = 0; i < j["sources"].size(); ++i) {
      const auto& s = j["sources"][i];
      const auto where = "sources[" + std::to_string(i) + "]";
      MixSource src;
      if (!s.is_object()) {
        problems.push_back(where + ": must be an object");
        continue;
      }
      if (!s.contains("stream_id") || !s["stream_id"].is_string() || s["stream_id"].get<std::string>().empty()) {
        problems.push_back(where + ".stream_id: required non-empty string");
      } else {
        src.stream_id = s["stream_id"].get<std::string>();
        if (!ids.insert(src.stream_id).second) problems.push_back(where + ".stream_id: duplicate '" + src.stream_id + "'");
      }
      if (!s.contains("path") || !s["path"].is_string()) {
        problems.push_back(where + ".path: required string");
      } else {
        src.path = s["path"].get<std::string>();
        if (src.path != "-" && std::filesystem::path(src.path).is_relative() && !base_dir.empty()) {
          src.path = (base_dir / src.path).lexically_normal().string();
        }
      }
      try {
        src.repeat = s.contains("repeat") ? repeat_from_json(s["repeat"]) : Repeat{};
      } catch (const Error& e) {
        problems.push_back(where + ".repeat: " + e.what());
      }
      try {
        if (s.contains("role")) src.role = source_role_from_name(s["role"].get<std::string>());
      } catch (const std::exception& e) {
        problems.push_back(where + ".role: " + e.what());
      }
      spec.sources.push_back(std::move(src));
    }
  }
  if (!problems.empty()) throw ConfigInvalid(problems);
  return spec;
}

MixSpec load_mix_spec(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigInvalid({path.string() + ": " + e.what()});
  }
  return mix_spec_from_json(j, path.parent_path());
}

json mix_manifest_to_json(const MixManifest& m) {
  json sources = json::array();
  for (const auto& s : m.sources) {
    sources.push_back({{"stream_id", s.stream_id},
                       {"role", s.role},
                       {"repeat", s.repeat},
                       {"documents", s.documents},
                       {"emitted", s.emitted}});
  }
  return {{"seed", m.seed},
          {"sources", sources},
          {"total", m.total},
          {"spilled_runs", m.spilled_runs},
          {"output_sha256", m.output_sha256}};
}

namespace {

struct Emission {
  std::uint64_t key;
  std::uint64_t seq;
  std::string line;
};

bool before(const Emission& a, const Emission& b) { return a.key != b.key ? a.key < b.key : a.seq < b.seq; }

void write_run(const std::filesystem::path& path, const std::vector<Emission>& run) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write spill file " + path.string());
  for (const auto& e : run) {
    const std::uint64_t len = e.line.size();
    out.write(reinterpret_cast<const char*>(&e.key), sizeof e.key);
    out.write(reinterpret_cast<const char*>(&e.seq), sizeof e.seq);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(e.line.data(), static_cast<std::streamsize>(len));
  }
  if (!out) throw Error(ErrorCode::Io, "write failed for spill file " + path.string());
}

class RunReader {
 public:
  explicit RunReader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw Error(ErrorCode::Io, "cannot reopen spill file " + path.string());
  }
  bool next(Emission& e) {
    std::uint64_t len = 0;
    if (!in_.read(reinterpret_cast<char*>(&e.key), sizeof e.key)) return false;
    in_.read(reinterpret_cast<char*>(&e.seq), sizeof e.seq);
    in_.read(reinterpret_cast<char*>(&len), sizeof len);
    e.line.resize(len);
    in_.read(e.line.data(), static_cast<std::streamsize>(len));
    if (!in_) throw Error(ErrorCode::Io, "truncated spill file");
    return true;
  }

 private:
  std::ifstream in_;
};

class SpillDir {
 public:
  explicit SpillDir(std::filesystem::path base, std::uint64_t seed) {
    if (base.empty()) base = std::filesystem::temp_directory_path();
    for (std::uint64_t attempt = 0;; ++attempt) {
      path_ = base / ("instructpt-mix-" + std::to_string(derive_seed(seed, attempt) & 0xffffffffu));
      if (std::filesystem::create_directories(path_)) break;
      if (attempt > 64) throw Error(ErrorCode::Io, "cannot create spill directory under " + base.string());
    }
  }
  ~SpillDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::filesystem::path run(std::size_t i) const { return path_ / ("run_" + std::to_string(i) + ".bin"); }

 private:
  std::filesystem::path path_;
};

}  // namespace

MixManifest mix(const MixSpec& spec, const std::string& out_path) {
  if (spec.sources.empty()) throw Error(ErrorCode::InvalidArgument, "mix spec has no sources");
  for (const auto& src : spec.sources) {
    if (src.path != "-" && !std::filesystem::is_regular_file(src.path)) {
      throw Error(ErrorCode::SourceUnreadable, "source '" + src.stream_id + "': cannot read " + src.path);
    }
  }

  MixManifest manifest;
  manifest.seed = spec.seed;
  SeededRng order_rng(derive_seed(spec.seed, "mix-order"));
  std::uint64_t seq = 0;
  std::vector<Emission> buffer;
  std::size_t buffered_bytes = 0;
  std::unique_ptr<SpillDir> spill;

  auto flush_run = [&] {
    if (buffer.empty()) return;
    if (!spill) spill = std::make_unique<SpillDir>(spec.spill_dir, spec.seed);
    std::sort(buffer.begin(), buffer.end(), before);
    write_run(spill->run(manifest.spilled_runs++), buffer);
    buffer.clear();
    buffered_bytes = 0;
  };

  for (const auto& src : spec.sources) {
    SeededRng residual_rng(derive_seed(spec.seed, "mix-repeat:" + src.stream_id));
    SourceCount count{src.stream_id, std::string(source_role_name(src.role)), src.repeat.str(), 0, 0};
    auto emit = [&](std::string& line) {
      if (trim(line).empty()) return;
      ++count.documents;
      std::uint64_t copies = src.repeat.whole();
      if (src.repeat.residual() && residual_rng.uniform(src.repeat.den) < src.repeat.residual()) ++copies;
      for (std::uint64_t c = 0; c < copies; ++c) {
        buffered_bytes += line.size() + sizeof(Emission);
        buffer.push_back({order_rng.next(), seq++, line});
        if (buffered_bytes > spec.memory_limit_bytes) flush_run();
      }
      count.emitted += copies;
    };
    try {
      for_each_line(src.path, emit);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Io) throw;
      throw Error(ErrorCode::SourceUnreadable, "source '" + src.stream_id + "': " + e.what());
    }
    manifest.total += count.emitted;
    manifest.sources.push_back(std::move(count));
  }

  OutputSink out(out_path);
  if (!spill) {
    std::sort(buffer.begin(), buffer.end(), before);
    for (const auto& e : buffer) out.write_line(e.line);
  } else {
    flush_run();
    std::vector<std::unique_ptr<RunReader>> readers;
    std::vector<Emission> heads(manifest.spilled_runs);
    auto cmp = [&](std::size_t a, std::size_t b) { return before(heads[b], heads[a]); };
    std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(cmp)> heap(cmp);
    for (std::size_t i = 0; i < manifest.spilled_runs; ++i) {
      readers.push_back(std::make_unique<RunReader>(spill->run(i)));
      if (readers[i]->next(heads[i])) heap.push(i);
    }
    while (!heap.empty()) {
      const auto i = heap.top();
      heap.pop();
      out.write_line(heads[i].line);
      if (readers[i]->next(heads[i])) heap.push(i);
    }
  }
  out.close();
  manifest.output_sha256 = out.digest();
  return manifest;
}

}  // namespace instructpt
