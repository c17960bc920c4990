#include "test_support.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace testing {

using namespace instructpt;

std::filesystem::path source_path(const std::string& rel) { return std::filesystem::path(INSTRUCTPT_SOURCE_DIR) / rel; }

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TempDir::TempDir(const std::string& tag) {
  static std::uint64_t counter = 0;
  const auto base = std::filesystem::temp_directory_path();
  for (;;) {
    path_ = base / ("instructpt-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    if (std::filesystem::create_directories(path_)) break;
  }
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

namespace {

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words = {
      "river", "stone",  "market", "engine", "garden", "signal", "harbor", "lantern", "copper", "meadow",
      "orbit", "violet", "thunder", "pencil", "castle", "rapid", "quiet",  "silver",  "north",  "ember",
      "42",    "1.5",    "don't",  "(note)", "x/y",    "café",   "naïve",  "Q3",      "e-mail", "yes?",
      "no!",   "a",      "the",    "of",     "and",    "<tag>",  "50%",    "#7",      "[ref]",  "semi;colon"};
  return words;
}

}  // namespace

std::string random_words(SeededRng& rng, std::size_t min_words, std::size_t max_words) {
  const auto& v = vocabulary();
  const auto n = min_words + rng.uniform(max_words - min_words + 1);
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += v[rng.uniform(v.size())];
  }
  return out;
}

std::string random_text(SeededRng& rng) {
  std::string out = random_words(rng, 5, 40);
  const auto paragraphs = rng.uniform(3);
  for (std::size_t i = 0; i < paragraphs; ++i) {
    out += rng.uniform(2) ? "\n\n" : "\n";
    out += random_words(rng, 3, 20);
  }
  return out;
}

InstructionResponsePair random_pair(SeededRng& rng, PairFormat format) {
  InstructionResponsePair p;
  p.format = format;
  p.instruction = random_words(rng, 1, 15);
  if (rng.uniform(4) == 0) p.instruction += "\n" + random_words(rng, 1, 6);
  p.response = random_words(rng, 1, 12);
  if (has_options(format)) {
    const auto n = 2 + rng.uniform(4);
    for (std::size_t i = 0; i < n; ++i) p.options.push_back(random_words(rng, 1, 5));
  }
  if (has_cot(format)) p.cot = random_words(rng, 3, 25);
  return p;
}

SynthesisExample random_example(SeededRng& rng, const std::string& source_id, const std::string& dataset_id) {
  static const PairFormat formats[] = {PairFormat::FreeForm, PairFormat::MultipleChoice, PairFormat::FreeFormCoT,
                                       PairFormat::MultipleChoiceCoT};
  SynthesisExample ex;
  ex.text = random_text(rng);
  ex.source_id = source_id;
  ex.dataset_id = dataset_id;
  const auto n = rng.uniform(5);
  for (std::size_t i = 0; i < n; ++i) ex.pairs.push_back(random_pair(rng, formats[rng.uniform(4)]));
  return ex;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  write_file_atomic(path, out);
}

int run_cli(const std::string& args, const std::filesystem::path& out, const std::filesystem::path& err) {
  std::string cmd = std::string("\"") + INSTRUCTPT_CLI_PATH + "\" " + args;
  if (!out.empty()) cmd += " > \"" + out.string() + "\"";
  if (!err.empty()) cmd += " 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace testing
