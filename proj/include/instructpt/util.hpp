#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace instructpt {

// Seeded generator whose output sequence is fixed across standard libraries.
// std::uniform_int_distribution and std::shuffle are implementation-defined,
// so bounded draws and shuffles are done here by hand.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, bound). bound must be > 0.
  std::uint64_t uniform(std::uint64_t bound);

  // Uniform in [0, 1) with 53 bits of resolution.
  double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

// Independent sub-seed for a named purpose.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

std::uint64_t fnv1a64(std::string_view data);

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

// Incremental SHA-256.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::string_view data);
  std::string hex_digest();  // finalizes; call once

 private:
  void* ctx_;
};

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file then renames, so readers never see partial output.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Lines of a file, or of stdin when path is "-". Trailing '\r' is stripped.
std::vector<std::string> read_lines(const std::string& path);
void for_each_line(const std::string& path, const std::function<void(std::string&)>& fn);

// Destination that is either a file or stdout ("-"). File output is atomic on close().
class OutputSink {
 public:
  explicit OutputSink(std::string path);
  ~OutputSink();
  OutputSink(const OutputSink&) = delete;
  OutputSink& operator=(const OutputSink&) = delete;

  void write_line(std::string_view line);
  void write(std::string_view data);
  void close();

  // SHA-256 of everything written; valid after close().
  const std::string& digest() const { return digest_; }

 private:
  std::string path_;
  Sha256 hasher_;
  std::string digest_;
  std::string tmp_path_;
  std::unique_ptr<std::ofstream> file_;
  bool closed_ = false;
};

std::string trim(std::string_view s);
bool is_space(char c);

}  // namespace instructpt
