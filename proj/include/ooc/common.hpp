#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace ooc {

using json = nlohmann::json;
using Bytes = std::vector<std::uint8_t>;

// Y = 0 is a matching (in-context) pair.
enum class Label : int { Match = 0, Mismatch = 1 };

inline constexpr int label_index(Label label) { return static_cast<int>(label); }

inline std::string_view label_name(Label label) {
  return label == Label::Match ? "MATCH" : "MISMATCH";
}

// Error taxonomy. The kind drives CLI exit codes.
enum class ErrorKind { Runtime = 1, Config = 2, Data = 3, Backend = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class RuntimeFailure : public Error {
 public:
  explicit RuntimeFailure(const std::string& what) : Error(ErrorKind::Runtime, what) {}
};

namespace detail {

// 64-bit FNV-1a. Used for state fingerprints and trigram bucketing.
struct Fnv1a {
  std::uint64_t state = 0xcbf29ce484222325ULL;

  void update(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      state ^= p[i];
      state *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) {
    update(s.data(), s.size());
    update_value(s.size());
  }
  template <typename T>
  void update_value(const T& value) {
    update(&value, sizeof(T));
  }
};

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::string trim(std::string_view s) {
  const auto ws = " \t\r\n\f\v";
  const auto first = s.find_first_not_of(ws);
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(ws);
  return std::string(s.substr(first, last - first + 1));
}

inline Bytes read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline std::string read_file_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file_text(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write file: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw RuntimeFailure("write failed: " + path);
}

// Visits each non-blank, non-comment line of a line-delimited stream with its
// 1-based line number.
inline void for_each_record_line(std::istream& in,
                                 const std::function<void(std::size_t, const std::string&)>& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    fn(line_no, body);
  }
}

}  // namespace detail

using ImageLoader = std::function<Bytes(const std::string& image_ref)>;

// Reads image files, resolving relative references against base_dir.
inline ImageLoader file_image_loader(std::filesystem::path base_dir = {}) {
  return [base = std::move(base_dir)](const std::string& ref) {
    std::filesystem::path p(ref);
    if (p.is_relative() && !base.empty()) p = base / p;
    return detail::read_file_bytes(p.string());
  };
}

}  // namespace ooc
