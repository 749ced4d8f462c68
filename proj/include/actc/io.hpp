#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "actc/errors.hpp"

namespace actc::io {

// Little-endian binary reader/writer over whole files. Readers track the
// byte offset so parse errors can point at the failure.

class Writer {
public:
  explicit Writer(const std::string& path)
      : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot open for writing: " + path);
  }

  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u32(std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    bytes(b, 4);
  }
  void u64(std::uint64_t v) {
    u32(static_cast<std::uint32_t>(v));
    u32(static_cast<std::uint32_t>(v >> 32));
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void close() {
    out_.close();
    if (!out_) throw std::runtime_error("write failure on close");
  }

private:
  std::ofstream out_;
};

class Reader {
public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open for reading: " + path);
  }

  std::size_t offset() const { return offset_; }

  void bytes(void* p, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw ParseError(std::string("truncated file while reading ") + what,
                       offset_);
    offset_ += n;
  }
  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t lo = u32(what);
    std::uint64_t hi = u32(what);
    return lo | (hi << 32);
  }
  float f32(const char* what) {
    std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(const char* what, std::size_t max_len = 1u << 24) {
    std::uint32_t n = u32(what);
    if (n > max_len)
      throw ParseError(std::string("implausible length for ") + what, offset_);
    std::string s(n, '\0');
    if (n) bytes(s.data(), n, what);
    return s;
  }

private:
  std::ifstream in_;
  std::size_t offset_ = 0;
};

// key=value lines, '#' comments, blank lines ignored
inline std::vector<std::pair<std::string, std::string>> parse_kv(
    const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r'))
      line.pop_back();
    while (!line.empty() && line.front() == ' ') line.erase(0, 1);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("malformed key=value line: " + line);
    out.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return out;
}

}  // namespace actc::io
