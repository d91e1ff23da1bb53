#pragma once

// Little-endian binary readers/writers shared by the feature-file and
// checkpoint formats. The reader tracks its byte offset so format errors can
// point at the exact location of the problem.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "cetnet/tensor.hpp"

namespace cetnet::detail {

class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& out) : out_(out) {}

  void bytes(const void* src, std::size_t n) {
    out_.write(static_cast<const char*>(src), static_cast<std::streamsize>(n));
  }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 4);
  }
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) { bytes(s.data(), s.size()); }

 private:
  std::ostream& out_;
};

class ByteReader {
 public:
  ByteReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  std::size_t offset() const { return offset_; }
  const std::string& source() const { return source_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(msg(source_, ": ", what, " at byte ", offset_));
  }

  void read_exact(void* dst, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw FormatError(msg(source_, ": unexpected end of file at byte ",
                            offset_ + static_cast<std::size_t>(in_.gcount()),
                            " while reading ", what));
    offset_ += n;
  }

  bool at_eof() {
    if (in_.eof()) return true;
    const int c = in_.peek();
    return c == std::char_traits<char>::eof();
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    read_exact(b, 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    unsigned char b[8];
    read_exact(b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  std::string str(std::size_t n, const char* what) {
    std::string s(n, '\0');
    if (n > 0) read_exact(s.data(), n, what);
    return s;
  }

  void expect_magic(const char* magic4) {
    const std::size_t at = offset_;
    char b[4];
    read_exact(b, 4, "magic");
    for (int i = 0; i < 4; ++i)
      if (b[i] != magic4[i])
        throw FormatError(msg(source_, ": bad magic at byte ", at, ", expected '", magic4,
                              "'"));
  }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t offset_ = 0;
};

}  // namespace cetnet::detail
