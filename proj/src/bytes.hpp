#pragma once

// Little-endian byte buffers with CRC32 trailers, shared by the checkpoint
// and key file formats.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dormant {

std::uint32_t crc32(std::span<const unsigned char> bytes);

class ByteWriter {
 public:
  void raw(std::span<const unsigned char> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
  void tag(const char (&magic)[5]);
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void f32(float v);
  void f32s(std::span<const float> v);
  // Appends the CRC32 of everything written so far.
  void seal() { u32(crc32(buf_)); }

  const std::vector<unsigned char>& bytes() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

// Reads from a sealed buffer. Every failure raises a format error that names
// the byte offset.
class ByteReader {
 public:
  ByteReader(std::vector<unsigned char> bytes, std::string source);

  void expect_tag(const char (&magic)[5]);
  std::uint8_t u8();
  std::uint32_t u32();
  float f32();
  void f32s(std::span<float> out);
  std::string str(std::size_t n);
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return end_ - pos_; }
  // Payload must be fully consumed when the reader is done.
  void finish() const;
  [[noreturn]] void error(const std::string& what) const;

 private:
  void need(std::size_t n) const;

  std::vector<unsigned char> buf_;
  std::string source_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;  // start of the CRC trailer
};

std::vector<unsigned char> read_binary(const std::filesystem::path& path);
void write_binary(const std::filesystem::path& path, std::span<const unsigned char> bytes);

}  // namespace dormant
