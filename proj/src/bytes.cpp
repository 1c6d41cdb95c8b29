#include "bytes.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "errors.hpp"

namespace dormant {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::uint32_t crc32(std::span<const unsigned char> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void ByteWriter::tag(const char (&magic)[5]) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(magic[i]));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::f32s(std::span<const float> v) {
  const auto* p = reinterpret_cast<const unsigned char*>(v.data());
  buf_.insert(buf_.end(), p, p + v.size() * sizeof(float));
}

ByteReader::ByteReader(std::vector<unsigned char> bytes, std::string source)
    : buf_(std::move(bytes)), source_(std::move(source)) {
  if (buf_.size() < 4) error("file too short for CRC trailer");
  end_ = buf_.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= std::uint32_t{buf_[end_ + static_cast<std::size_t>(i)]} << (8 * i);
  const std::uint32_t actual = crc32(std::span(buf_).first(end_));
  if (stored != actual) {
    pos_ = end_;
    error("CRC32 mismatch (stored " + std::to_string(stored) + ", computed " + std::to_string(actual) + ")");
  }
}

void ByteReader::error(const std::string& what) const {
  fail(ErrorKind::Format, source_ + " at offset " + std::to_string(pos_) + ": " + what);
}

void ByteReader::need(std::size_t n) const {
  if (n > end_ - pos_) error("unexpected end of payload (need " + std::to_string(n) + " bytes)");
}

void ByteReader::expect_tag(const char (&magic)[5]) {
  need(4);
  if (std::memcmp(buf_.data() + pos_, magic, 4) != 0) error(std::string("bad magic, expected ") + magic);
  pos_ += 4;
}

std::uint8_t ByteReader::u8() {
  need(1);
  return buf_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{buf_[pos_ + static_cast<std::size_t>(i)]} << (8 * i);
  pos_ += 4;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

void ByteReader::f32s(std::span<float> out) {
  need(out.size() * sizeof(float));
  std::memcpy(out.data(), buf_.data() + pos_, out.size() * sizeof(float));
  pos_ += out.size() * sizeof(float);
}

std::string ByteReader::str(std::size_t n) {
  need(n);
  std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
  pos_ += n;
  return s;
}

void ByteReader::finish() const {
  if (pos_ != end_) error(std::to_string(end_ - pos_) + " trailing bytes before CRC");
}

std::vector<unsigned char> read_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_binary(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "short write to " + path.string());
}

}  // namespace dormant
