#pragma once

// On-disk formats. Every reader throws DataError naming the path (and the
// byte offset for the binary formats) on malformed input.
//
//   img_*.png    16-bit grayscale PNG, value = round(65535 * intensity)
//   curv_*.mtcv  "MTCV" | u8 version 1 | u8 dtype 0 (f32) | u32 H | u32 W |
//                H*W f32, all little-endian, row-major

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mtcurv/field.hpp"

namespace mtcurv::io {

namespace fs = std::filesystem;

std::vector<std::uint8_t> read_bytes(const fs::path& path);
std::string read_text(const fs::path& path);
/// Writes via a sibling temp file and rename, so readers never see partial files.
void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes);
void write_text(const fs::path& path, std::string_view text);

/// Intensities are clamped to [0, 1] before quantisation.
void write_png16(const fs::path& path, const Field<float>& image);
Field<float> read_png16(const fs::path& path);

struct Rgb {
  std::uint8_t r, g, b;
};
/// 8-bit RGB render, row-major.
void write_png_rgb(const fs::path& path, std::size_t height, std::size_t width,
                   std::span<const Rgb> pixels);
/// Decodes any 8/16-bit PNG to RGB8 (tests and tooling).
std::vector<Rgb> read_png_rgb(const fs::path& path, std::size_t& height, std::size_t& width);

std::vector<std::uint8_t> encode_mtcv(const Field<float>& map);
Field<float> decode_mtcv(std::span<const std::uint8_t> bytes, const std::string& source);
void write_mtcv(const fs::path& path, const Field<float>& map);
Field<float> read_mtcv(const fs::path& path);

// Little-endian primitives shared by the binary formats.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  /// u32 length prefix then bytes.
  void str(std::string_view s);
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string source)
      : bytes_(bytes), source_(std::move(source)) {}
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string raw(std::size_t n);
  std::string str();
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  /// Throws DataError at the current offset.
  [[noreturn]] void fail(const std::string& what) const;

 private:
  void need(std::size_t n, const char* what);
  std::span<const std::uint8_t> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace mtcurv::io
