#include "mtcurv/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace mtcurv::io {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string(), "cannot open for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw DataError(path.string(), "read failed");
  return bytes;
}

std::string read_text(const fs::path& path) {
  const auto b = read_bytes(path);
  return std::string(b.begin(), b.end());
}

void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path.string(), "cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError(path.string(), "write failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError(path.string(), "rename failed: " + ec.message());
}

void write_text(const fs::path& path, std::string_view text) {
  write_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------------------
// PNG

namespace {

struct PngSink {
  std::vector<std::uint8_t> bytes;
};

void png_write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* sink = static_cast<PngSink*>(png_get_io_ptr(png));
  sink->bytes.insert(sink->bytes.end(), data, data + len);
}
void png_flush_cb(png_structp) {}

[[noreturn]] void png_error_cb(png_structp, png_const_charp msg) { throw std::runtime_error(msg); }
void png_warning_cb(png_structp, png_const_charp) {}

std::vector<std::uint8_t> encode_png(std::size_t height, std::size_t width, int bit_depth,
                                     int color_type, std::size_t row_bytes,
                                     const std::vector<std::uint8_t>& raw) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_cb,
                                            png_warning_cb);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  PngSink sink;
  try {
    png_set_write_fn(png, &sink, png_write_cb, png_flush_cb);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                 bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    for (std::size_t i = 0; i < height; ++i)
      png_write_row(png, const_cast<png_bytep>(raw.data() + i * row_bytes));
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return std::move(sink.bytes);
}

struct PngSource {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos;
};

void png_read_cb(png_structp png, png_bytep out, png_size_t len) {
  auto* src = static_cast<PngSource*>(png_get_io_ptr(png));
  if (src->pos + len > src->bytes->size()) png_error(png, "unexpected end of file");
  std::memcpy(out, src->bytes->data() + src->pos, len);
  src->pos += len;
}

struct Decoded {
  std::size_t height = 0, width = 0;
  int bit_depth = 8, channels = 1;
  std::vector<std::uint8_t> raw;  // big-endian samples for 16-bit
};

Decoded decode_png(const fs::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
    throw DataError(path.string(), 0, "not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_cb,
                                           png_warning_cb);
  png_infop info = png_create_info_struct(png);
  PngSource src{&bytes, 0};
  Decoded d;
  try {
    png_set_read_fn(png, &src, png_read_cb);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    d.height = png_get_image_height(png, info);
    d.width = png_get_image_width(png, info);
    d.bit_depth = png_get_bit_depth(png, info);
    d.channels = png_get_channels(png, info);
    const std::size_t row = png_get_rowbytes(png, info);
    d.raw.resize(row * d.height);
    for (std::size_t i = 0; i < d.height; ++i) png_read_row(png, d.raw.data() + i * row, nullptr);
  } catch (const std::exception& e) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path.string(), src.pos, std::string("PNG decode failed: ") + e.what());
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return d;
}

}  // namespace

void write_png16(const fs::path& path, const Field<float>& image) {
  const std::size_t h = image.height(), w = image.width();
  std::vector<std::uint8_t> raw(h * w * 2);
  auto v = image.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = std::clamp(static_cast<double>(v[i]), 0.0, 1.0);
    const auto q = static_cast<std::uint16_t>(std::lround(65535.0 * x));
    raw[2 * i] = static_cast<std::uint8_t>(q >> 8);
    raw[2 * i + 1] = static_cast<std::uint8_t>(q & 0xff);
  }
  std::vector<std::uint8_t> png;
  try {
    png = encode_png(h, w, 16, PNG_COLOR_TYPE_GRAY, w * 2, raw);
  } catch (const std::exception& e) {
    throw DataError(path.string(), std::string("PNG encode failed: ") + e.what());
  }
  write_bytes(path, png);
}

Field<float> read_png16(const fs::path& path) {
  const Decoded d = decode_png(path);
  Field<float> out(d.height, d.width);
  auto v = out.values();
  const std::size_t stride = d.width * d.channels * (d.bit_depth / 8);
  for (std::size_t i = 0; i < d.height; ++i)
    for (std::size_t j = 0; j < d.width; ++j) {
      const std::uint8_t* px = d.raw.data() + i * stride + j * d.channels * (d.bit_depth / 8);
      // First channel; gray images have only one.
      const double value = d.bit_depth == 16 ? ((px[0] << 8) | px[1]) / 65535.0 : px[0] / 255.0;
      v[i * d.width + j] = static_cast<float>(value);
    }
  return out;
}

void write_png_rgb(const fs::path& path, std::size_t height, std::size_t width,
                   std::span<const Rgb> pixels) {
  if (pixels.size() != height * width) throw DomainError("write_png_rgb: pixel count mismatch");
  std::vector<std::uint8_t> raw(height * width * 3);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    raw[3 * i] = pixels[i].r;
    raw[3 * i + 1] = pixels[i].g;
    raw[3 * i + 2] = pixels[i].b;
  }
  std::vector<std::uint8_t> png;
  try {
    png = encode_png(height, width, 8, PNG_COLOR_TYPE_RGB, width * 3, raw);
  } catch (const std::exception& e) {
    throw DataError(path.string(), std::string("PNG encode failed: ") + e.what());
  }
  write_bytes(path, png);
}

std::vector<Rgb> read_png_rgb(const fs::path& path, std::size_t& height, std::size_t& width) {
  const Decoded d = decode_png(path);
  height = d.height;
  width = d.width;
  const std::size_t bps = d.bit_depth / 8, stride = d.width * d.channels * bps;
  std::vector<Rgb> out(d.height * d.width);
  for (std::size_t i = 0; i < d.height; ++i)
    for (std::size_t j = 0; j < d.width; ++j) {
      const std::uint8_t* px = d.raw.data() + i * stride + j * d.channels * bps;
      auto ch = [&](int c) { return px[c * bps]; };  // high byte for 16-bit
      out[i * d.width + j] = d.channels >= 3 ? Rgb{ch(0), ch(1), ch(2)} : Rgb{ch(0), ch(0), ch(0)};
    }
  return out;
}

// ---------------------------------------------------------------------------
// Byte streams

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  raw(s);
}

void ByteReader::fail(const std::string& what) const { throw DataError(source_, pos_, what); }

void ByteReader::need(std::size_t n, const char* what) {
  if (bytes_.size() - pos_ < n)
    fail(std::string("truncated: need ") + std::to_string(n) + " byte(s) for " + what + ", have " +
         std::to_string(bytes_.size() - pos_));
}

std::uint8_t ByteReader::u8() {
  need(1, "u8");
  return bytes_[pos_++];
}
std::uint32_t ByteReader::u32() {
  need(4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}
std::uint64_t ByteReader::u64() {
  need(8, "u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}
float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }
std::string ByteReader::raw(std::size_t n) {
  need(n, "bytes");
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return s;
}
std::string ByteReader::str() {
  const std::uint32_t n = u32();
  return raw(n);
}

// ---------------------------------------------------------------------------
// MTCV

std::vector<std::uint8_t> encode_mtcv(const Field<float>& map) {
  ByteWriter w;
  w.raw("MTCV");
  w.u8(1);
  w.u8(0);
  w.u32(static_cast<std::uint32_t>(map.height()));
  w.u32(static_cast<std::uint32_t>(map.width()));
  for (float v : map.values()) w.f32(v);
  return std::move(w.bytes());
}

Field<float> decode_mtcv(std::span<const std::uint8_t> bytes, const std::string& source) {
  ByteReader r(bytes, source);
  if (r.raw(4) != "MTCV") throw DataError(source, 0, "bad magic (expected MTCV)");
  if (const auto v = r.u8(); v != 1) throw DataError(source, 4, "unsupported version " + std::to_string(v));
  if (const auto t = r.u8(); t != 0) throw DataError(source, 5, "unsupported dtype " + std::to_string(t));
  const std::uint32_t h = r.u32(), w = r.u32();
  if (h == 0 || w == 0) throw DataError(source, 6, "zero dimension");
  const std::uint64_t count = static_cast<std::uint64_t>(h) * w;
  if (r.remaining() != count * 4)
    r.fail("payload holds " + std::to_string(r.remaining()) + " bytes, expected " +
           std::to_string(count * 4));
  std::vector<float> values(count);
  for (auto& v : values) {
    v = r.f32();
    if (!std::isfinite(v)) throw DataError(source, r.offset() - 4, "non-finite value");
  }
  return Field<float>(h, w, std::move(values));
}

void write_mtcv(const fs::path& path, const Field<float>& map) { write_bytes(path, encode_mtcv(map)); }

Field<float> read_mtcv(const fs::path& path) { return decode_mtcv(read_bytes(path), path.string()); }

}  // namespace mtcurv::io
