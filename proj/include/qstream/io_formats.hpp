#pragma once

// Binary containers:
//
//   QSB1 bitplane stream (all little-endian, 40-byte header)
//     0  char[4] "QSB1"
//     4  u32     version (1)
//     8  u32     width
//    12  u32     height
//    16  u64     frame_count
//    24  f64     frame_rate_hz
//    32  u64     first_timestamp
//    40  frame_count x ceil(width*height/8) bytes, row-major, MSB-first
//
//   QSX1 exposure stack (little-endian, 29 + 8*channels byte header)
//     0  char[4] "QSX1"
//     4  u32     version (1)
//     8  u32     width
//    12  u32     height
//    16  u32     channels
//    20  u8      dtype (0 = u8 quantized, 1 = f32)
//    21  u64     timestamp
//    29  f64[channels] windows, strictly decreasing
//    ..  channels planes of width*height samples

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "qstream/errors.hpp"
#include "qstream/image.hpp"
#include "qstream/sensor_model.hpp"
#include "qstream/streaming_sketch.hpp"

namespace qstream::io {

inline constexpr std::array<char, 4> kBitplaneMagic{'Q', 'S', 'B', '1'};
inline constexpr std::array<char, 4> kStackMagic{'Q', 'S', 'X', '1'};
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kBitplaneHeaderSize = 40;
inline constexpr std::uint32_t kMaxDimension = 1u << 16;
inline constexpr std::uint32_t kMaxChannels = 255;

// ---------------------------------------------------------------------------
// Little-endian primitives
// ---------------------------------------------------------------------------

class ByteWriter {
public:
  void bytes(std::span<const char> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }

  [[nodiscard]] const std::vector<char>& data() const noexcept { return out_; }
  [[nodiscard]] std::vector<char> take() noexcept { return std::move(out_); }

private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::vector<char> out_;
};

/// Bounds-checked cursor over a byte buffer; every overrun is a FormatError.
class ByteReader {
public:
  explicit ByteReader(std::span<const char> data, std::uint64_t base_offset = 0)
      : data_(data), base_(base_offset) {}

  [[nodiscard]] std::uint64_t offset() const noexcept { return base_ + pos_; }
  [[nodiscard]] std::size_t remaining() const noexcept { return data_.size() - pos_; }

  std::span<const char> bytes(std::size_t n, const char* what) {
    if (n > remaining()) {
      throw FormatError(std::string("truncated ") + what, offset());
    }
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(bytes(1, what)[0]); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(get(4, what)); }
  std::uint64_t u64(const char* what) { return get(8, what); }
  float f32(const char* what) { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4, what))); }
  double f64(const char* what) { return std::bit_cast<double>(get(8, what)); }

private:
  std::uint64_t get(int n, const char* what) {
    auto b = bytes(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(b[i])) << (8 * i);
    return v;
  }

  std::span<const char> data_;
  std::size_t pos_ = 0;
  std::uint64_t base_;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, std::span<const char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot create " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Bit packing
// ---------------------------------------------------------------------------

[[nodiscard]] constexpr std::size_t packed_frame_bytes(std::size_t pixels) noexcept {
  return (pixels + 7) / 8;
}

/// Packs one bitplane row-major, most significant bit first.
inline void pack_bits(const BitPlane& plane, std::span<char> out) {
  std::fill(out.begin(), out.end(), char{0});
  for (std::size_t i = 0; i < plane.bits.size(); ++i) {
    if (plane.bits[i]) out[i / 8] = static_cast<char>(static_cast<std::uint8_t>(out[i / 8]) | (0x80u >> (i % 8)));
  }
}

inline void unpack_bits(std::span<const char> in, BitPlane& plane) {
  for (std::size_t i = 0; i < plane.bits.size(); ++i) {
    plane.bits[i] = (static_cast<std::uint8_t>(in[i / 8]) >> (7 - i % 8)) & 1u;
  }
}

// ---------------------------------------------------------------------------
// QSB1 bitplane streams
// ---------------------------------------------------------------------------

struct BitplaneFileHeader {
  std::uint32_t version = kFormatVersion;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint64_t frame_count = 0;
  double frame_rate_hz = kDefaultFrameRate;
  std::uint64_t first_timestamp = 0;

  [[nodiscard]] std::size_t frame_bytes() const noexcept {
    return packed_frame_bytes(static_cast<std::size_t>(width) * height);
  }

  friend bool operator==(const BitplaneFileHeader&, const BitplaneFileHeader&) = default;
};

inline std::vector<char> encode_bitplane_header(const BitplaneFileHeader& h) {
  ByteWriter w;
  w.bytes(kBitplaneMagic);
  w.u32(h.version);
  w.u32(h.width);
  w.u32(h.height);
  w.u64(h.frame_count);
  w.f64(h.frame_rate_hz);
  w.u64(h.first_timestamp);
  return w.take();
}

/// Parses and validates a header; `file_size`, when known, is checked
/// against the declared payload.
inline BitplaneFileHeader decode_bitplane_header(std::span<const char> bytes,
                                                 std::optional<std::uint64_t> file_size = {}) {
  ByteReader r(bytes);
  auto magic = r.bytes(4, "header magic");
  if (!std::equal(magic.begin(), magic.end(), kBitplaneMagic.begin())) {
    throw FormatError("bad magic, expected QSB1", 0);
  }
  BitplaneFileHeader h;
  h.version = r.u32("header version");
  if (h.version != kFormatVersion) throw FormatError("unsupported QSB1 version " + std::to_string(h.version), 4);
  h.width = r.u32("header width");
  h.height = r.u32("header height");
  if (h.width == 0 || h.height == 0 || h.width > kMaxDimension || h.height > kMaxDimension) {
    throw FormatError("dimension out of range: " + std::to_string(h.width) + "x" + std::to_string(h.height), 8);
  }
  h.frame_count = r.u64("header frame_count");
  h.frame_rate_hz = r.f64("header frame_rate_hz");
  h.first_timestamp = r.u64("header first_timestamp");
  const std::uint64_t fb = h.frame_bytes();
  if (h.frame_count > (std::numeric_limits<std::uint64_t>::max() - kBitplaneHeaderSize) / fb) {
    throw FormatError("frame_count overflows payload size", 16);
  }
  if (h.first_timestamp > std::numeric_limits<std::uint64_t>::max() - h.frame_count) {
    throw FormatError("timestamp range overflows", 32);
  }
  if (!(h.frame_rate_hz > 0.0) || !std::isfinite(h.frame_rate_hz)) {
    throw FormatError("frame rate must be positive", 24);
  }
  if (file_size) {
    const std::uint64_t expected = kBitplaneHeaderSize + h.frame_count * fb;
    if (*file_size < expected) {
      const std::uint64_t missing = (*file_size - kBitplaneHeaderSize) / fb;
      throw FormatError("truncated payload: frame " + std::to_string(missing) + " of " +
                            std::to_string(h.frame_count) + " is missing",
                        kBitplaneHeaderSize + missing * fb);
    }
    if (*file_size > expected) throw FormatError("trailing bytes after last frame", expected);
  }
  return h;
}

/// Appends frames to a QSB1 file; the frame count is patched on close.
class BitplaneWriter {
public:
  BitplaneWriter(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height,
                 double frame_rate_hz, std::uint64_t first_timestamp = 0)
      : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
    if (!out_) throw std::runtime_error("cannot create " + path.string());
    if (width == 0 || height == 0 || width > kMaxDimension || height > kMaxDimension) {
      throw ShapeError("bitplane writer: dimensions out of range");
    }
    header_.width = width;
    header_.height = height;
    header_.frame_rate_hz = frame_rate_hz;
    header_.first_timestamp = first_timestamp;
    buffer_.resize(header_.frame_bytes());
    write_header();
  }

  BitplaneWriter(const BitplaneWriter&) = delete;
  BitplaneWriter& operator=(const BitplaneWriter&) = delete;

  ~BitplaneWriter() {
    try {
      close();
    } catch (...) {
    }
  }

  void write(const BitPlane& plane) {
    if (plane.width != header_.width || plane.height != header_.height) {
      throw ShapeError("bitplane writer: frame shape differs from header");
    }
    if (plane.timestamp != header_.first_timestamp + header_.frame_count) {
      throw SequencingError("bitplane writer: expected frame " +
                            std::to_string(header_.first_timestamp + header_.frame_count) +
                            ", got " + std::to_string(plane.timestamp));
    }
    pack_bits(plane, buffer_);
    out_.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
    ++header_.frame_count;
  }

  void close() {
    if (!out_.is_open()) return;
    out_.seekp(0);
    write_header();
    out_.close();
    if (out_.fail()) throw std::runtime_error("write failed for " + path_.string());
  }

  [[nodiscard]] const BitplaneFileHeader& header() const noexcept { return header_; }

private:
  void write_header() {
    const auto bytes = encode_bitplane_header(header_);
    out_.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }

  std::ofstream out_;
  std::filesystem::path path_;
  BitplaneFileHeader header_;
  std::vector<char> buffer_;
};

/// Sequential QSB1 reader. The header and total payload length are validated
/// on open, so a truncated file is rejected before any frame is returned.
class BitplaneReader {
public:
  explicit BitplaneReader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open " + path.string());
    const std::uint64_t size = std::filesystem::file_size(path);
    std::vector<char> head(std::min<std::uint64_t>(size, kBitplaneHeaderSize));
    in_.read(head.data(), static_cast<std::streamsize>(head.size()));
    header_ = decode_bitplane_header(head, size);
    buffer_.resize(header_.frame_bytes());
  }

  [[nodiscard]] const BitplaneFileHeader& header() const noexcept { return header_; }

  std::optional<BitPlane> next() {
    if (index_ >= header_.frame_count) return std::nullopt;
    in_.read(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
    if (static_cast<std::size_t>(in_.gcount()) != buffer_.size()) {
      throw FormatError("truncated payload: frame " + std::to_string(index_) + " is missing",
                        kBitplaneHeaderSize + index_ * buffer_.size());
    }
    BitPlane plane(header_.width, header_.height, header_.first_timestamp + index_);
    unpack_bits(buffer_, plane);
    ++index_;
    return plane;
  }

private:
  std::ifstream in_;
  BitplaneFileHeader header_;
  std::vector<char> buffer_;
  std::uint64_t index_ = 0;
};

/// In-memory encoding of a whole stream. Timestamps must be consecutive.
inline std::vector<char> encode_bitplanes(std::span<const BitPlane> frames, double frame_rate_hz) {
  if (frames.empty()) throw std::invalid_argument("encode_bitplanes: no frames");
  BitplaneFileHeader h;
  h.width = static_cast<std::uint32_t>(frames.front().width);
  h.height = static_cast<std::uint32_t>(frames.front().height);
  h.frame_count = frames.size();
  h.frame_rate_hz = frame_rate_hz;
  h.first_timestamp = frames.front().timestamp;
  auto out = encode_bitplane_header(h);
  std::vector<char> buf(h.frame_bytes());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    if (f.width != h.width || f.height != h.height) throw ShapeError("encode_bitplanes: shapes differ");
    if (f.timestamp != h.first_timestamp + i) throw SequencingError("encode_bitplanes: timestamps not consecutive");
    pack_bits(f, buf);
    out.insert(out.end(), buf.begin(), buf.end());
  }
  return out;
}

struct BitplaneFile {
  BitplaneFileHeader header;
  std::vector<BitPlane> frames;
};

inline BitplaneFile decode_bitplanes(std::span<const char> bytes) {
  BitplaneFile file;
  file.header = decode_bitplane_header(bytes.first(std::min(bytes.size(), kBitplaneHeaderSize)),
                                       bytes.size());
  ByteReader r(bytes.subspan(kBitplaneHeaderSize), kBitplaneHeaderSize);
  const std::size_t fb = file.header.frame_bytes();
  file.frames.reserve(file.header.frame_count);
  for (std::uint64_t i = 0; i < file.header.frame_count; ++i) {
    BitPlane plane(file.header.width, file.header.height, file.header.first_timestamp + i);
    unpack_bits(r.bytes(fb, "frame payload"), plane);
    file.frames.push_back(std::move(plane));
  }
  return file;
}

inline void write_bitplanes(const std::filesystem::path& path, std::span<const BitPlane> frames,
                            double frame_rate_hz) {
  write_file(path, encode_bitplanes(frames, frame_rate_hz));
}

inline BitplaneFile read_bitplanes(const std::filesystem::path& path) {
  return decode_bitplanes(read_file(path));
}

// ---------------------------------------------------------------------------
// QSX1 exposure stacks
// ---------------------------------------------------------------------------

enum class StackDtype : std::uint8_t { U8 = 0, F32 = 1 };

[[nodiscard]] constexpr std::size_t stack_header_size(std::size_t channels) noexcept {
  return 29 + 8 * channels;
}

inline std::vector<char> encode_stack(const ExposureStack& s, StackDtype dtype) {
  const std::size_t c = s.channels();
  if (c == 0 || c > kMaxChannels) throw ShapeError("encode_stack: channel count out of range");
  if (s.width == 0 || s.height == 0 || s.width > kMaxDimension || s.height > kMaxDimension) {
    throw ShapeError("encode_stack: dimensions out of range");
  }
  for (std::size_t k = 1; k < c; ++k) {
    if (!(s.windows[k] < s.windows[k - 1])) {
      throw ShapeError("encode_stack: windows must be strictly decreasing");
    }
  }
  const std::size_t n = c * s.pixel_count();
  ByteWriter w;
  w.bytes(kStackMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(s.width));
  w.u32(static_cast<std::uint32_t>(s.height));
  w.u32(static_cast<std::uint32_t>(c));
  w.u8(static_cast<std::uint8_t>(dtype));
  w.u64(s.timestamp);
  for (double win : s.windows) w.f64(win);
  if (dtype == StackDtype::U8) {
    if (s.quantized.size() != n) throw ShapeError("encode_stack: quantized payload size mismatch");
    for (auto q : s.quantized) w.u8(q);
  } else {
    if (!s.raw || s.raw->size() != n) throw ShapeError("encode_stack: f32 needs full-precision planes");
    for (float v : *s.raw) w.f32(v);
  }
  return w.take();
}

inline ExposureStack decode_stack(std::span<const char> bytes) {
  ByteReader r(bytes);
  auto magic = r.bytes(4, "header magic");
  if (!std::equal(magic.begin(), magic.end(), kStackMagic.begin())) {
    throw FormatError("bad magic, expected QSX1", 0);
  }
  const auto version = r.u32("header version");
  if (version != kFormatVersion) throw FormatError("unsupported QSX1 version " + std::to_string(version), 4);
  const auto width = r.u32("header width");
  const auto height = r.u32("header height");
  if (width == 0 || height == 0 || width > kMaxDimension || height > kMaxDimension) {
    throw FormatError("dimension out of range", 8);
  }
  const auto channels = r.u32("header channels");
  if (channels == 0 || channels > kMaxChannels) throw FormatError("channel count out of range", 16);
  const auto dtype = r.u8("header dtype");
  if (dtype > 1) throw FormatError("unknown dtype " + std::to_string(dtype), 20);

  ExposureStack s;
  s.width = width;
  s.height = height;
  s.timestamp = r.u64("header timestamp");
  s.windows.resize(channels);
  for (std::uint32_t k = 0; k < channels; ++k) {
    const std::uint64_t at = r.offset();
    s.windows[k] = r.f64("window table");
    if (!std::isfinite(s.windows[k]) || s.windows[k] < 1.0 || (k > 0 && !(s.windows[k] < s.windows[k - 1]))) {
      throw FormatError("window table must be finite, >= 1 and strictly decreasing", at);
    }
  }
  s.channel_timestamps.assign(channels, s.timestamp);
  const std::size_t n = static_cast<std::size_t>(channels) * width * height;
  if (static_cast<StackDtype>(dtype) == StackDtype::U8) {
    auto payload = r.bytes(n, "u8 payload");
    s.quantized.assign(reinterpret_cast<const std::uint8_t*>(payload.data()),
                       reinterpret_cast<const std::uint8_t*>(payload.data()) + n);
  } else {
    if (r.remaining() < n * 4) throw FormatError("truncated f32 payload", r.offset());
    std::vector<float> raw(n);
    for (auto& v : raw) v = r.f32("f32 payload");
    s.quantized.resize(n);
    for (std::size_t i = 0; i < n; ++i) s.quantized[i] = quantize_unit(raw[i]);
    s.raw = std::move(raw);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after stack payload", r.offset());
  return s;
}

inline void write_stack(const std::filesystem::path& path, const ExposureStack& s, StackDtype dtype) {
  write_file(path, encode_stack(s, dtype));
}

inline ExposureStack read_stack(const std::filesystem::path& path) { return decode_stack(read_file(path)); }

/// A single flux image as a one-channel f32 stack (window 1 frame).
inline ExposureStack flux_as_stack(const Image<double>& flux, std::uint64_t timestamp) {
  ExposureStack s;
  s.width = flux.width();
  s.height = flux.height();
  s.timestamp = timestamp;
  s.windows = {1.0};
  s.channel_timestamps = {timestamp};
  s.raw.emplace(flux.pixels().begin(), flux.pixels().end());
  s.quantized.resize(flux.size());
  for (std::size_t i = 0; i < flux.size(); ++i) s.quantized[i] = quantize_unit(flux[i]);
  return s;
}

// ---------------------------------------------------------------------------
// PGM
// ---------------------------------------------------------------------------

/// Binary P5 with maxval 255; values are mapped by round(255 * v / peak).
inline std::vector<char> encode_pgm(const Image<double>& img, double peak) {
  if (!(peak > 0.0)) throw std::range_error("write_pgm: peak must be > 0");
  if (img.empty()) throw ShapeError("write_pgm: empty image");
  const std::string header =
      "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<char> out(header.begin(), header.end());
  out.reserve(header.size() + img.size());
  for (double v : img.pixels()) {
    if (!(v >= 0.0 && v <= peak)) {
      throw std::range_error("write_pgm: value " + std::to_string(v) + " outside [0, " +
                             std::to_string(peak) + "]");
    }
    out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::round(255.0 * v / peak))));
  }
  return out;
}

inline void write_pgm(const std::filesystem::path& path, const Image<double>& img, double peak) {
  write_file(path, encode_pgm(img, peak));
}

/// Reads a binary PGM (8- or 16-bit) scaled to [0, 1].
inline Image<double> decode_pgm(std::span<const char> bytes) {
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_ws();
    const std::size_t start = pos;
    std::uint64_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::uint64_t>(bytes[pos] - '0');
      if (v > kMaxDimension) throw FormatError(std::string("PGM ") + what + " too large", start);
      ++pos;
    }
    if (pos == start) throw FormatError(std::string("PGM ") + what + " missing", start);
    return static_cast<std::size_t>(v);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("not a binary PGM (P5)", 0);
  pos = 2;
  const std::size_t w = number("width");
  const std::size_t h = number("height");
  const std::size_t maxval = number("maxval");
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw FormatError("PGM header out of range", pos);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("PGM header not terminated", pos);
  }
  ++pos;
  const std::size_t bps = maxval > 255 ? 2 : 1;
  ByteReader r(bytes.subspan(pos), pos);
  auto payload = r.bytes(w * h * bps, "PGM payload");
  Image<double> img(w, h);
  for (std::size_t i = 0; i < w * h; ++i) {
    const auto hi = static_cast<std::uint8_t>(payload[i * bps]);
    const std::uint32_t v = bps == 2 ? (hi << 8u) | static_cast<std::uint8_t>(payload[i * 2 + 1]) : hi;
    img[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return img;
}

inline Image<double> read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }

}  // namespace qstream::io
