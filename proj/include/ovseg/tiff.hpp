#pragma once

// Minimal baseline TIFF codec for label stacks: uncompressed, one sample per
// pixel, unsigned 8/16/32-bit integers, one page per z-layer.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "ovseg/error.hpp"
#include "ovseg/volume.hpp"

namespace ovseg::tiff {

namespace tag {
inline constexpr std::uint16_t kImageWidth = 256;
inline constexpr std::uint16_t kImageLength = 257;
inline constexpr std::uint16_t kBitsPerSample = 258;
inline constexpr std::uint16_t kCompression = 259;
inline constexpr std::uint16_t kPhotometric = 262;
inline constexpr std::uint16_t kImageDescription = 270;
inline constexpr std::uint16_t kStripOffsets = 273;
inline constexpr std::uint16_t kSamplesPerPixel = 277;
inline constexpr std::uint16_t kRowsPerStrip = 278;
inline constexpr std::uint16_t kStripByteCounts = 279;
inline constexpr std::uint16_t kPlanarConfig = 284;
inline constexpr std::uint16_t kSampleFormat = 339;
}  // namespace tag

struct Stack {
  Dims dims;
  std::vector<Label> data;
  std::string description;  ///< ImageDescription of the first page, if any
};

namespace detail {

class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> bytes) : b_(std::move(bytes)) {
    if (b_.size() < 8) throw FormatError("TIFF: file too short");
    if (b_[0] == 'I' && b_[1] == 'I') {
      little_ = true;
    } else if (b_[0] == 'M' && b_[1] == 'M') {
      little_ = false;
    } else {
      throw FormatError("TIFF: bad byte-order mark");
    }
    if (u16(2) != 42) throw FormatError("TIFF: bad magic number");
  }

  std::size_t size() const { return b_.size(); }

  std::uint16_t u16(std::size_t off) const {
    need(off, 2);
    return little_ ? static_cast<std::uint16_t>(b_[off] | (b_[off + 1] << 8))
                   : static_cast<std::uint16_t>((b_[off] << 8) | b_[off + 1]);
  }
  std::uint32_t u32(std::size_t off) const {
    need(off, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint32_t byte = b_[off + (little_ ? i : 3 - i)];
      v |= byte << (8 * i);
    }
    return v;
  }
  const std::uint8_t* ptr(std::size_t off, std::size_t n) const {
    need(off, n);
    return b_.data() + off;
  }

  /// Values of a SHORT/LONG entry (inline or via offset).
  std::vector<std::uint32_t> values(std::size_t entry) const {
    const std::uint16_t type = u16(entry + 2);
    const std::uint32_t count = u32(entry + 4);
    std::size_t width = 0;
    if (type == 3) {
      width = 2;
    } else if (type == 4) {
      width = 4;
    } else {
      throw FormatError("TIFF: unsupported field type " + std::to_string(type));
    }
    const std::size_t base = count * width <= 4 ? entry + 8 : u32(entry + 8);
    std::vector<std::uint32_t> out(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      out[i] = width == 2 ? u16(base + i * 2) : u32(base + i * 4);
    }
    return out;
  }

  std::string ascii(std::size_t entry) const {
    const std::uint32_t count = u32(entry + 4);
    const std::size_t base = count <= 4 ? entry + 8 : u32(entry + 8);
    const auto* p = ptr(base, count);
    std::string s(reinterpret_cast<const char*>(p), count);
    while (!s.empty() && s.back() == '\0') s.pop_back();
    return s;
  }

  bool little() const { return little_; }

 private:
  void need(std::size_t off, std::size_t n) const {
    if (off > b_.size() || n > b_.size() - off) throw FormatError("TIFF: truncated file");
  }

  std::vector<std::uint8_t> b_;
  bool little_ = true;
};

inline void put16(std::vector<std::uint8_t>& o, std::uint16_t v) {
  o.push_back(static_cast<std::uint8_t>(v));
  o.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put32(std::vector<std::uint8_t>& o, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) o.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace detail

inline Stack decode(std::vector<std::uint8_t> bytes) {
  detail::Reader r(std::move(bytes));
  Stack out;
  std::size_t ifd = r.u32(4);
  std::size_t pages = 0;
  while (ifd != 0) {
    if (++pages > 1000000) throw FormatError("TIFF: IFD chain does not terminate");
    const std::uint16_t n_entries = r.u16(ifd);
    std::uint32_t width = 0, height = 0, bits = 1, compression = 1, spp = 1, planar = 1;
    std::uint32_t sample_format = 1, rows_per_strip = 0xFFFFFFFFu;
    std::vector<std::uint32_t> offsets, counts;
    std::string description;
    for (std::uint16_t e = 0; e < n_entries; ++e) {
      const std::size_t entry = ifd + 2 + 12u * e;
      const std::uint16_t t = r.u16(entry);
      switch (t) {
        case tag::kImageWidth: width = r.values(entry).at(0); break;
        case tag::kImageLength: height = r.values(entry).at(0); break;
        case tag::kBitsPerSample: bits = r.values(entry).at(0); break;
        case tag::kCompression: compression = r.values(entry).at(0); break;
        case tag::kSamplesPerPixel: spp = r.values(entry).at(0); break;
        case tag::kPlanarConfig: planar = r.values(entry).at(0); break;
        case tag::kSampleFormat: sample_format = r.values(entry).at(0); break;
        case tag::kRowsPerStrip: rows_per_strip = r.values(entry).at(0); break;
        case tag::kStripOffsets: offsets = r.values(entry); break;
        case tag::kStripByteCounts: counts = r.values(entry); break;
        case tag::kImageDescription:
          if (r.u16(entry + 2) == 2) description = r.ascii(entry);
          break;
        default: break;
      }
    }
    if (compression != 1) throw FormatError("TIFF: compressed pages are not supported");
    if (spp != 1 || planar != 1) throw FormatError("TIFF: only single-sample pages are supported");
    if (bits != 8 && bits != 16 && bits != 32) {
      throw FormatError("TIFF: unsupported bits per sample " + std::to_string(bits));
    }
    if (sample_format != 1 && sample_format != 2) {
      throw FormatError("TIFF: unsupported sample format " + std::to_string(sample_format) +
                        " (integer labels required)");
    }
    if (width == 0 || height == 0) throw FormatError("TIFF: page without dimensions");
    if (offsets.empty() || offsets.size() != counts.size()) {
      throw FormatError("TIFF: strip tables missing or inconsistent");
    }
    if (pages == 1) {
      out.dims.y = height;
      out.dims.x = width;
      out.description = description;
    } else if (out.dims.y != height || out.dims.x != width) {
      throw FormatError("TIFF: pages differ in size");
    }
    const std::size_t bytes_per = bits / 8;
    const std::size_t page_pixels = static_cast<std::size_t>(width) * height;
    std::vector<std::uint8_t> raw;
    raw.reserve(page_pixels * bytes_per);
    for (std::size_t s = 0; s < offsets.size(); ++s) {
      const auto* p = r.ptr(offsets[s], counts[s]);
      raw.insert(raw.end(), p, p + counts[s]);
    }
    (void)rows_per_strip;
    if (raw.size() < page_pixels * bytes_per) throw FormatError("TIFF: strip data too short");
    for (std::size_t i = 0; i < page_pixels; ++i) {
      const std::uint8_t* q = raw.data() + i * bytes_per;
      std::uint32_t v = 0;
      for (std::size_t k = 0; k < bytes_per; ++k) {
        const std::uint32_t byte = q[r.little() ? k : bytes_per - 1 - k];
        v |= byte << (8 * k);
      }
      if (sample_format == 2 && (v >> (bits - 1)) & 1u) {
        throw FormatError("TIFF: negative label value");
      }
      out.data.push_back(v);
    }
    ifd = r.u32(ifd + 2 + 12u * n_entries);
  }
  out.dims.z = pages;
  return out;
}

/// Little-endian, 32-bit unsigned, one strip per page. The description is
/// stored on the first page only.
inline std::vector<std::uint8_t> encode(const Dims& dims, std::span<const Label> data,
                                        const std::string& description) {
  using detail::put16;
  using detail::put32;
  if (dims.voxels() != data.size()) throw InvalidArgument("TIFF: data does not match dims");
  if (dims.z == 0) throw InvalidArgument("TIFF: at least one page is required");
  std::vector<std::uint8_t> o;
  o.insert(o.end(), {'I', 'I'});
  put16(o, 42);
  put32(o, 8);
  const std::size_t page_bytes = dims.y * dims.x * 4;
  for (std::size_t z = 0; z < dims.z; ++z) {
    const bool first = z == 0;
    const std::string desc = first ? description : std::string();
    const std::uint16_t n_entries = desc.empty() ? 11 : 12;
    const std::size_t ifd_start = o.size();
    const std::size_t ifd_size = 2 + 12u * n_entries + 4;
    const std::size_t desc_off = ifd_start + ifd_size;
    const std::size_t desc_len = desc.empty() ? 0 : desc.size() + 1;
    std::size_t data_off = desc_off + desc_len;
    data_off += data_off & 1u;  // word alignment
    const std::size_t next_ifd = data_off + page_bytes;
    if (next_ifd > 0xFFFFFFFFu) throw InvalidArgument("TIFF: stack exceeds 4 GiB");

    put16(o, n_entries);
    auto entry = [&](std::uint16_t t, std::uint16_t type, std::uint32_t count, std::uint32_t v) {
      put16(o, t);
      put16(o, type);
      put32(o, count);
      if (type == 3 && count == 1) {
        put16(o, static_cast<std::uint16_t>(v));
        put16(o, 0);
      } else {
        put32(o, v);
      }
    };
    entry(tag::kImageWidth, 4, 1, static_cast<std::uint32_t>(dims.x));
    entry(tag::kImageLength, 4, 1, static_cast<std::uint32_t>(dims.y));
    entry(tag::kBitsPerSample, 3, 1, 32);
    entry(tag::kCompression, 3, 1, 1);
    entry(tag::kPhotometric, 3, 1, 1);
    if (!desc.empty()) {
      entry(tag::kImageDescription, 2, static_cast<std::uint32_t>(desc_len),
            static_cast<std::uint32_t>(desc_off));
    }
    entry(tag::kStripOffsets, 4, 1, static_cast<std::uint32_t>(data_off));
    entry(tag::kSamplesPerPixel, 3, 1, 1);
    entry(tag::kRowsPerStrip, 4, 1, static_cast<std::uint32_t>(dims.y));
    entry(tag::kStripByteCounts, 4, 1, static_cast<std::uint32_t>(page_bytes));
    entry(tag::kPlanarConfig, 3, 1, 1);
    entry(tag::kSampleFormat, 3, 1, 1);
    put32(o, z + 1 < dims.z ? static_cast<std::uint32_t>(next_ifd) : 0u);
    if (!desc.empty()) {
      o.insert(o.end(), desc.begin(), desc.end());
      o.push_back(0);
    }
    while (o.size() < data_off) o.push_back(0);
    const std::size_t base = z * dims.y * dims.x;
    for (std::size_t i = 0; i < dims.y * dims.x; ++i) put32(o, data[base + i]);
  }
  return o;
}

}  // namespace ovseg::tiff
