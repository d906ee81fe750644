#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ptpai/common.hpp"
#include "ptpai/signal.hpp"

namespace ptpai {

// Minimal Level-5 MAT-file reading: little-endian files, plain and
// zlib-compressed numeric arrays. Enough for the CWRU/JNU distribution
// records, which store each channel as an n x 1 double array.
namespace mat5 {

inline constexpr std::uint32_t miINT8 = 1, miUINT8 = 2, miINT16 = 3,
                               miUINT16 = 4, miINT32 = 5, miUINT32 = 6,
                               miSINGLE = 7, miDOUBLE = 9, miINT64 = 12,
                               miUINT64 = 13, miMATRIX = 14, miCOMPRESSED = 15;

struct Cursor {
  const unsigned char* data = nullptr;
  std::size_t size = 0;
  std::size_t pos = 0;

  bool done() const { return pos >= size; }
  void need(std::size_t n, const std::string& what) const {
    require(pos + n <= size, ErrorCode::format,
            "mat file truncated while reading " + what);
  }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    std::memcpy(&v, data + pos, 4);
    pos += 4;
    return v;
  }
};

struct Element {
  std::uint32_t type = 0;
  const unsigned char* payload = nullptr;
  std::size_t bytes = 0;
};

inline Element next_element(Cursor& c) {
  Element e;
  c.need(8, "element tag");
  std::uint32_t first = 0;
  std::memcpy(&first, c.data + c.pos, 4);
  if ((first & 0xffff0000u) != 0) {  // small data element
    e.type = first & 0xffffu;
    e.bytes = first >> 16;
    require(e.bytes <= 4, ErrorCode::format, "mat: bad small element");
    e.payload = c.data + c.pos + 4;
    c.pos += 8;
    return e;
  }
  e.type = c.u32();
  e.bytes = c.u32();
  c.need(e.bytes, "element payload");
  e.payload = c.data + c.pos;
  c.pos += e.bytes;
  c.pos = (c.pos + 7u) & ~static_cast<std::size_t>(7u);  // 8-byte alignment
  if (c.pos > c.size) c.pos = c.size;
  return e;
}

inline std::vector<double> decode_numeric(const Element& e) {
  std::vector<double> out;
  auto decode = [&out, &e](auto tag) {
    using T = decltype(tag);
    const std::size_t n = e.bytes / sizeof(T);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      T v;
      std::memcpy(&v, e.payload + i * sizeof(T), sizeof(T));
      out[i] = static_cast<double>(v);
    }
  };
  switch (e.type) {
    case miDOUBLE: decode(double{}); break;
    case miSINGLE: decode(float{}); break;
    case miINT8: decode(std::int8_t{}); break;
    case miUINT8: decode(std::uint8_t{}); break;
    case miINT16: decode(std::int16_t{}); break;
    case miUINT16: decode(std::uint16_t{}); break;
    case miINT32: decode(std::int32_t{}); break;
    case miUINT32: decode(std::uint32_t{}); break;
    case miINT64: decode(std::int64_t{}); break;
    case miUINT64: decode(std::uint64_t{}); break;
    default:
      fail(ErrorCode::format, "mat: unsupported numeric storage type " +
                                  std::to_string(e.type));
  }
  return out;
}

inline std::vector<unsigned char> inflate_all(const unsigned char* data,
                                              std::size_t size) {
  z_stream zs{};
  require(inflateInit(&zs) == Z_OK, ErrorCode::format, "mat: zlib init failed");
  std::vector<unsigned char> out(std::max<std::size_t>(size * 4, 1 << 16));
  zs.next_in = const_cast<unsigned char*>(data);
  zs.avail_in = static_cast<uInt>(size);
  std::size_t written = 0;
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    if (written == out.size()) out.resize(out.size() * 2);
    zs.next_out = out.data() + written;
    zs.avail_out = static_cast<uInt>(out.size() - written);
    rc = inflate(&zs, Z_NO_FLUSH);
    written = out.size() - zs.avail_out;
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      fail(ErrorCode::format, "mat: corrupt compressed element");
    }
  }
  inflateEnd(&zs);
  out.resize(written);
  return out;
}

struct Array {
  std::string name;
  std::vector<std::size_t> dims;
  std::vector<double> values;
  bool numeric = false;
};

inline Array parse_matrix(const Element& outer) {
  Cursor c{outer.payload, outer.bytes, 0};
  Array arr;

  Element flags = next_element(c);
  require(flags.type == miUINT32 && flags.bytes >= 8, ErrorCode::format,
          "mat: bad array flags");
  std::uint32_t flag_word = 0;
  std::memcpy(&flag_word, flags.payload, 4);
  const std::uint32_t cls = flag_word & 0xffu;
  const bool is_complex = (flag_word & 0x0800u) != 0;
  // numeric classes mxDOUBLE(6) .. mxUINT64(15)
  arr.numeric = cls >= 6 && cls <= 15 && !is_complex;

  Element dims = next_element(c);
  require(dims.type == miINT32, ErrorCode::format, "mat: bad dimensions");
  for (std::size_t i = 0; i < dims.bytes / 4; ++i) {
    std::int32_t d = 0;
    std::memcpy(&d, dims.payload + i * 4, 4);
    arr.dims.push_back(static_cast<std::size_t>(d));
  }

  Element name = next_element(c);
  require(name.type == miINT8, ErrorCode::format, "mat: bad array name");
  arr.name.assign(reinterpret_cast<const char*>(name.payload), name.bytes);

  if (arr.numeric && !c.done()) {
    Element real = next_element(c);
    arr.values = decode_numeric(real);
  }
  return arr;
}

template <typename Visit>
inline void for_each_array(const unsigned char* data, std::size_t size,
                           Visit&& visit) {
  Cursor c{data, size, 0};
  while (!c.done()) {
    if (c.size - c.pos < 8) break;
    Element e = next_element(c);
    if (e.type == miCOMPRESSED) {
      std::vector<unsigned char> raw = inflate_all(e.payload, e.bytes);
      Cursor inner{raw.data(), raw.size(), 0};
      if (inner.size >= 8) {
        Element sub = next_element(inner);
        if (sub.type == miMATRIX) {
          if (visit(parse_matrix(sub))) return;
        }
      }
    } else if (e.type == miMATRIX) {
      if (visit(parse_matrix(e))) return;
    }
  }
}

}  // namespace mat5

// Reads the named numeric array from a MAT v5 container, flattened in
// column-major order.
inline std::vector<double> read_mat_array(const std::string& path,
                                          const std::string& key) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::file_not_found, "no such file: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  require(bytes.size() > 128, ErrorCode::format,
          "not a MAT v5 file (too short): " + path);
  require(bytes[126] == 'I' && bytes[127] == 'M', ErrorCode::format,
          "unsupported MAT container (need little-endian v5): " + path);

  std::vector<double> values;
  bool found = false;
  bool bad_payload = false;
  mat5::for_each_array(
      bytes.data() + 128, bytes.size() - 128,
      [&](mat5::Array arr) {
        if (arr.name != key) return false;
        found = true;
        if (!arr.numeric) {
          bad_payload = true;
          return true;
        }
        values = std::move(arr.values);
        return true;
      });
  require(found, ErrorCode::key_not_found,
          "variable '" + key + "' not found in " + path);
  require(!bad_payload, ErrorCode::format,
          "variable '" + key + "' in " + path + " is not a real numeric array");
  return values;
}

enum class SourceCorpus { cwru_drive_end, jnu };

// Documented sample rates of the supported distributions.
inline double corpus_fs(SourceCorpus corpus) {
  switch (corpus) {
    case SourceCorpus::cwru_drive_end: return 12000.0;
    case SourceCorpus::jnu: return 50000.0;
  }
  return 0.0;
}

inline VibrationSignal ingest_matlab_records(const std::string& path,
                                             const std::string& channel_key,
                                             SourceCorpus corpus) {
  VibrationSignal out;
  out.samples = read_mat_array(path, channel_key);
  out.fs = corpus_fs(corpus);
  validate(out);
  return out;
}

}  // namespace ptpai
