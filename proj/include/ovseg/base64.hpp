#pragma once

// Base64 of little-endian float64 buffers, for bit-exact model files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/dataflow_exception.hpp>
#include <boost/archive/iterators/transform_width.hpp>

#include "ovseg/error.hpp"

namespace ovseg::b64 {

inline std::string encode(const std::string& bytes) {
  using namespace boost::archive::iterators;
  using It = base64_from_binary<transform_width<std::string::const_iterator, 6, 8>>;
  std::string out(It(bytes.begin()), It(bytes.end()));
  out.append((3 - bytes.size() % 3) % 3, '=');
  return out;
}

inline std::string decode(const std::string& text) {
  using namespace boost::archive::iterators;
  using It = transform_width<binary_from_base64<std::string::const_iterator>, 8, 6>;
  if (text.size() % 4 != 0) throw FormatError("base64 length is not a multiple of 4");
  std::size_t pad = 0;
  while (pad < 2 && pad < text.size() && text[text.size() - 1 - pad] == '=') ++pad;
  const std::string body = text.substr(0, text.size() - pad);
  if (body.find('=') != std::string::npos) throw FormatError("misplaced base64 padding");
  try {
    std::string out(It(body.begin()), It(body.end()));
    out.resize(body.size() * 6 / 8);
    return out;
  } catch (const dataflow_exception& e) {
    throw FormatError(std::string("invalid base64: ") + e.what());
  }
}

inline std::string encode_doubles(const std::vector<double>& v) {
  std::string bytes(v.size() * 8, '\0');
  for (std::size_t i = 0; i < v.size(); ++i) {
    auto u = std::bit_cast<std::uint64_t>(v[i]);
    for (int k = 0; k < 8; ++k) bytes[i * 8 + k] = static_cast<char>((u >> (8 * k)) & 0xFF);
  }
  return encode(bytes);
}

inline std::vector<double> decode_doubles(const std::string& text) {
  const std::string bytes = decode(text);
  if (bytes.size() % 8 != 0) throw FormatError("float64 buffer length is not a multiple of 8");
  std::vector<double> v(bytes.size() / 8);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint64_t u = 0;
    for (int k = 0; k < 8; ++k) {
      u |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + k])) << (8 * k);
    }
    v[i] = std::bit_cast<double>(u);
  }
  return v;
}

}  // namespace ovseg::b64
