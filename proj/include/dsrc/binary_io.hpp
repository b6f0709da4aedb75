#pragma once

// Little-endian primitives and the shared container layout used by
// checkpoints and dataset caches:
//
//   magic (8 bytes) | u32 version | u64 header length | JSON header | payload
//
// The payload is a sequence of raw little-endian float64 blocks whose names,
// shapes and order are declared in the header.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dsrc/error.hpp"

namespace dsrc::io {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline void put_f64(std::ostream& os, std::span<const double> values) {
  std::vector<char> buf(values.size() * 8);
  for (std::size_t k = 0; k < values.size(); ++k) {
    const auto bits = std::bit_cast<std::uint64_t>(values[k]);
    for (int i = 0; i < 8; ++i) buf[k * 8 + i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline void read_exact(std::istream& is, char* dst, std::size_t n, std::string_view what) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw FormatError("truncated file while reading " + std::string(what));
}

inline std::uint32_t get_u32(std::istream& is, std::string_view what) {
  unsigned char b[4];
  read_exact(is, reinterpret_cast<char*>(b), 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& is, std::string_view what) {
  unsigned char b[8];
  read_exact(is, reinterpret_cast<char*>(b), 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline std::vector<double> get_f64(std::istream& is, std::size_t count, std::string_view what) {
  std::vector<unsigned char> buf(count * 8);
  read_exact(is, reinterpret_cast<char*>(buf.data()), buf.size(), what);
  std::vector<double> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[k * 8 + i]) << (8 * i);
    out[k] = std::bit_cast<double>(bits);
  }
  return out;
}

/// Writes magic, version and JSON header; the caller appends the payload.
inline void write_container_header(std::ostream& os, std::string_view magic, std::uint32_t version,
                                   const nlohmann::json& header) {
  if (magic.size() != 8) throw Error("container magic must be 8 bytes");
  os.write(magic.data(), 8);
  put_u32(os, version);
  const std::string text = header.dump();
  put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

/// Validates magic and version and returns the parsed header.
inline nlohmann::json read_container_header(std::istream& is, std::string_view magic, std::uint32_t version) {
  char got[8];
  is.read(got, 8);
  if (is.gcount() != 8 || std::memcmp(got, magic.data(), 8) != 0)
    throw FormatError("bad magic bytes: expected \"" + std::string(magic) + "\"");
  const auto v = get_u32(is, "format version");
  if (v != version)
    throw FormatError("unsupported format version " + std::to_string(v) + " (expected " + std::to_string(version) +
                      ")");
  const auto len = get_u64(is, "header length");
  if (len > (std::uint64_t{1} << 32)) throw FormatError("implausible header length");
  std::string text(len, '\0');
  read_exact(is, text.data(), len, "JSON header");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed JSON header: ") + e.what());
  }
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path + " for writing");
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path + " for reading");
  return is;
}

inline void write_text(const std::string& path, const std::string& text) {
  auto os = open_out(path);
  os << text;
  if (!os) throw Error("failed writing " + path);
}

inline std::string read_text(const std::string& path) {
  auto is = open_in(path);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace dsrc::io
