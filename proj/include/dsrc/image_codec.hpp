#pragma once

// Grayscale image decoding/encoding: PNG through libpng, binary and ASCII
// PNM (P2/P3/P5/P6) by hand. Colour is reduced with Rec. 601 luma weights.

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dsrc/binary_io.hpp"
#include "dsrc/error.hpp"

namespace dsrc {

/// Single-channel image, row-major, intensities in [0, 1].
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
};

inline double luma601(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

namespace detail {

inline std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  for (auto& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return e;
}

/// Next whitespace-delimited PNM header token, skipping '#' comments.
inline std::string pnm_token(std::istream& is) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw FormatError("PNM: unexpected end of header");
  return tok;
}

inline std::size_t pnm_number(std::istream& is, const char* what) {
  const std::string t = pnm_token(is);
  std::size_t v = 0;
  for (char c : t) {
    if (!std::isdigit(static_cast<unsigned char>(c))) throw FormatError(std::string("PNM: bad ") + what + " '" + t + "'");
    v = v * 10 + static_cast<std::size_t>(c - '0');
    if (v > (1u << 30)) throw FormatError(std::string("PNM: ") + what + " too large");
  }
  return v;
}

}  // namespace detail

inline GrayImage decode_pnm(const std::string& path) {
  auto is = io::open_in(path);
  const std::string magic = detail::pnm_token(is);
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6")
    throw FormatError(path + ": unsupported PNM magic '" + magic + "'");
  const bool color = magic == "P3" || magic == "P6";
  const bool binary = magic == "P5" || magic == "P6";
  GrayImage img;
  img.width = detail::pnm_number(is, "width");
  img.height = detail::pnm_number(is, "height");
  const std::size_t maxval = detail::pnm_number(is, "maxval");
  if (img.width == 0 || img.height == 0) throw FormatError(path + ": empty image");
  if (maxval == 0 || maxval > 65535) throw FormatError(path + ": maxval out of range");
  const std::size_t channels = color ? 3 : 1;
  const std::size_t count = img.width * img.height * channels;
  std::vector<double> raw(count);
  if (binary) {
    const std::size_t bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(count * bytes);
    io::read_exact(is, reinterpret_cast<char*>(buf.data()), buf.size(), "PNM pixel data");
    for (std::size_t i = 0; i < count; ++i)
      raw[i] = bytes == 1 ? buf[i] : static_cast<double>((buf[2 * i] << 8) | buf[2 * i + 1]);
  } else {
    for (std::size_t i = 0; i < count; ++i) raw[i] = static_cast<double>(detail::pnm_number(is, "sample"));
  }
  img.pixels.resize(img.width * img.height);
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    double v = color ? luma601(raw[3 * i], raw[3 * i + 1], raw[3 * i + 2]) : raw[i];
    img.pixels[i] = std::min(1.0, v * scale);
  }
  return img;
}

inline GrayImage decode_png(const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw FormatError(path + ": " + png.message);
  png.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw FormatError(path + ": " + msg);
  }
  GrayImage img;
  img.width = png.width;
  img.height = png.height;
  img.pixels.resize(img.width * img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] = std::min(1.0, luma601(buf[3 * i], buf[3 * i + 1], buf[3 * i + 2]) / 255.0);
  return img;
}

inline bool is_image_path(const std::filesystem::path& p) {
  const auto e = detail::lower_ext(p);
  return e == ".png" || e == ".pgm" || e == ".ppm" || e == ".pnm";
}

/// Dispatches on file extension.
inline GrayImage decode_image(const std::string& path) {
  const auto e = detail::lower_ext(path);
  if (e == ".png") return decode_png(path);
  if (e == ".pgm" || e == ".ppm" || e == ".pnm") return decode_pnm(path);
  throw FormatError(path + ": unsupported image extension '" + e + "'");
}

/// 8-bit quantization used by both writers.
inline std::vector<unsigned char> quantize8(const std::vector<double>& v) {
  std::vector<unsigned char> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double c = std::clamp(v[i], 0.0, 1.0);
    out[i] = static_cast<unsigned char>(std::lround(c * 255.0));
  }
  return out;
}

/// Binary PGM (P5), maxval 255.
inline void write_pgm(const GrayImage& img, const std::string& path) {
  auto os = io::open_out(path);
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  const auto bytes = quantize8(img.pixels);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("failed writing " + path);
}

inline void write_png(const GrayImage& img, const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_GRAY;
  const auto bytes = quantize8(img.pixels);
  if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr))
    throw Error("failed writing " + path + ": " + png.message);
}

}  // namespace dsrc
