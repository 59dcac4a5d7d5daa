#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "codetensor/errors.hpp"

namespace codetensor {

/// 8-bit grayscale image, row-major.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // height * width bytes

  std::uint8_t at(std::size_t row, std::size_t col) const {
    return pixels[row * width + col];
  }
  std::uint8_t& at(std::size_t row, std::size_t col) {
    return pixels[row * width + col];
  }
};

inline constexpr std::size_t kB2mWidth = 256;

/// Binary-to-matrix encoding: each byte becomes one pixel in a fixed-width
/// raster, scanning left-to-right, top-to-bottom. The final partial row is
/// padded with zeros.
inline GrayImage b2m_encode(const std::vector<std::uint8_t>& bytes,
                            std::size_t width = kB2mWidth) {
  if (bytes.empty()) throw EmptyBinary("cannot encode an empty binary");
  GrayImage img;
  img.width = width;
  img.height = (bytes.size() + width - 1) / width;
  img.pixels.assign(img.height * width, 0);
  std::copy(bytes.begin(), bytes.end(), img.pixels.begin());
  return img;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open file: " + path);
  std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(is), {});
  return bytes;
}

inline void write_file_bytes(const std::string& path,
                             const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open file for writing: " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
}

/// Writes a binary (P5) PGM with maxval 255.
inline void write_pgm(const GrayImage& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open PGM for writing: " + path);
  os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
}

namespace detail {

/// Reads the next whitespace-delimited PGM header token, skipping
/// '#' comment lines.
inline std::string pgm_token(std::istream& is) {
  std::string tok;
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (std::isspace(c)) {
      c = is.get();
    } else {
      break;
    }
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = is.get();
  }
  return tok;
}

}  // namespace detail

/// Reads a binary (P5) PGM. Only maxval 255 is supported.
inline GrayImage read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open PGM: " + path);
  if (detail::pgm_token(is) != "P5")
    throw FormatError("not a P5 PGM: " + path);
  GrayImage img;
  try {
    img.width = std::stoul(detail::pgm_token(is));
    img.height = std::stoul(detail::pgm_token(is));
    const unsigned long maxval = std::stoul(detail::pgm_token(is));
    if (maxval != 255)
      throw FormatError("unsupported PGM maxval in " + path);
  } catch (const std::logic_error&) {
    throw FormatError("malformed PGM header: " + path);
  }
  if (img.width == 0 || img.height == 0)
    throw FormatError("degenerate PGM dimensions: " + path);
  img.pixels.resize(img.width * img.height);
  is.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (static_cast<std::size_t>(is.gcount()) != img.pixels.size())
    throw FormatError("truncated PGM payload: " + path);
  return img;
}

}  // namespace codetensor
