#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "codetensor/errors.hpp"

namespace codetensor::binio {

// Little-endian primitives for the binary container formats (CTEN, CLSH,
// CMDL). The build targets little-endian hosts; the static_assert keeps a
// byte-order bug from silently shipping.
static_assert(std::endian::native == std::endian::little,
              "binary containers are defined little-endian");

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void put(std::ostream& os, T v) {
  put_bytes(os, &v, sizeof(T));
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  put_bytes(os, s.data(), s.size());
}

inline void put_f64s(std::ostream& os, const std::vector<double>& v) {
  put_bytes(os, v.data(), v.size() * sizeof(double));
}

inline void get_bytes(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw FormatError("truncated binary payload");
}

template <typename T>
T get(std::istream& is) {
  T v;
  get_bytes(is, &v, sizeof(T));
  return v;
}

inline std::string get_string(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  std::string s(n, '\0');
  get_bytes(is, s.data(), n);
  return s;
}

inline std::vector<double> get_f64s(std::istream& is, std::size_t n) {
  std::vector<double> v(n);
  get_bytes(is, v.data(), n * sizeof(double));
  return v;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  return is;
}

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
  char buf[4];
  get_bytes(is, buf, 4);
  if (std::memcmp(buf, magic, 4) != 0)
    throw FormatError(std::string("bad magic, expected ") + magic);
}

}  // namespace codetensor::binio
