#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "codetensor/errors.hpp"

namespace codetensor::csv {

/// Stable formatting for doubles written into CSV artifacts; %.12g keeps
/// re-runs byte-identical while staying human-readable.
inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline std::string join(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ',';
    line += fields[i];
  }
  return line;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Plain comma-splitting reader; the project's CSV artifacts never contain
/// quoted or embedded-comma fields.
inline Table read(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open CSV: " + path);
  Table t;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (line.back() == ',') fields.push_back("");
    if (first) {
      t.header = fields;
      first = false;
    } else {
      if (fields.size() != t.header.size())
        throw FormatError("CSV row width mismatch in " + path);
      t.rows.push_back(fields);
    }
  }
  if (first) throw FormatError("empty CSV: " + path);
  return t;
}

class Writer {
 public:
  Writer(const std::string& path, const std::vector<std::string>& header)
      : os_(path) {
    if (!os_) throw IoError("cannot open CSV for writing: " + path);
    os_ << join(header) << '\n';
    width_ = header.size();
  }

  void row(const std::vector<std::string>& fields) {
    if (fields.size() != width_) throw FormatError("CSV row width mismatch");
    os_ << join(fields) << '\n';
  }

 private:
  std::ofstream os_;
  std::size_t width_ = 0;
};

}  // namespace codetensor::csv
