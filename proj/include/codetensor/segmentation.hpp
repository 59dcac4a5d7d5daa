#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "codetensor/errors.hpp"
#include "codetensor/glcm.hpp"
#include "codetensor/gray_image.hpp"
#include "codetensor/hash.hpp"

namespace codetensor {

/// Contiguous row-band of a source image together with its texture features.
struct TextureSegment {
  std::string source;      // identifier of the originating sample
  std::string source_sha;  // sha-256 hex of the source image pixels
  std::size_t row_start = 0;
  std::size_t row_end = 0;  // exclusive; both bounds even (2-row cells)
  GrayImage pixels;         // copy of the band
  GlcmFeatures features;    // GLCM features of the whole band
  bool disposed = false;

  std::size_t height() const { return row_end - row_start; }
};

struct CutParams {
  std::size_t levels = 16;
  int dx = 1;
  int dy = 0;
  double threshold = 0.05;
  double epsilon = 0.0;  // tolerance for the constant-cell (degraded) test
};

namespace detail {

inline GrayImage extract_band(const GrayImage& img, std::size_t row_start,
                              std::size_t row_end) {
  GrayImage band;
  band.width = img.width;
  band.height = row_end - row_start;
  band.pixels.assign(img.pixels.begin() + row_start * img.width,
                     img.pixels.begin() + row_end * img.width);
  return band;
}

inline bool cell_constant(const GrayImage& cell, double epsilon) {
  auto [lo, hi] = std::minmax_element(cell.pixels.begin(), cell.pixels.end());
  return static_cast<double>(*hi) - static_cast<double>(*lo) <= epsilon;
}

}  // namespace detail

/// Self-growing texture cut. Scans 2-row cells top-to-bottom: a constant
/// cell (degraded criterion) is deleted and closes the growing segment; a
/// cell whose features lie within `threshold` of the previous cell's is
/// concatenated; otherwise the current segment is closed and a new one
/// starts. The trailing odd row of an odd-height image is ignored.
inline std::vector<TextureSegment> cut_image(const GrayImage& img,
                                             const CutParams& params = {},
                                             const std::string& source = "") {
  if (img.height < 2) throw ImageTooSmall("image height must be at least 2");
  const std::string sha = sha256_hex(img.pixels);

  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  std::optional<std::pair<std::size_t, std::size_t>> current;
  GlcmFeatures prev;
  auto close = [&] {
    if (current) {
      ranges.push_back(*current);
      current.reset();
    }
  };
  for (std::size_t r = 0; r + 2 <= img.height; r += 2) {
    const GrayImage cell = detail::extract_band(img, r, r + 2);
    if (detail::cell_constant(cell, params.epsilon)) {
      close();
      continue;
    }
    const GlcmFeatures f =
        glcm_features(glcm(cell, params.levels, params.dx, params.dy));
    if (!current) {
      current = {r, r + 2};
    } else if (feature_distance(prev, f) < params.threshold) {
      current->second = r + 2;
    } else {
      close();
      current = {r, r + 2};
    }
    prev = f;
  }
  close();

  std::vector<TextureSegment> segs;
  segs.reserve(ranges.size());
  for (const auto& [start, end] : ranges) {
    TextureSegment s;
    s.source = source;
    s.source_sha = sha;
    s.row_start = start;
    s.row_end = end;
    s.pixels = detail::extract_band(img, start, end);
    s.features =
        glcm_features(glcm(s.pixels, params.levels, params.dx, params.dy));
    segs.push_back(std::move(s));
  }
  return segs;
}

/// Drops segments shorter than 64 rows; order preserved.
inline std::vector<TextureSegment> filter_valid(
    std::vector<TextureSegment> segs, std::size_t min_rows = 64) {
  std::erase_if(segs,
                [min_rows](const TextureSegment& s) { return s.height() < min_rows; });
  return segs;
}

/// Canonical on-disk basename for a segment: `<sha-prefix>_<start>_<end>`.
inline std::string segment_basename(const TextureSegment& s) {
  return s.source_sha.substr(0, 12) + "_" + std::to_string(s.row_start) +
         "_" + std::to_string(s.row_end);
}

}  // namespace codetensor
