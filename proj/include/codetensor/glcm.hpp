#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "codetensor/errors.hpp"
#include "codetensor/gray_image.hpp"

namespace codetensor {

/// Symmetric, normalized gray-level co-occurrence matrix.
struct GlcmMatrix {
  std::size_t levels = 0;
  std::vector<double> entries;  // levels * levels, sums to 1

  double at(std::size_t i, std::size_t j) const {
    return entries[i * levels + j];
  }
};

/// Haralick texture features, each normalized into [0,1].
struct GlcmFeatures {
  double entropy = 0.0;
  double contrast = 0.0;
  double homogeneity = 0.0;
  double asm_ = 0.0;  // angular second moment ("asm" is a reserved word)
};

/// Builds the symmetric GLCM of a pixel band at the given offset.
/// Pixels quantize to bin floor(p * levels / 256).
inline GlcmMatrix glcm(const GrayImage& band, std::size_t levels, int dx,
                       int dy) {
  if (levels < 2 || levels > 256)
    throw ConfigError("glcm levels must be in [2,256]");
  GlcmMatrix m;
  m.levels = levels;
  m.entries.assign(levels * levels, 0.0);
  double total = 0.0;
  const auto rows = static_cast<long>(band.height);
  const auto cols = static_cast<long>(band.width);
  for (long r = 0; r < rows; ++r) {
    const long r2 = r + dy;
    if (r2 < 0 || r2 >= rows) continue;
    for (long c = 0; c < cols; ++c) {
      const long c2 = c + dx;
      if (c2 < 0 || c2 >= cols) continue;
      const std::size_t a = band.at(r, c) * levels / 256;
      const std::size_t b = band.at(r2, c2) * levels / 256;
      m.entries[a * levels + b] += 1.0;
      m.entries[b * levels + a] += 1.0;
      total += 2.0;
    }
  }
  if (total == 0.0)
    throw DegenerateBand("band too small for GLCM offset");
  for (double& e : m.entries) e /= total;
  return m;
}

/// Haralick features of a GLCM, normalized so all four lie in [0,1]:
/// entropy by log(L^2), contrast by (L-1)^2; homogeneity and ASM are
/// already bounded.
inline GlcmFeatures glcm_features(const GlcmMatrix& m) {
  GlcmFeatures f;
  const auto L = m.levels;
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j < L; ++j) {
      const double p = m.at(i, j);
      if (p <= 0.0) continue;
      const double d = static_cast<double>(i) - static_cast<double>(j);
      f.entropy -= p * std::log(p);
      f.contrast += p * d * d;
      f.homogeneity += p / (1.0 + d * d);
      f.asm_ += p * p;
    }
  }
  f.entropy /= std::log(static_cast<double>(L) * static_cast<double>(L));
  f.contrast /= static_cast<double>(L - 1) * static_cast<double>(L - 1);
  return f;
}

/// Euclidean distance in the normalized 4-feature space.
inline double feature_distance(const GlcmFeatures& a, const GlcmFeatures& b) {
  const double de = a.entropy - b.entropy;
  const double dc = a.contrast - b.contrast;
  const double dh = a.homogeneity - b.homogeneity;
  const double da = a.asm_ - b.asm_;
  return std::sqrt(de * de + dc * dc + dh * dh + da * da);
}

}  // namespace codetensor
