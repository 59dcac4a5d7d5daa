#pragma once

#include <algorithm>
#include <vector>

#include "codetensor/errors.hpp"
#include "codetensor/segmentation.hpp"
#include "codetensor/tensor.hpp"

namespace codetensor {

inline constexpr std::size_t kFeatureSide = 64;

/// Pools one valid segment (height >= 64, width 256) down to a 64x64 matrix
/// in [0,1]: columns by 4x mean, rows by mean over 64 equal bands.
inline RowMatXd pool_segment(const TextureSegment& seg) {
  const GrayImage& img = seg.pixels;
  if (img.height < kFeatureSide || img.width != 256)
    throw DegenerateBand("segment too small to pool (need >=64x256)");
  RowMatXd out(kFeatureSide, kFeatureSide);
  for (std::size_t i = 0; i < kFeatureSide; ++i) {
    const std::size_t r0 = i * img.height / kFeatureSide;
    const std::size_t r1 = (i + 1) * img.height / kFeatureSide;
    for (std::size_t j = 0; j < kFeatureSide; ++j) {
      const std::size_t c0 = j * 4, c1 = c0 + 4;
      double sum = 0.0;
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) sum += img.at(r, c);
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          sum / (255.0 * static_cast<double>((r1 - r0) * (c1 - c0)));
    }
  }
  return out;
}

/// Stacks pooled segments into a 64x64xn tensor (frontal slice per segment).
inline Tensor3 stack_segments(const std::vector<TextureSegment>& segs) {
  if (segs.empty()) throw NoSegments("cannot stack an empty segment list");
  Tensor3 t(kFeatureSide, kFeatureSide, segs.size());
  for (std::size_t k = 0; k < segs.size(); ++k)
    t.slice(k) = pool_segment(segs[k]);
  return t;
}

/// Compresses one sample's segments into 64x64 feature matrices: pool, stack
/// into 64x64xn, best tubal-rank-r approximation, then emit each frontal
/// slice clamped back to [0,1].
inline std::vector<RowMatXd> compress_sample(
    const std::vector<TextureSegment>& segs, std::size_t r) {
  const Tensor3 stacked = stack_segments(segs);
  const Tensor3 approx =
      rank_r_approx(stacked, std::min<std::size_t>(kFeatureSide, r));
  std::vector<RowMatXd> out(segs.size());
  for (std::size_t k = 0; k < segs.size(); ++k) {
    out[k] = approx.slice(k);
    out[k] = out[k].cwiseMax(0.0).cwiseMin(1.0);
  }
  return out;
}

}  // namespace codetensor
