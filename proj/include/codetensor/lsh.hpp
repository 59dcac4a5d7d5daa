#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "codetensor/binio.hpp"
#include "codetensor/errors.hpp"
#include "codetensor/rng.hpp"
#include "codetensor/segmentation.hpp"

namespace codetensor {

using FeatureVec = std::vector<double>;

enum class LshMetric : std::uint8_t { kEuclidean = 0, kHamming = 1 };

struct LshParams {
  std::size_t k = 8;   // hash bits per table
  std::size_t l = 4;   // table count
  double r = 0.5;      // candidate acceptance distance
  std::uint64_t seed = 1;
  std::size_t dim = 64;
  LshMetric metric = LshMetric::kEuclidean;

  void validate() const {
    if (k < 1 || k > 64) throw ConfigError("lsh.k must be in [1,64]");
    if (l < 1) throw ConfigError("lsh.l must be >= 1");
    if (!(r > 0)) throw ConfigError("lsh.r must be > 0");
    if (dim < 1) throw ConfigError("lsh.dim must be >= 1");
  }
};

/// 64-dim descriptor of a segment: mean intensity over an 8x8 grid of equal
/// tiles (row-major), scaled to [0,1].
inline FeatureVec get_vec(const TextureSegment& seg) {
  constexpr std::size_t kGrid = 8;
  const GrayImage& img = seg.pixels;
  if (img.height < 64 || img.width != 256)
    throw DegenerateBand("segment too small for get_vec (need >=64x256)");
  FeatureVec v(kGrid * kGrid, 0.0);
  for (std::size_t tr = 0; tr < kGrid; ++tr) {
    const std::size_t r0 = tr * img.height / kGrid;
    const std::size_t r1 = (tr + 1) * img.height / kGrid;
    for (std::size_t tc = 0; tc < kGrid; ++tc) {
      const std::size_t c0 = tc * img.width / kGrid;
      const std::size_t c1 = (tc + 1) * img.width / kGrid;
      double sum = 0.0;
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) sum += img.at(r, c);
      v[tr * kGrid + tc] =
          sum / (255.0 * static_cast<double>((r1 - r0) * (c1 - c0)));
    }
  }
  return v;
}

inline double euclidean(const FeatureVec& a, const FeatureVec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

/// Random-hyperplane sign-hash index with l tables of k bits each.
class LshIndex {
 public:
  using Bucket = std::vector<std::uint32_t>;
  using Table = std::map<std::uint64_t, Bucket>;

  static LshIndex build(const std::vector<FeatureVec>& vectors,
                        const LshParams& params) {
    params.validate();
    LshIndex idx;
    idx.params_ = params;
    Rng rng(params.seed);
    idx.hyperplanes_.resize(params.l * params.k);
    for (auto& h : idx.hyperplanes_) {
      h.resize(params.dim);
      double norm2 = 0.0;
      for (double& x : h) {
        x = rng.gaussian();
        norm2 += x * x;
      }
      const double norm = std::sqrt(norm2);
      for (double& x : h) x /= norm;
    }
    idx.tables_.resize(params.l);
    idx.vectors_.reserve(vectors.size());
    for (const auto& v : vectors) idx.insert(v);
    return idx;
  }

  std::uint32_t insert(const FeatureVec& v) {
    if (v.size() != params_.dim)
      throw DimError("vector dimension does not match index");
    const auto id = static_cast<std::uint32_t>(vectors_.size());
    vectors_.push_back(v);
    for (std::size_t t = 0; t < params_.l; ++t)
      tables_[t][signature(t, v)].push_back(id);
    return id;
  }

  /// k-bit signature in table t: bit j set iff dot(hyperplane_{t,j}, v) >= 0.
  std::uint64_t signature(std::size_t t, const FeatureVec& v) const {
    std::uint64_t sig = 0;
    for (std::size_t j = 0; j < params_.k; ++j) {
      const FeatureVec& h = hyperplanes_[t * params_.k + j];
      double dot = 0.0;
      for (std::size_t d = 0; d < params_.dim; ++d) dot += h[d] * v[d];
      if (dot >= 0.0) sig |= std::uint64_t{1} << j;
    }
    return sig;
  }

  /// Union of q's buckets over all tables, filtered to distance <= r and
  /// sorted by (distance, id).
  std::vector<std::uint32_t> search(const FeatureVec& q) const {
    if (q.size() != params_.dim)
      throw DimError("query dimension does not match index");
    std::vector<std::uint32_t> cand;
    for (std::size_t t = 0; t < params_.l; ++t) {
      auto it = tables_[t].find(signature(t, q));
      if (it != tables_[t].end())
        cand.insert(cand.end(), it->second.begin(), it->second.end());
    }
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
    std::vector<std::pair<double, std::uint32_t>> scored;
    for (std::uint32_t id : cand) {
      const double d = distance(q, vectors_[id]);
      if (d <= params_.r) scored.emplace_back(d, id);
    }
    std::sort(scored.begin(), scored.end());
    std::vector<std::uint32_t> out;
    out.reserve(scored.size());
    for (const auto& [d, id] : scored) out.push_back(id);
    return out;
  }

  /// Mean size of the buckets holding `id`, across all tables — a corpus-wide
  /// commonness score (identical vectors always share buckets).
  double bucket_frequency(std::uint32_t id) const {
    double total = 0.0;
    for (std::size_t t = 0; t < params_.l; ++t) {
      auto it = tables_[t].find(signature(t, vectors_[id]));
      total += static_cast<double>(it->second.size());
    }
    return total / static_cast<double>(params_.l);
  }

  double distance(const FeatureVec& a, const FeatureVec& b) const {
    if (params_.metric == LshMetric::kEuclidean) return euclidean(a, b);
    double bits = 0.0;
    for (std::size_t t = 0; t < params_.l; ++t)
      bits += static_cast<double>(
          std::popcount(signature(t, a) ^ signature(t, b)));
    return bits;
  }

  const LshParams& params() const { return params_; }
  std::size_t size() const { return vectors_.size(); }
  const FeatureVec& vec(std::uint32_t id) const { return vectors_[id]; }
  const std::vector<Table>& tables() const { return tables_; }

  void save(const std::string& path) const {
    auto os = binio::open_out(path);
    os.write("CLSH", 4);
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(params_.k));
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(params_.l));
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(params_.dim));
    binio::put<std::uint8_t>(os, static_cast<std::uint8_t>(params_.metric));
    binio::put<double>(os, params_.r);
    binio::put<std::uint64_t>(os, params_.seed);
    for (const auto& h : hyperplanes_) binio::put_f64s(os, h);
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(vectors_.size()));
    for (const auto& v : vectors_) binio::put_f64s(os, v);
    for (const auto& table : tables_) {
      binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(table.size()));
      for (const auto& [sig, bucket] : table) {
        binio::put<std::uint64_t>(os, sig);
        binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(bucket.size()));
        for (std::uint32_t id : bucket) binio::put<std::uint32_t>(os, id);
      }
    }
  }

  static LshIndex load(const std::string& path) {
    auto is = binio::open_in(path);
    binio::expect_magic(is, "CLSH");
    LshIndex idx;
    idx.params_.k = binio::get<std::uint32_t>(is);
    idx.params_.l = binio::get<std::uint32_t>(is);
    idx.params_.dim = binio::get<std::uint32_t>(is);
    idx.params_.metric = static_cast<LshMetric>(binio::get<std::uint8_t>(is));
    idx.params_.r = binio::get<double>(is);
    idx.params_.seed = binio::get<std::uint64_t>(is);
    idx.params_.validate();
    idx.hyperplanes_.resize(idx.params_.l * idx.params_.k);
    for (auto& h : idx.hyperplanes_) h = binio::get_f64s(is, idx.params_.dim);
    const auto n = binio::get<std::uint32_t>(is);
    idx.vectors_.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i)
      idx.vectors_.push_back(binio::get_f64s(is, idx.params_.dim));
    idx.tables_.resize(idx.params_.l);
    for (auto& table : idx.tables_) {
      const auto buckets = binio::get<std::uint32_t>(is);
      for (std::uint32_t b = 0; b < buckets; ++b) {
        const auto sig = binio::get<std::uint64_t>(is);
        const auto count = binio::get<std::uint32_t>(is);
        Bucket bucket(count);
        for (auto& id : bucket) id = binio::get<std::uint32_t>(is);
        table[sig] = std::move(bucket);
      }
    }
    if (!is) throw FormatError("truncated index file: " + path);
    return idx;
  }

 private:
  LshParams params_;
  std::vector<FeatureVec> hyperplanes_;  // l*k unit vectors
  std::vector<Table> tables_;
  std::vector<FeatureVec> vectors_;
};

struct SelectionItem {
  std::uint32_t id = 0;           // index id of the chosen segment
  double bucket_frequency = 0.0;  // corpus-wide commonness at selection time
};

/// Significant-segment selection for one sample: rank the sample's segments
/// by ascending corpus-wide bucket frequency (rarest first, stable on ties),
/// collapse near-duplicates within the sample (search hit at distance <= r),
/// and keep at most `cap`.
inline std::vector<SelectionItem> select_significant(
    const LshIndex& index, const std::vector<std::uint32_t>& sample_ids,
    std::size_t cap) {
  std::vector<SelectionItem> ranked;
  ranked.reserve(sample_ids.size());
  for (std::uint32_t id : sample_ids)
    ranked.push_back({id, index.bucket_frequency(id)});
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const SelectionItem& a, const SelectionItem& b) {
                     return a.bucket_frequency < b.bucket_frequency;
                   });
  std::vector<SelectionItem> out;
  for (const auto& item : ranked) {
    if (out.size() >= cap) break;
    const auto hits = index.search(index.vec(item.id));
    const bool duplicate =
        std::any_of(out.begin(), out.end(), [&](const SelectionItem& kept) {
          return std::find(hits.begin(), hits.end(), kept.id) != hits.end();
        });
    if (!duplicate) out.push_back(item);
  }
  return out;
}

}  // namespace codetensor
