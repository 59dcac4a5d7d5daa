#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "codetensor/csv.hpp"
#include "codetensor/errors.hpp"
#include "codetensor/gray_image.hpp"
#include "codetensor/rng.hpp"

namespace codetensor {

struct ManifestRow {
  std::string id;
  std::string path;
  std::size_t orig_len = 0;
  int label = 0;  // 0 benign, 1 malware
  std::string split = "-";
};

struct Manifest {
  std::vector<ManifestRow> rows;

  void save(const std::string& path) const {
    csv::Writer w(path, {"id", "path", "orig_len", "label", "split"});
    for (const ManifestRow& r : rows)
      w.row({r.id, r.path, std::to_string(r.orig_len),
             std::to_string(r.label), r.split});
  }

  static Manifest load(const std::string& path) {
    const csv::Table t = csv::read(path);
    if (t.header != std::vector<std::string>{"id", "path", "orig_len",
                                             "label", "split"})
      throw FormatError("unexpected manifest header in " + path);
    Manifest m;
    std::set<std::string> seen;
    for (const auto& row : t.rows) {
      ManifestRow r;
      r.id = row[0];
      r.path = row[1];
      r.orig_len = std::stoul(row[2]);
      r.label = std::stoi(row[3]);
      r.split = row[4];
      if (r.label != 0 && r.label != 1)
        throw FormatError("manifest label must be 0 or 1");
      if (!seen.insert(r.id).second)
        throw FormatError("duplicate manifest id: " + r.id);
      m.rows.push_back(std::move(r));
    }
    return m;
  }
};

namespace detail {

inline void append_band(std::vector<std::uint8_t>& bytes,
                        const std::vector<std::uint8_t>& row,
                        std::size_t rows) {
  for (std::size_t r = 0; r < rows; ++r)
    bytes.insert(bytes.end(), row.begin(), row.end());
}

/// Structured "library code" texture: two-value vertical byte stripes whose
/// 4-column means all equal 128 regardless of the variant, so every filler
/// pools to the same flat feature map.
inline std::vector<std::uint8_t> filler_row(std::size_t variant) {
  static constexpr std::uint8_t kA[3] = {112, 120, 104};
  static constexpr std::uint8_t kB[3] = {144, 136, 152};
  std::vector<std::uint8_t> row(kB2mWidth);
  for (std::size_t j = 0; j < row.size(); ++j)
    row[j] = j % 2 == 0 ? kA[variant % 3] : kB[variant % 3];
  return row;
}

/// High-contrast "payload" texture: one bright striped half and one dark
/// striped half; `swapped` mirrors the halves, and the per-file bright/dark
/// grades diversify the motif across samples.
inline std::vector<std::uint8_t> motif_row(std::uint8_t bright,
                                           std::uint8_t dark, bool swapped) {
  std::vector<std::uint8_t> row(kB2mWidth);
  for (std::size_t j = 0; j < row.size(); ++j) {
    const bool left = j < row.size() / 2;
    if (left != swapped)
      row[j] = j % 2 == 0 ? bright : static_cast<std::uint8_t>(bright - 16);
    else
      row[j] = j % 2 == 0 ? dark : static_cast<std::uint8_t>(dark + 8);
  }
  return row;
}

inline constexpr std::size_t kBandRows = 96;
inline constexpr std::size_t kSeparatorRows = 2;

}  // namespace detail

/// Deterministic synthetic corpus: benign files carry two filler bands;
/// malware files add two planted payload-motif bands. Constant separator
/// rows between bands force segment boundaries, and every band is 96 rows so
/// segmentation always yields valid (>= 64 row) segments.
inline Manifest synth_corpus(std::size_t n_benign, std::size_t n_malware,
                             std::uint64_t seed, const std::string& out_dir) {
  if (n_benign < 1 || n_malware < 1)
    throw ConfigError("corpus needs at least one sample per class");
  Rng rng(seed);
  Manifest manifest;
  const std::vector<std::uint8_t> sep(kB2mWidth, 0);

  auto emit = [&](const std::string& id, int label,
                  const std::vector<std::vector<std::uint8_t>>& band_rows) {
    std::vector<std::uint8_t> bytes;
    for (std::size_t b = 0; b < band_rows.size(); ++b) {
      if (b) detail::append_band(bytes, sep, detail::kSeparatorRows);
      detail::append_band(bytes, band_rows[b], detail::kBandRows);
    }
    const std::string path = out_dir + "/" + id + ".bin";
    write_file_bytes(path, bytes);
    manifest.rows.push_back({id, path, bytes.size(), label, "-"});
  };

  auto pad3 = [](std::size_t i) {
    std::string s = std::to_string(i);
    return std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
  };

  for (std::size_t i = 0; i < n_benign; ++i) {
    emit("benign_" + pad3(i), 0,
         {detail::filler_row(i % 3), detail::filler_row((i + 1) % 3)});
  }
  for (std::size_t i = 0; i < n_malware; ++i) {
    const auto bright = static_cast<std::uint8_t>(216 + (i % 5) * 8);
    const auto dark = static_cast<std::uint8_t>(48 + (i % 7) * 4);
    std::vector<std::vector<std::uint8_t>> bands{
        detail::filler_row(i % 3), detail::motif_row(bright, dark, false),
        detail::motif_row(bright, dark, true)};
    Rng order = rng.fork(i + 1);  // seeded payload placement within the file
    order.shuffle(bands);
    emit("malware_" + pad3(i), 1, bands);
  }
  return manifest;
}

/// Stratified split assignment. shared: 80% "train" / 20% "test";
/// disjoint: 40% "gan" / 40% "detector" / 20% "test".
inline Manifest split(const Manifest& manifest, const std::string& mode,
                      std::uint64_t seed) {
  if (mode != "shared" && mode != "disjoint")
    throw ConfigError("split mode must be 'shared' or 'disjoint'");
  Manifest out = manifest;
  Rng rng(seed);
  for (int label = 0; label < 2; ++label) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < out.rows.size(); ++i)
      if (out.rows[i].label == label) idx.push_back(i);
    Rng lr = rng.fork(static_cast<std::uint64_t>(label) + 1);
    lr.shuffle(idx);
    const std::size_t n = idx.size();
    const std::size_t n_test = n / 5;
    if (n_test < 1) throw SplitError("too few samples for a test partition");
    std::size_t at = 0;
    for (; at < n_test; ++at) out.rows[idx[at]].split = "test";
    if (mode == "shared") {
      if (at >= n) throw SplitError("too few samples for a train partition");
      for (; at < n; ++at) out.rows[idx[at]].split = "train";
    } else {
      const std::size_t n_gan = 2 * n / 5;
      if (n_gan < 1 || n_test + n_gan >= n)
        throw SplitError("too few samples for disjoint partitions");
      for (; at < n_test + n_gan; ++at) out.rows[idx[at]].split = "gan";
      for (; at < n; ++at) out.rows[idx[at]].split = "detector";
    }
  }
  return out;
}

}  // namespace codetensor
