#pragma once

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "codetensor/compress.hpp"
#include "codetensor/detectors.hpp"
#include "codetensor/errors.hpp"
#include "codetensor/gan.hpp"
#include "codetensor/lsh.hpp"

namespace codetensor {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const std::uint64_t x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("bad unsigned integer for " + key + ": '" + v + "'");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + key + ": '" + v + "'");
  }
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> parts;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

}  // namespace detail

/// All pipeline knobs in one place. Every key has a default; `set` rejects
/// unknown keys so config typos fail fast instead of being silently ignored.
struct PipelineConfig {
  // corpus + split
  std::size_t corpus_benign = 100;
  std::size_t corpus_malware = 100;
  std::uint64_t corpus_seed = 1;
  std::string split_mode = "shared";  // shared | disjoint
  std::uint64_t split_seed = 1;

  // texture cut
  std::size_t glcm_levels = 16;
  long glcm_dx = 1;
  long glcm_dy = 0;
  double cut_threshold = 0.05;
  double cut_epsilon = 0.0;

  // lsh + selection
  LshParams lsh{};
  std::size_t select_cap = 8;

  // tensor compression
  std::size_t tsvd_rank = 64;

  // detectors (first kind is the black-bone used for GAN training)
  std::vector<DetectorKind> detector_kinds{DetectorKind::kDT};
  DetectorHyper detector{};
  std::uint64_t detector_seed = 1;

  // gan (gan.seed holds the first entry of gan_seeds)
  GanConfig gan{};
  std::vector<std::uint64_t> gan_seeds{1};

  // paths
  std::string out_dir = "out";

  void set(const std::string& raw_key, const std::string& raw_value) {
    const std::string key = detail::trim(raw_key);
    const std::string v = detail::trim(raw_value);
    using detail::parse_double;
    using detail::parse_u64;
    if (key == "corpus.benign") {
      corpus_benign = parse_u64(key, v);
    } else if (key == "corpus.malware") {
      corpus_malware = parse_u64(key, v);
    } else if (key == "corpus.seed") {
      corpus_seed = parse_u64(key, v);
    } else if (key == "split.mode") {
      if (v != "shared" && v != "disjoint")
        throw ConfigError("split.mode must be shared or disjoint, got " + v);
      split_mode = v;
    } else if (key == "split.seed") {
      split_seed = parse_u64(key, v);
    } else if (key == "glcm.levels") {
      glcm_levels = parse_u64(key, v);
    } else if (key == "glcm.dx") {
      glcm_dx = static_cast<long>(parse_double(key, v));
    } else if (key == "glcm.dy") {
      glcm_dy = static_cast<long>(parse_double(key, v));
    } else if (key == "cut.threshold") {
      cut_threshold = parse_double(key, v);
    } else if (key == "cut.epsilon") {
      cut_epsilon = parse_double(key, v);
    } else if (key == "lsh.k") {
      lsh.k = parse_u64(key, v);
    } else if (key == "lsh.l") {
      lsh.l = parse_u64(key, v);
    } else if (key == "lsh.r") {
      lsh.r = parse_double(key, v);
    } else if (key == "lsh.seed") {
      lsh.seed = parse_u64(key, v);
    } else if (key == "lsh.metric") {
      if (v == "euclidean")
        lsh.metric = LshMetric::kEuclidean;
      else if (v == "hamming")
        lsh.metric = LshMetric::kHamming;
      else
        throw ConfigError("lsh.metric must be euclidean or hamming, got " + v);
    } else if (key == "select.cap") {
      select_cap = parse_u64(key, v);
    } else if (key == "tsvd.rank") {
      tsvd_rank = parse_u64(key, v);
    } else if (key == "detector.kind") {
      detector_kinds.clear();
      for (const std::string& name : detail::split_list(v))
        detector_kinds.push_back(detector_kind_from(name));
      if (detector_kinds.empty())
        throw ConfigError("detector.kind needs at least one name");
    } else if (key == "detector.pool") {
      detector.pool = parse_u64(key, v);
    } else if (key == "detector.lr") {
      detector.lr = parse_double(key, v);
    } else if (key == "detector.epochs") {
      detector.epochs = parse_u64(key, v);
    } else if (key == "detector.max_depth") {
      detector.max_depth = parse_u64(key, v);
    } else if (key == "detector.hidden") {
      detector.hidden = parse_u64(key, v);
    } else if (key == "detector.seed") {
      detector_seed = parse_u64(key, v);
    } else if (key == "gan.epochs") {
      gan.epochs = parse_u64(key, v);
    } else if (key == "gan.m") {
      gan.m = parse_u64(key, v);
    } else if (key == "gan.lr_d") {
      gan.lr_d = parse_double(key, v);
    } else if (key == "gan.lr_g") {
      gan.lr_g = parse_double(key, v);
    } else if (key == "gan.lambda") {
      gan.lambda = parse_double(key, v);
    } else if (key == "gan.j") {
      gan.j = parse_u64(key, v);
    } else if (key == "gan.jitter") {
      gan.jitter = parse_double(key, v);
    } else if (key == "gan.profile") {
      if (v == "paper")
        gan.profile.profile = nn::NetProfile::kPaper;
      else if (v == "desk")
        gan.profile.profile = nn::NetProfile::kDesk;
      else
        throw ConfigError("gan.profile must be paper or desk, got " + v);
    } else if (key == "gan.factor") {
      gan.profile.factor = parse_u64(key, v);
      if (gan.profile.factor < 1)
        throw ConfigError("gan.factor must be >= 1");
    } else if (key == "gan.checkpoint_every") {
      gan.checkpoint_every = parse_u64(key, v);
    } else if (key == "gan.seeds") {
      gan_seeds.clear();
      for (const std::string& s : detail::split_list(v))
        gan_seeds.push_back(parse_u64(key, s));
      if (gan_seeds.empty())
        throw ConfigError("gan.seeds needs at least one seed");
      gan.seed = gan_seeds.front();
    } else if (key == "paths.out") {
      out_dir = v;
    } else {
      throw ConfigError("unknown config key: " + key);
    }
  }

  /// key=value INI with '#'/';' comment lines and blank lines.
  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string t = detail::trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(line_no) +
                          ": expected key=value");
      set(t.substr(0, eq), t.substr(eq + 1));
    }
  }

  /// CODETENSOR_SEED overrides every seed in the run.
  void apply_env() {
    if (const char* env = std::getenv("CODETENSOR_SEED")) {
      const std::uint64_t s = detail::parse_u64("CODETENSOR_SEED", env);
      corpus_seed = s;
      split_seed = s;
      lsh.seed = s;
      detector_seed = s;
      gan.seed = s;
      gan_seeds = {s};
    }
  }

  void validate() const {
    lsh.validate();
    gan.validate();
    if (glcm_levels < 2 || glcm_levels > 256)
      throw ConfigError("glcm.levels must be in [2, 256]");
    if (cut_threshold <= 0) throw ConfigError("cut.threshold must be > 0");
    if (cut_epsilon < 0) throw ConfigError("cut.epsilon must be >= 0");
    if (select_cap < 1) throw ConfigError("select.cap must be >= 1");
    if (tsvd_rank < 1) throw ConfigError("tsvd.rank must be >= 1");
    if (detector.pool < 1 || kFeatureSide % detector.pool != 0)
      throw ConfigError("detector.pool must divide 64");
  }
};

}  // namespace codetensor
