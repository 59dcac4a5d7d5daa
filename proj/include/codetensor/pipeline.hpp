#pragma once

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "codetensor/compress.hpp"
#include "codetensor/config.hpp"
#include "codetensor/corpus.hpp"
#include "codetensor/csv.hpp"
#include "codetensor/detectors.hpp"
#include "codetensor/gan.hpp"
#include "codetensor/gray_image.hpp"
#include "codetensor/hash.hpp"
#include "codetensor/lsh.hpp"
#include "codetensor/segmentation.hpp"
#include "codetensor/tensor.hpp"

namespace codetensor {

/// Artifact layout under cfg.out_dir. Every stage reads only files written by
/// earlier stages, so any stage can be re-run from disk.
namespace paths {

namespace fs = std::filesystem;

inline std::string bin_dir(const PipelineConfig& c) {
  return (fs::path(c.out_dir) / "bin").string();
}
inline std::string manifest(const PipelineConfig& c) {
  return (fs::path(c.out_dir) / "manifest.csv").string();
}
inline std::string image(const PipelineConfig& c, const std::string& id) {
  return (fs::path(c.out_dir) / "images" / (id + ".pgm")).string();
}
inline std::string segment_dir(const PipelineConfig& c) {
  return (fs::path(c.out_dir) / "segments").string();
}
inline std::string segments_csv(const PipelineConfig& c) {
  return (fs::path(c.out_dir) / "segments.csv").string();
}
inline std::string index(const PipelineConfig& c) {
  return (fs::path(c.out_dir) / "index.clsh").string();
}
inline std::string selection_csv(const PipelineConfig& c) {
  return (fs::path(c.out_dir) / "selection.csv").string();
}
inline std::string feature_dir(const PipelineConfig& c) {
  return (fs::path(c.out_dir) / "features").string();
}
inline std::string features_csv(const PipelineConfig& c) {
  return (fs::path(c.out_dir) / "features.csv").string();
}
inline std::string model_dir(const PipelineConfig& c) {
  return (fs::path(c.out_dir) / "models").string();
}
inline std::string detector_model(const PipelineConfig& c, DetectorKind k) {
  return (fs::path(model_dir(c)) / ("detector_" + detector_kind_name(k) + ".cmdl"))
      .string();
}
inline std::string gan_model(const PipelineConfig& c) {
  return (fs::path(model_dir(c)) / "gan.cmdl").string();
}
inline std::string gan_checkpoint(const PipelineConfig& c, std::size_t epoch) {
  std::ostringstream name;
  name << "gan_epoch" << std::setw(4) << std::setfill('0') << epoch << ".cmdl";
  return (fs::path(model_dir(c)) / name.str()).string();
}
inline std::string history_csv(const PipelineConfig& c) {
  return (fs::path(c.out_dir) / "history.csv").string();
}
inline std::string report_csv(const PipelineConfig& c) {
  return (fs::path(c.out_dir) / "report.csv").string();
}
inline std::string plot_csv(const PipelineConfig& c) {
  return (fs::path(c.out_dir) / "plots" / "fig2.csv").string();
}

}  // namespace paths

namespace detail {

/// Split-pool naming: the shared mode trains detector and GANs on one pool.
inline std::string detector_pool_name(const PipelineConfig& c) {
  return c.split_mode == "shared" ? "train" : "detector";
}
inline std::string gan_pool_name(const PipelineConfig& c) {
  return c.split_mode == "shared" ? "train" : "gan";
}

struct PipelineFeature {
  FeatureSample sample;
  std::string split;
};

inline std::vector<PipelineFeature> load_features(const PipelineConfig& cfg) {
  const csv::Table t = csv::read(paths::features_csv(cfg));
  if (t.header !=
      std::vector<std::string>{"sample", "slice", "path", "label", "split"})
    throw FormatError("unexpected features.csv header");
  std::vector<PipelineFeature> out;
  for (const auto& row : t.rows) {
    PipelineFeature f;
    f.sample.source = row[0];
    f.sample.id = row[0] + "#" + row[1];
    const Tensor3 t3 = load_tensor(row[2]);
    if (t3.i1 != kFeatureSide || t3.i2 != kFeatureSide || t3.i3 != 1)
      throw FormatError("feature tensor " + row[2] + " is not 64x64x1");
    f.sample.matrix = t3.slice(0);
    f.sample.label = std::stoi(row[3]);
    f.split = row[4];
    out.push_back(std::move(f));
  }
  return out;
}

inline std::vector<FeatureSample> pool_of(
    const std::vector<PipelineFeature>& all, const std::string& split) {
  std::vector<FeatureSample> out;
  for (const auto& f : all)
    if (f.split == split) out.push_back(f.sample);
  return out;
}

inline void write_history(const PipelineConfig& cfg, const GanState& state) {
  csv::Writer w(paths::history_csv(cfg),
                {"step", "loss_d", "loss_g", "perceptual", "gen_bbda",
                 "disc_acc"});
  for (const HistoryRow& r : state.history)
    w.row({std::to_string(r.step), csv::num(r.loss_d), csv::num(r.loss_g),
           csv::num(r.perceptual), csv::num(r.gen_bbda),
           csv::num(r.disc_acc)});
}

}  // namespace detail

/// Stage 1: synthesize the corpus, assign splits, write the manifest.
inline Manifest pipeline_synth(const PipelineConfig& cfg) {
  std::filesystem::create_directories(paths::bin_dir(cfg));
  Manifest m = synth_corpus(cfg.corpus_benign, cfg.corpus_malware,
                            cfg.corpus_seed, paths::bin_dir(cfg));
  m = split(m, cfg.split_mode, cfg.split_seed);
  m.save(paths::manifest(cfg));
  std::cout << "synth: " << m.rows.size() << " samples -> "
            << paths::manifest(cfg) << "\n";
  return m;
}

/// Stage 2: B2M-encode every manifest binary into a grayscale PGM.
inline void pipeline_encode(const PipelineConfig& cfg) {
  const Manifest m = Manifest::load(paths::manifest(cfg));
  std::filesystem::create_directories(
      std::filesystem::path(cfg.out_dir) / "images");
  for (const ManifestRow& row : m.rows) {
    const GrayImage img = b2m_encode(read_file_bytes(row.path));
    write_pgm(img, paths::image(cfg, row.id));
  }
  std::cout << "encode: " << m.rows.size() << " images\n";
}

/// Stage 3: GLCM self-growing cut; persist valid segments + features.
inline void pipeline_cut(const PipelineConfig& cfg) {
  const Manifest m = Manifest::load(paths::manifest(cfg));
  std::filesystem::create_directories(paths::segment_dir(cfg));
  CutParams params;
  params.levels = cfg.glcm_levels;
  params.dx = cfg.glcm_dx;
  params.dy = cfg.glcm_dy;
  params.threshold = cfg.cut_threshold;
  params.epsilon = cfg.cut_epsilon;
  csv::Writer w(paths::segments_csv(cfg),
                {"source", "row_start", "row_end", "entropy", "contrast",
                 "homogeneity", "asm"});
  std::size_t total = 0;
  for (const ManifestRow& row : m.rows) {
    const GrayImage img = read_pgm(paths::image(cfg, row.id));
    std::vector<TextureSegment> segs =
        filter_valid(cut_image(img, params, row.id));
    for (const TextureSegment& s : segs) {
      const std::string base = segment_basename(s);
      write_pgm(s.pixels, (std::filesystem::path(paths::segment_dir(cfg)) /
                           (base + ".pgm"))
                              .string());
      w.row({s.source, std::to_string(s.row_start), std::to_string(s.row_end),
             csv::num(s.features.entropy), csv::num(s.features.contrast),
             csv::num(s.features.homogeneity), csv::num(s.features.asm_)});
      ++total;
    }
  }
  std::cout << "cut: " << total << " valid segments\n";
}

namespace detail {

/// segments.csv row order defines the LSH insertion order, so ids are stable
/// across a save/load round trip of the index.
struct SegmentRecord {
  std::string source;
  std::size_t row_start = 0;
  std::size_t row_end = 0;
  std::string file;  // basename + .pgm under segments/
};

inline std::vector<SegmentRecord> load_segment_records(
    const PipelineConfig& cfg) {
  const csv::Table t = csv::read(paths::segments_csv(cfg));
  if (t.header.size() != 7 || t.header[0] != "source")
    throw FormatError("unexpected segments.csv header");
  std::vector<SegmentRecord> out;
  for (const auto& row : t.rows) {
    SegmentRecord r;
    r.source = row[0];
    r.row_start = std::stoul(row[1]);
    r.row_end = std::stoul(row[2]);
    out.push_back(std::move(r));
  }
  // Recover the persisted file names from the per-source images.
  std::map<std::string, std::string> sha_by_source;
  for (auto& r : out) {
    auto it = sha_by_source.find(r.source);
    if (it == sha_by_source.end()) {
      const GrayImage img = read_pgm(paths::image(cfg, r.source));
      it = sha_by_source.emplace(r.source, sha256_hex(img.pixels)).first;
    }
    r.file = it->second.substr(0, 12) + "_" + std::to_string(r.row_start) +
             "_" + std::to_string(r.row_end) + ".pgm";
  }
  return out;
}

inline TextureSegment load_segment(const PipelineConfig& cfg,
                                   const SegmentRecord& rec) {
  TextureSegment seg;
  seg.source = rec.source;
  seg.row_start = rec.row_start;
  seg.row_end = rec.row_end;
  seg.pixels = read_pgm(
      (std::filesystem::path(paths::segment_dir(cfg)) / rec.file).string());
  return seg;
}

}  // namespace detail

/// Stage 4: build the LSH index over all segment vectors and select the
/// significant segments of every sample.
inline void pipeline_select(const PipelineConfig& cfg) {
  const Manifest m = Manifest::load(paths::manifest(cfg));
  const auto records = detail::load_segment_records(cfg);
  std::vector<FeatureVec> vectors;
  vectors.reserve(records.size());
  for (const auto& rec : records)
    vectors.push_back(get_vec(detail::load_segment(cfg, rec)));
  LshParams params = cfg.lsh;
  params.dim = 64;
  const LshIndex index = LshIndex::build(vectors, params);
  index.save(paths::index(cfg));

  std::map<std::string, std::vector<std::uint32_t>> ids_by_sample;
  for (std::size_t i = 0; i < records.size(); ++i)
    ids_by_sample[records[i].source].push_back(
        static_cast<std::uint32_t>(i));

  csv::Writer w(paths::selection_csv(cfg),
                {"sample", "segment_file", "rank", "bucket_frequency"});
  std::size_t total = 0;
  for (const ManifestRow& row : m.rows) {
    auto it = ids_by_sample.find(row.id);
    if (it == ids_by_sample.end())
      throw NoSegments("sample " + row.id + " has no valid segments");
    const auto chosen = select_significant(index, it->second, cfg.select_cap);
    for (std::size_t rank = 0; rank < chosen.size(); ++rank) {
      w.row({row.id, records[chosen[rank].id].file,
             std::to_string(rank + 1),
             csv::num(chosen[rank].bucket_frequency)});
      ++total;
    }
  }
  std::cout << "select: " << total << " significant segments\n";
}

/// Stage 5: per sample, stack selected segments and compress through the
/// rank-r t-SVD into 64x64 feature slices.
inline void pipeline_compress(const PipelineConfig& cfg) {
  const Manifest m = Manifest::load(paths::manifest(cfg));
  std::map<std::string, const ManifestRow*> by_id;
  for (const ManifestRow& row : m.rows) by_id[row.id] = &row;

  const csv::Table sel = csv::read(paths::selection_csv(cfg));
  if (sel.header.size() != 4 || sel.header[0] != "sample")
    throw FormatError("unexpected selection.csv header");
  std::vector<std::string> order;  // first-appearance order of samples
  std::map<std::string, std::vector<std::string>> files_by_sample;
  for (const auto& row : sel.rows) {
    auto [it, inserted] = files_by_sample.try_emplace(row[0]);
    if (inserted) order.push_back(row[0]);
    it->second.push_back(row[1]);
  }

  std::filesystem::create_directories(paths::feature_dir(cfg));
  csv::Writer w(paths::features_csv(cfg),
                {"sample", "slice", "path", "label", "split"});
  std::size_t total = 0;
  for (const std::string& sample : order) {
    auto mit = by_id.find(sample);
    if (mit == by_id.end())
      throw FormatError("selection references unknown sample " + sample);
    std::vector<TextureSegment> segs;
    for (const std::string& file : files_by_sample[sample]) {
      TextureSegment seg;
      seg.source = sample;
      seg.pixels = read_pgm(
          (std::filesystem::path(paths::segment_dir(cfg)) / file).string());
      segs.push_back(std::move(seg));
    }
    const std::vector<RowMatXd> slices = compress_sample(segs, cfg.tsvd_rank);
    for (std::size_t k = 0; k < slices.size(); ++k) {
      Tensor3 t(kFeatureSide, kFeatureSide, 1);
      for (std::size_t i = 0; i < kFeatureSide; ++i)
        for (std::size_t j = 0; j < kFeatureSide; ++j)
          t.at(i, j, 0) = slices[k](static_cast<Eigen::Index>(i),
                                    static_cast<Eigen::Index>(j));
      const std::string path =
          (std::filesystem::path(paths::feature_dir(cfg)) /
           (sample + "_" + std::to_string(k) + ".cten"))
              .string();
      save_tensor(t, path);
      w.row({sample, std::to_string(k), path,
             std::to_string(mit->second->label), mit->second->split});
      ++total;
    }
  }
  std::cout << "compress: " << total << " feature slices\n";
}

/// Stage 6: fit every configured detector on the detector pool.
inline void pipeline_train_detector(const PipelineConfig& cfg) {
  const auto features = detail::load_features(cfg);
  const auto pool =
      detail::pool_of(features, detail::detector_pool_name(cfg));
  std::vector<FeatureSample> pool_mal;
  for (const FeatureSample& s : pool)
    if (s.label == 1) pool_mal.push_back(s);
  std::filesystem::create_directories(paths::model_dir(cfg));
  for (DetectorKind kind : cfg.detector_kinds) {
    auto model = make_detector(kind);
    model->fit(pool, cfg.detector, cfg.detector_seed);
    save_detector(*model, paths::detector_model(cfg, kind));
    std::cout << "train-detector: " << detector_kind_name(kind)
              << " bbda(pool)=" << csv::num(bbda(*model, pool_mal)) << "\n";
  }
}

/// Stage 7: adversarial training against the first configured detector
/// (the Black-Bone). Writes the final checkpoint and the loss history; on
/// divergence the restored last-good state is persisted before rethrowing.
inline void pipeline_train_gan(const PipelineConfig& cfg) {
  const auto features = detail::load_features(cfg);
  const auto pool = detail::pool_of(features, detail::gan_pool_name(cfg));
  std::vector<FeatureSample> malware, benign;
  for (const FeatureSample& s : pool)
    (s.label == 1 ? malware : benign).push_back(s);
  const auto black_bone =
      load_detector(paths::detector_model(cfg, cfg.detector_kinds.front()));

  GanConfig gcfg = cfg.gan;
  gcfg.seed = cfg.gan_seeds.front();
  std::filesystem::create_directories(paths::model_dir(cfg));
  EpochCallback on_epoch;
  if (gcfg.checkpoint_every > 0)
    on_epoch = [&cfg, &gcfg](GanState& s, std::size_t epoch) {
      if (epoch % gcfg.checkpoint_every == 0)
        save_gan(s, paths::gan_checkpoint(cfg, epoch));
    };
  try {
    GanState state = train(gcfg, malware, benign, *black_bone, on_epoch);
    save_gan(state, paths::gan_model(cfg));
    detail::write_history(cfg, state);
    std::cout << "train-gan: " << state.history.size()
              << " steps, final gen_bbda="
              << csv::num(state.history.empty()
                              ? 0.0
                              : state.history.back().gen_bbda)
              << "\n";
  } catch (const TrainingDiverged& e) {
    if (e.state) {
      save_gan(*e.state, paths::gan_model(cfg));
      detail::write_history(cfg, *e.state);
    }
    throw;
  }
}

/// Stage 8: original vs adversarially retrained detectors on the test split.
inline void pipeline_evaluate(const PipelineConfig& cfg) {
  const auto features = detail::load_features(cfg);
  const auto det_pool =
      detail::pool_of(features, detail::detector_pool_name(cfg));
  const auto test_pool = detail::pool_of(features, "test");
  std::vector<FeatureSample> det_mal;
  for (const FeatureSample& s : det_pool)
    if (s.label == 1) det_mal.push_back(s);

  GanState gan = load_gan(paths::gan_model(cfg));
  csv::Writer w(paths::report_csv(cfg),
                {"detector", "split_mode", "original_bbda_train",
                 "trained_bbda_train", "original_bbda_test",
                 "trained_bbda_test", "black_bone_acc", "mtfd_acc",
                 "impr_ratio"});
  for (DetectorKind kind : cfg.detector_kinds) {
    RetrainOutcome out = retrain_full(gan, kind, cfg.detector, det_pool,
                                      test_pool, cfg.detector_seed);
    w.row({detector_kind_name(kind), cfg.split_mode,
           csv::num(bbda(*out.original, det_mal)),
           csv::num(bbda(*out.retrained, det_mal)),
           csv::num(out.report.bbda_original),
           csv::num(out.report.bbda_trained),
           csv::num(accuracy(*out.original, test_pool)),
           csv::num(accuracy(*out.retrained, test_pool)),
           csv::num(out.report.improvement)});
  }
  std::cout << "evaluate: " << cfg.detector_kinds.size() << " detectors -> "
            << paths::report_csv(cfg) << "\n";
}

/// Stage 9: render the report as an aligned text table and emit the
/// loss/accuracy/recall plot series from the training history.
inline std::string pipeline_report(const PipelineConfig& cfg) {
  const csv::Table report = csv::read(paths::report_csv(cfg));
  std::vector<std::size_t> width(report.header.size());
  auto widen = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i)
      width[i] = std::max(width[i], row[i].size());
  };
  widen(report.header);
  for (const auto& row : report.rows) widen(row);
  std::ostringstream text;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i)
      text << (i ? "  " : "") << std::setw(static_cast<int>(width[i]))
           << std::left << row[i];
    text << "\n";
  };
  emit(report.header);
  for (const auto& row : report.rows) emit(row);

  const csv::Table history = csv::read(paths::history_csv(cfg));
  std::filesystem::create_directories(
      std::filesystem::path(cfg.out_dir) / "plots");
  csv::Writer plot(paths::plot_csv(cfg),
                   {"step", "loss", "accuracy", "recall"});
  for (const auto& row : history.rows)
    plot.row({row[0], row[1], row[5], row[4]});

  std::cout << text.str();
  return text.str();
}

/// All stages in order.
inline std::string run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  pipeline_synth(cfg);
  pipeline_encode(cfg);
  pipeline_cut(cfg);
  pipeline_select(cfg);
  pipeline_compress(cfg);
  pipeline_train_detector(cfg);
  pipeline_train_gan(cfg);
  pipeline_evaluate(cfg);
  return pipeline_report(cfg);
}

}  // namespace codetensor
