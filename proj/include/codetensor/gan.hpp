#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "codetensor/binio.hpp"
#include "codetensor/detectors.hpp"
#include "codetensor/errors.hpp"
#include "codetensor/nn.hpp"
#include "codetensor/rng.hpp"

namespace codetensor {

struct GanConfig {
  std::size_t epochs = 150;
  std::size_t m = 8;      // minibatch size
  double lr_d = 0.05;
  double lr_g = 0.05;
  double lambda = 0.1;    // perceptual weight in the generator objective
  std::size_t j = 2;      // perceptual feature block (0-based)
  double jitter = 0.05;   // sigma of the additive input jitter on Z
  std::uint64_t seed = 1;
  nn::ProfileOpts profile{};
  std::size_t checkpoint_every = 0;  // epochs between checkpoints; 0 = off

  void validate() const {
    if (m < 1) throw ConfigError("gan.m must be >= 1");
    if (!(lr_d > 0) || !(lr_g > 0))
      throw ConfigError("gan learning rates must be > 0");
    if (lambda < 0) throw ConfigError("gan.lambda must be >= 0");
    if (jitter < 0) throw ConfigError("gan.jitter must be >= 0");
  }
};

struct HistoryRow {
  std::size_t step = 0;
  double loss_d = 0.0;
  double loss_g = 0.0;
  double perceptual = 0.0;
  double gen_bbda = 0.0;   // black-bone recall on the generated batch
  double disc_acc = 0.0;   // discriminator agreement with the BD labels
};

/// Fixed, untrained 3-block conv stack with frozen weights; stands in for a
/// pretrained perceptual network. Weights come from a constant seed so every
/// run sees the same feature space.
class FeatureNet {
 public:
  static constexpr std::size_t kBlocks = 3;

  FeatureNet() {
    Rng rng(0x70657263ull);
    convs_.push_back(std::make_unique<nn::Conv2d>(1, 8, 3, 1, 1, 1, rng));
    convs_.push_back(std::make_unique<nn::Conv2d>(8, 8, 3, 2, 0, 1, rng));
    convs_.push_back(std::make_unique<nn::Conv2d>(8, 8, 3, 2, 0, 1, rng));
    for (std::size_t b = 0; b < kBlocks; ++b)
      relus_.push_back(std::make_unique<nn::ReLU>());
  }

  nn::Shape feature_shape(std::size_t j) const {
    check_layer(j);
    nn::Shape s{1, 64, 64};
    for (std::size_t b = 0; b <= j; ++b) s = convs_[b]->infer(s);
    return s;
  }

  /// Activations after block j (conv + ReLU); caches for input_grad.
  nn::Tensor4 features(const nn::Tensor4& x, std::size_t j) {
    check_layer(j);
    nn::Tensor4 y = x;
    for (std::size_t b = 0; b <= j; ++b) {
      y = convs_[b]->forward(y, false);
      y = relus_[b]->forward(y, false);
    }
    return y;
  }

  /// Gradient of a scalar loss wrt the input of features(, j). The frozen
  /// parameters accumulate gradients too; they are simply never stepped.
  nn::Tensor4 input_grad(std::size_t j, const nn::Tensor4& gy) {
    check_layer(j);
    nn::Tensor4 g = gy;
    for (std::size_t b = j + 1; b-- > 0;) {
      g = relus_[b]->backward(g);
      g = convs_[b]->backward(g);
    }
    return g;
  }

 private:
  static void check_layer(std::size_t j) {
    if (j >= kBlocks) throw LayerError("perceptual layer index out of range");
  }
  std::vector<std::unique_ptr<nn::Conv2d>> convs_;
  std::vector<std::unique_ptr<nn::ReLU>> relus_;
};

struct GanState {
  nn::Network generator;
  nn::Network discriminator;
  FeatureNet feature_net;
  std::vector<HistoryRow> history;
  double acc0 = 0.0;  // black-bone BBDA on the malware pool before training
  GanConfig config;
};

/// Raised when a training loss becomes non-finite; carries the last state
/// whose losses were all finite.
struct TrainingDiverged : Error {
  TrainingDiverged(const std::string& msg, std::shared_ptr<GanState> s)
      : Error(msg), state(std::move(s)) {}
  std::shared_ptr<GanState> state;
};

inline constexpr double kProbEps = 1e-7;

namespace detail {

/// Mean of [flag*log p + (1-flag)*log(1-p)] with eps-clipped probabilities;
/// the gradient is zero wherever the clip is active.
inline double log_score(const nn::Tensor4& probs,
                        const std::vector<int>& benign_flags,
                        nn::Tensor4* gy) {
  const double n = static_cast<double>(probs.n);
  if (gy) *gy = nn::Tensor4(probs.n, probs.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < probs.n; ++i) {
    const double raw = probs.v[i];
    const double p = std::clamp(raw, kProbEps, 1.0 - kProbEps);
    const bool clipped = raw < kProbEps || raw > 1.0 - kProbEps;
    if (benign_flags[i]) {
      total += std::log(p);
      if (gy && !clipped) gy->v[i] = 1.0 / (p * n);
    } else {
      total += std::log(1.0 - p);
      if (gy && !clipped) gy->v[i] = -1.0 / ((1.0 - p) * n);
    }
  }
  return total / n;
}

inline nn::Tensor4 concat_batches(const nn::Tensor4& a, const nn::Tensor4& b) {
  if (a.shape() != b.shape()) throw ShapeError("batch shape mismatch");
  nn::Tensor4 out(a.n + b.n, a.shape());
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.v.size());
  return out;
}

}  // namespace detail

/// Eq. 8 smooth generation: average of the malware input and the raw network
/// output. `jitter_rng` (optional) adds clamped Gaussian noise to the
/// network's input copy of Z only; the averaged M stays clean.
inline nn::Tensor4 smooth_generate(nn::Network& gen,
                                   const nn::Tensor4& m_batch, bool train,
                                   Rng* jitter_rng = nullptr,
                                   double jitter_sigma = 0.0) {
  nn::Tensor4 z = m_batch;
  if (jitter_rng && jitter_sigma > 0.0)
    for (double& v : z.v)
      v = std::clamp(v + jitter_rng->gaussian(0.0, jitter_sigma), 0.0, 1.0);
  nn::Tensor4 t = gen.forward(z, train);
  if (t.shape() != m_batch.shape())
    throw ShapeError("generator output shape mismatch");
  for (std::size_t i = 0; i < t.v.size(); ++i)
    t.v[i] = 0.5 * (t.v[i] + m_batch.v[i]);
  return t;
}

/// Eq. 9 discriminator loss: mean over the combined batch of
/// [1{BD=benign} log D + 1{BD=mal} log(1-D)], minimized by the trainer.
/// `bd_labels` are Black-Bone predictions over [benign_batch, mal_batch]
/// in that order (0 = benign, 1 = malware).
inline double loss_d(nn::Network& disc, const nn::Tensor4& benign_batch,
                     const nn::Tensor4& mal_batch,
                     const std::vector<int>& bd_labels, bool train = true) {
  const nn::Tensor4 combined = detail::concat_batches(benign_batch, mal_batch);
  if (bd_labels.size() != combined.n)
    throw ShapeError("bd label count mismatch");
  std::vector<int> benign_flags(combined.n);
  for (std::size_t i = 0; i < combined.n; ++i)
    benign_flags[i] = bd_labels[i] == 0 ? 1 : 0;
  const nn::Tensor4 probs = disc.forward(combined, train);
  return detail::log_score(probs, benign_flags, nullptr);
}

/// Eq. 11 generator loss: mean log(1 - D(G(Z))), maximized by the trainer.
inline double loss_g(nn::Network& disc, nn::Network& gen,
                     const nn::Tensor4& z_batch, bool train = true) {
  const nn::Tensor4 generated = smooth_generate(gen, z_batch, train);
  const nn::Tensor4 probs = disc.forward(generated, train);
  const std::vector<int> mal_flags(probs.n, 0);  // every term is log(1-D)
  return detail::log_score(probs, mal_flags, nullptr);
}

/// Eq. 13 perceptual loss between one generated map and one malware map:
/// squared feature-map distance at block j, normalized by C_j*H_j*W_j.
inline double perceptual_loss(FeatureNet& feat_net, const RowMatXd& validity,
                              const RowMatXd& mal, std::size_t j) {
  std::vector<const RowMatXd*> vm{&validity}, mm{&mal};
  const nn::Tensor4 fv = feat_net.features(matrices_to_batch(vm), j);
  const nn::Tensor4 fm = feat_net.features(matrices_to_batch(mm), j);
  double s = 0.0;
  for (std::size_t i = 0; i < fv.v.size(); ++i) {
    const double d = fv.v[i] - fm.v[i];
    s += d * d;
  }
  return s / static_cast<double>(feat_net.feature_shape(j).numel());
}

namespace detail {

/// Batched perceptual loss plus its gradient wrt `validity`.
inline double perceptual_batch(FeatureNet& fn, const nn::Tensor4& validity,
                               const nn::Tensor4& mal, std::size_t j,
                               nn::Tensor4* grad_validity) {
  const nn::Tensor4 fm = fn.features(mal, j);
  const nn::Tensor4 fv = fn.features(validity, j);  // cached last for backward
  const double norm = static_cast<double>(fn.feature_shape(j).numel());
  const double n = static_cast<double>(validity.n);
  double total = 0.0;
  nn::Tensor4 gf(fv.n, fv.shape());
  for (std::size_t i = 0; i < fv.v.size(); ++i) {
    const double d = fv.v[i] - fm.v[i];
    total += d * d;
    gf.v[i] = 2.0 * d / (norm * n);
  }
  if (grad_validity) *grad_validity = fn.input_grad(j, gf);
  return total / (norm * n);
}

struct ParamSnapshot {
  std::vector<std::vector<double>> values;

  static ParamSnapshot of(nn::Network& net) {
    ParamSnapshot s;
    for (nn::Param* p : net.params()) s.values.push_back(p->w);
    return s;
  }
  void restore(nn::Network& net) const {
    auto ps = net.params();
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->w = values[i];
  }
};

}  // namespace detail

inline void save_gan(GanState& state, const std::string& path) {
  auto os = binio::open_out(path);
  os.write("CMDL", 4);
  binio::put<std::uint8_t>(os, 100);  // container kind: GAN checkpoint
  binio::put<std::uint8_t>(
      os, static_cast<std::uint8_t>(state.config.profile.profile));
  binio::put<std::uint32_t>(
      os, static_cast<std::uint32_t>(state.config.profile.factor));
  state.generator.save_params(os);
  state.discriminator.save_params(os);
}

inline GanState load_gan(const std::string& path) {
  auto is = binio::open_in(path);
  binio::expect_magic(is, "CMDL");
  if (binio::get<std::uint8_t>(is) != 100)
    throw FormatError("not a GAN checkpoint: " + path);
  GanState state;
  state.config.profile.profile =
      static_cast<nn::NetProfile>(binio::get<std::uint8_t>(is));
  state.config.profile.factor = binio::get<std::uint32_t>(is);
  Rng rng(0);  // placeholder init, immediately overwritten by load
  state.generator = nn::build_generator(state.config.profile, rng);
  state.discriminator = nn::build_discriminator(state.config.profile, rng);
  state.generator.load_params(is);
  state.discriminator.load_params(is);
  if (!is) throw FormatError("truncated GAN checkpoint: " + path);
  return state;
}

/// Runs the trained generator over malware samples (inference mode, seeded
/// jitter) and returns the smoothed outputs as feature matrices.
inline std::vector<RowMatXd> generate_from(
    GanState& state, const std::vector<FeatureSample>& malware,
    std::uint64_t seed, double jitter) {
  if (malware.empty()) throw NoSamples("no malware samples to generate from");
  std::vector<const RowMatXd*> mats(malware.size());
  for (std::size_t i = 0; i < malware.size(); ++i) mats[i] = &malware[i].matrix;
  Rng rng(seed);
  const nn::Tensor4 batch = matrices_to_batch(mats);
  nn::Tensor4 out = smooth_generate(state.generator, batch, false,
                                    jitter > 0 ? &rng : nullptr, jitter);
  std::vector<RowMatXd> result(malware.size());
  for (std::size_t i = 0; i < malware.size(); ++i)
    result[i] = Eigen::Map<const RowMatXd>(out.sample(i), 64, 64);
  return result;
}

/// Alg. 4 training loop. Per epoch: sample minibatches, label them with the
/// Black-Bone detector, one descent step on L_D, one ascent step on
/// L_G - lambda*perceptual. Deterministic given the config seed.
using EpochCallback = std::function<void(GanState&, std::size_t epoch)>;

inline GanState train(const GanConfig& cfg,
                      const std::vector<FeatureSample>& malware,
                      const std::vector<FeatureSample>& benign,
                      const Detector& black_bone,
                      const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (malware.empty() || benign.empty())
    throw NoSamples("gan training needs both malware and benign samples");

  auto state = std::make_shared<GanState>();
  state->config = cfg;
  Rng init_rng(cfg.seed);
  state->generator = nn::build_generator(cfg.profile, init_rng);
  state->discriminator = nn::build_discriminator(cfg.profile, init_rng);
  state->acc0 = bbda(black_bone, malware);

  Rng sample_rng = init_rng.fork(0x5a);
  Rng jitter_rng = init_rng.fork(0x6a);

  auto pick = [&](const std::vector<FeatureSample>& pool) {
    std::vector<const RowMatXd*> mats(cfg.m);
    for (std::size_t i = 0; i < cfg.m; ++i)
      mats[i] = &pool[sample_rng.below(pool.size())].matrix;
    return matrices_to_batch(mats);
  };

  detail::ParamSnapshot good_g = detail::ParamSnapshot::of(state->generator);
  detail::ParamSnapshot good_d =
      detail::ParamSnapshot::of(state->discriminator);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const nn::Tensor4 mal_batch = pick(malware);
    const nn::Tensor4 ben_batch = pick(benign);

    // Black-Bone labels for the combined [benign, generated-malware] batch.
    nn::Tensor4 gen_batch = smooth_generate(
        state->generator, mal_batch, true,
        cfg.jitter > 0 ? &jitter_rng : nullptr, cfg.jitter);
    const nn::Tensor4 combined = detail::concat_batches(ben_batch, gen_batch);
    std::vector<int> benign_flags(combined.n);
    std::size_t bd_mal_on_generated = 0;
    for (std::size_t i = 0; i < combined.n; ++i) {
      const double p = black_bone.predict_proba(
          Eigen::Map<const RowMatXd>(combined.sample(i), 64, 64));
      const bool mal = predicted_malware(p);
      benign_flags[i] = mal ? 0 : 1;
      if (i >= ben_batch.n && mal) ++bd_mal_on_generated;
    }

    // Discriminator step: descend on L_D.
    state->discriminator.zero_grads();
    const nn::Tensor4 d_probs = state->discriminator.forward(combined, true);
    nn::Tensor4 d_gy;
    const double ld = detail::log_score(d_probs, benign_flags, &d_gy);
    state->discriminator.backward(d_gy);
    nn::sgd_step(state->discriminator, cfg.lr_d, nn::StepDir::kDescend);

    std::size_t d_agree = 0;
    for (std::size_t i = 0; i < combined.n; ++i) {
      const bool d_mal = d_probs.v[i] >= 0.5;
      if (d_mal == (benign_flags[i] == 0)) ++d_agree;
    }

    // Generator step: ascend on L_G - lambda * perceptual.
    state->generator.zero_grads();
    state->discriminator.zero_grads();
    nn::Tensor4 g_out = smooth_generate(
        state->generator, mal_batch, true,
        cfg.jitter > 0 ? &jitter_rng : nullptr, cfg.jitter);
    const nn::Tensor4 g_probs = state->discriminator.forward(g_out, true);
    const std::vector<int> g_flags(g_probs.n, 0);
    nn::Tensor4 g_gy;
    const double lg = detail::log_score(g_probs, g_flags, &g_gy);
    nn::Tensor4 d_out_grad = state->discriminator.backward(g_gy);

    nn::Tensor4 perc_grad;
    const double perc = detail::perceptual_batch(
        state->feature_net, g_out, mal_batch, cfg.j,
        cfg.lambda > 0 ? &perc_grad : nullptr);
    if (cfg.lambda > 0)
      for (std::size_t i = 0; i < d_out_grad.v.size(); ++i)
        d_out_grad.v[i] -= cfg.lambda * perc_grad.v[i];
    // Through Eq. 8's averaging, d(out)/d(raw network output) = 1/2.
    for (double& v : d_out_grad.v) v *= 0.5;
    state->generator.backward(d_out_grad);
    nn::sgd_step(state->generator, cfg.lr_g, nn::StepDir::kAscend);

    HistoryRow row;
    row.step = epoch + 1;
    row.loss_d = ld;
    row.loss_g = lg;
    row.perceptual = perc;
    row.gen_bbda =
        static_cast<double>(bd_mal_on_generated) / static_cast<double>(cfg.m);
    row.disc_acc =
        static_cast<double>(d_agree) / static_cast<double>(combined.n);
    if (!std::isfinite(ld) || !std::isfinite(lg) || !std::isfinite(perc)) {
      good_g.restore(state->generator);
      good_d.restore(state->discriminator);
      throw TrainingDiverged(
          "non-finite loss at step " + std::to_string(row.step), state);
    }
    state->history.push_back(row);
    good_g = detail::ParamSnapshot::of(state->generator);
    good_d = detail::ParamSnapshot::of(state->discriminator);
    if (on_epoch) on_epoch(*state, epoch + 1);
  }
  return std::move(*state);
}

struct EvalReport {
  DetectorKind kind = DetectorKind::kDT;
  std::string split_mode;
  double bbda_original = 0.0;  // ACC0
  double bbda_trained = 0.0;   // ACC1
  double improvement = 0.0;    // |ACC0 - ACC1| / |ACC0|
  double signed_change = 0.0;  // ACC1 - ACC0 (|.| hides regressions)
};

struct RetrainOutcome {
  EvalReport report;
  std::unique_ptr<Detector> original;
  std::unique_ptr<Detector> retrained;
  std::vector<FeatureSample> generated;  // label-1 samples added for retraining
};

/// Alg. 4 lines 8-10: augment the malware class with generated samples,
/// refit a fresh detector, and compare malware recall on held-out samples.
inline RetrainOutcome retrain_full(GanState& gan, DetectorKind kind,
                                   const DetectorHyper& hyper,
                                   const std::vector<FeatureSample>& train_set,
                                   const std::vector<FeatureSample>& test_set,
                                   std::uint64_t seed) {
  if (test_set.empty()) throw NoSamples("empty test set");
  std::vector<FeatureSample> test_mal;
  for (const FeatureSample& s : test_set)
    if (s.label == 1) test_mal.push_back(s);
  if (test_mal.empty()) throw NoSamples("test set has no malware");

  std::vector<FeatureSample> train_mal;
  for (const FeatureSample& s : train_set)
    if (s.label == 1) train_mal.push_back(s);
  if (train_mal.empty()) throw NoSamples("training set has no malware");

  RetrainOutcome out;
  out.original = make_detector(kind);
  out.original->fit(train_set, hyper, seed);

  std::vector<FeatureSample> augmented = train_set;
  const auto generated =
      generate_from(gan, train_mal, seed ^ 0x67656e, gan.config.jitter);
  for (std::size_t i = 0; i < generated.size(); ++i) {
    FeatureSample s;
    s.matrix = generated[i];
    s.label = 1;
    s.id = "gen_" + std::to_string(i);
    s.source = train_mal[i].id;
    out.generated.push_back(s);
    augmented.push_back(std::move(s));
  }
  out.retrained = make_detector(kind);
  out.retrained->fit(augmented, hyper, seed);

  EvalReport& report = out.report;
  report.kind = kind;
  report.bbda_original = bbda(*out.original, test_mal);
  report.bbda_trained = bbda(*out.retrained, test_mal);
  report.signed_change = report.bbda_trained - report.bbda_original;
  report.improvement = report.bbda_original > 0
                           ? std::abs(report.signed_change) /
                                 std::abs(report.bbda_original)
                           : 0.0;
  return out;
}

inline EvalReport retrain_and_improve(GanState& gan, DetectorKind kind,
                                      const DetectorHyper& hyper,
                                      const std::vector<FeatureSample>& train_set,
                                      const std::vector<FeatureSample>& test_set,
                                      std::uint64_t seed) {
  return retrain_full(gan, kind, hyper, train_set, test_set, seed).report;
}

}  // namespace codetensor
