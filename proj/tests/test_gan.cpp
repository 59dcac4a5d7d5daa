#include "codetensor/gan.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "codetensor/detectors.hpp"
#include "codetensor/errors.hpp"
#include "codetensor/rng.hpp"
#include "test_util.hpp"

namespace nn = codetensor::nn;
using codetensor::bbda;
using codetensor::ConfigError;
using codetensor::Detector;
using codetensor::DetectorHyper;
using codetensor::DetectorKind;
using codetensor::FeatureNet;
using codetensor::FeatureSample;
using codetensor::FormatError;
using codetensor::GanConfig;
using codetensor::GanState;
using codetensor::generate_from;
using codetensor::kProbEps;
using codetensor::LayerError;
using codetensor::load_gan;
using codetensor::NoSamples;
using codetensor::perceptual_loss;
using codetensor::retrain_full;
using codetensor::Rng;
using codetensor::RowMatXd;
using codetensor::save_gan;
using codetensor::ShapeError;
using codetensor::smooth_generate;
using codetensor::TrainingDiverged;

namespace {

FeatureSample blob_sample(double base, int label, std::uint64_t seed,
                          const std::string& id) {
  Rng rng(seed);
  FeatureSample s;
  s.matrix = RowMatXd(64, 64);
  for (Eigen::Index i = 0; i < 64; ++i)
    for (Eigen::Index j = 0; j < 64; ++j)
      s.matrix(i, j) = base + rng.uniform(-0.05, 0.05);
  s.label = label;
  s.id = id;
  return s;
}

std::vector<FeatureSample> blobs(double base, int label, std::size_t n,
                                 std::uint64_t seed) {
  std::vector<FeatureSample> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(blob_sample(base, label, seed + i,
                              (label ? "m" : "b") + std::to_string(i)));
  return out;
}

std::unique_ptr<Detector> fitted_black_bone(std::uint64_t seed) {
  auto bb = codetensor::make_detector(DetectorKind::kDT);
  std::vector<FeatureSample> train = blobs(0.2, 0, 6, seed);
  auto mal = blobs(0.8, 1, 6, seed + 50);
  train.insert(train.end(), mal.begin(), mal.end());
  bb->fit(train, {}, 1);
  return bb;
}

GanConfig tiny_config() {
  GanConfig cfg;
  cfg.epochs = 3;
  cfg.m = 2;
  cfg.lr_d = 0.02;
  cfg.lr_g = 0.02;
  cfg.lambda = 0.1;
  cfg.j = 1;
  cfg.jitter = 0.05;
  cfg.seed = 9;
  return cfg;
}

nn::Tensor4 probs_of(const std::vector<double>& p) {
  nn::Tensor4 t(p.size(), 1, 1, 1);
  t.v = p;
  return t;
}

}  // namespace

TEST(GanConfig, Validation) {
  GanConfig cfg;
  cfg.m = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.lr_d = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.lambda = -0.1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.jitter = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  EXPECT_NO_THROW(cfg.validate());
}

TEST(GanLogScore, HalfProbabilityBaseline) {
  const auto probs = probs_of({0.5, 0.5, 0.5, 0.5});
  nn::Tensor4 gy;
  const double v =
      codetensor::detail::log_score(probs, {1, 1, 0, 0}, &gy);
  EXPECT_NEAR(v, std::log(0.5), 1e-15);
  // d/dp log p = 1/(p n) for benign terms, -1/((1-p) n) for malware terms.
  EXPECT_NEAR(gy.v[0], 1.0 / (0.5 * 4), 1e-15);
  EXPECT_NEAR(gy.v[2], -1.0 / (0.5 * 4), 1e-15);
}

TEST(GanLogScore, MixedValuesMatchHandComputation) {
  const auto probs = probs_of({0.9, 0.25});
  const double v = codetensor::detail::log_score(probs, {1, 0}, nullptr);
  EXPECT_NEAR(v, (std::log(0.9) + std::log(0.75)) / 2.0, 1e-15);
}

TEST(GanLogScore, PerfectDiscriminatorHitsTheClip) {
  // A perfect discriminator drives D(G(Z)) to 1; the malware term then
  // evaluates at the clip, log(eps), and its gradient is zeroed.
  const auto probs = probs_of({1.0, 0.0});
  nn::Tensor4 gy;
  const double v = codetensor::detail::log_score(probs, {0, 1}, &gy);
  EXPECT_NEAR(v, (std::log(kProbEps) + std::log(kProbEps)) / 2.0, 1e-9);
  EXPECT_EQ(gy.v[0], 0.0);
  EXPECT_EQ(gy.v[1], 0.0);
}

TEST(GanSmoothGenerate, AveragesNetworkOutputWithInput) {
  Rng rng(3);
  nn::Network gen = nn::build_generator({}, rng);
  nn::Tensor4 z(2, 1, 64, 64);
  Rng data(4);
  for (double& v : z.v) v = data.uniform(0.1, 0.9);
  const nn::Tensor4 raw = gen.forward(z, false);
  const nn::Tensor4 out = smooth_generate(gen, z, false);
  ASSERT_EQ(out.v.size(), raw.v.size());
  for (std::size_t i = 0; i < out.v.size(); ++i)
    EXPECT_DOUBLE_EQ(out.v[i], 0.5 * (raw.v[i] + z.v[i]));
}

TEST(GanSmoothGenerate, JitterPerturbsOnlyTheNetworkInput) {
  Rng rng(5);
  nn::Network gen = nn::build_generator({}, rng);
  nn::Tensor4 z(1, 1, 64, 64);
  Rng data(6);
  for (double& v : z.v) v = data.uniform(0.1, 0.9);

  Rng ja(7);
  const nn::Tensor4 a = smooth_generate(gen, z, false, &ja, 0.05);
  Rng jb(7);
  const nn::Tensor4 b = smooth_generate(gen, z, false, &jb, 0.05);
  EXPECT_EQ(a.v, b.v);  // same jitter stream, same output

  // Reproduce by hand: jitter the network's copy of Z, average with clean Z.
  Rng jc(7);
  nn::Tensor4 zj = z;
  for (double& v : zj.v)
    v = std::clamp(v + jc.gaussian(0.0, 0.05), 0.0, 1.0);
  const nn::Tensor4 raw = gen.forward(zj, false);
  for (std::size_t i = 0; i < a.v.size(); ++i)
    EXPECT_DOUBLE_EQ(a.v[i], 0.5 * (raw.v[i] + z.v[i]));

  Rng jd(8);
  const nn::Tensor4 c = smooth_generate(gen, z, false, &jd, 0.05);
  EXPECT_NE(a.v, c.v);  // different jitter stream
}

TEST(GanFeatureNet, ShapesAndDeterminism) {
  FeatureNet fn;
  EXPECT_TRUE(fn.feature_shape(0) == (nn::Shape{8, 64, 64}));
  EXPECT_TRUE(fn.feature_shape(1) == (nn::Shape{8, 32, 32}));
  EXPECT_TRUE(fn.feature_shape(2) == (nn::Shape{8, 16, 16}));
  EXPECT_THROW(fn.feature_shape(3), LayerError);

  nn::Tensor4 x(1, 1, 64, 64);
  Rng data(9);
  for (double& v : x.v) v = data.uniform(0.0, 1.0);
  FeatureNet other;  // frozen constant seed: a fresh instance agrees exactly
  EXPECT_EQ(fn.features(x, 2).v, other.features(x, 2).v);
}

TEST(GanPerceptual, ZeroOnIdenticalInputsAndMatchesDefinition) {
  FeatureNet fn;
  const RowMatXd a = blob_sample(0.4, 1, 21, "a").matrix;
  const RowMatXd b = blob_sample(0.6, 1, 22, "b").matrix;
  EXPECT_DOUBLE_EQ(perceptual_loss(fn, a, a, 1), 0.0);
  const double loss = perceptual_loss(fn, a, b, 1);
  EXPECT_GT(loss, 0.0);

  // Recompute from the public feature maps.
  std::vector<const RowMatXd*> av{&a}, bv{&b};
  const nn::Tensor4 fa = fn.features(codetensor::matrices_to_batch(av), 1);
  const nn::Tensor4 fb = fn.features(codetensor::matrices_to_batch(bv), 1);
  double s = 0.0;
  for (std::size_t i = 0; i < fa.v.size(); ++i) {
    const double d = fa.v[i] - fb.v[i];
    s += d * d;
  }
  EXPECT_DOUBLE_EQ(loss, s / fn.feature_shape(1).numel());
}

TEST(GanLosses, LossDValidatesLabelCount) {
  Rng rng(31);
  nn::Network disc = nn::build_discriminator({}, rng);
  nn::Tensor4 ben(1, 1, 64, 64), mal(1, 1, 64, 64);
  EXPECT_THROW(codetensor::loss_d(disc, ben, mal, {0}), ShapeError);
  const double v = codetensor::loss_d(disc, ben, mal, {0, 1});
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_LE(v, 0.0);  // mean of log-probabilities
}

TEST(GanTrain, HistoryAndDeterminism) {
  testutil::TempDir tmp("gan_det");
  const GanConfig cfg = tiny_config();
  const auto malware = blobs(0.8, 1, 4, 300);
  const auto benign = blobs(0.2, 0, 4, 400);
  const auto bb = fitted_black_bone(500);

  GanState a = codetensor::train(cfg, malware, benign, *bb);
  ASSERT_EQ(a.history.size(), cfg.epochs);
  EXPECT_DOUBLE_EQ(a.acc0, bbda(*bb, malware));
  for (const auto& row : a.history) {
    EXPECT_TRUE(std::isfinite(row.loss_d));
    EXPECT_TRUE(std::isfinite(row.loss_g));
    EXPECT_TRUE(std::isfinite(row.perceptual));
    EXPECT_GE(row.gen_bbda, 0.0);
    EXPECT_LE(row.gen_bbda, 1.0);
    EXPECT_GE(row.disc_acc, 0.0);
    EXPECT_LE(row.disc_acc, 1.0);
  }
  EXPECT_EQ(a.history.front().step, 1u);
  EXPECT_EQ(a.history.back().step, cfg.epochs);

  GanState b = codetensor::train(cfg, malware, benign, *bb);
  for (std::size_t i = 0; i < cfg.epochs; ++i) {
    EXPECT_EQ(a.history[i].loss_d, b.history[i].loss_d);
    EXPECT_EQ(a.history[i].loss_g, b.history[i].loss_g);
    EXPECT_EQ(a.history[i].perceptual, b.history[i].perceptual);
  }
  const std::string pa = (tmp.path() / "a.cmdl").string();
  const std::string pb = (tmp.path() / "b.cmdl").string();
  save_gan(a, pa);
  save_gan(b, pb);
  EXPECT_EQ(testutil::slurp(pa), testutil::slurp(pb));
}

TEST(GanTrain, EpochCallbackCadence) {
  const GanConfig cfg = tiny_config();
  const auto malware = blobs(0.8, 1, 3, 310);
  const auto benign = blobs(0.2, 0, 3, 410);
  const auto bb = fitted_black_bone(510);
  std::vector<std::size_t> seen;
  codetensor::train(cfg, malware, benign, *bb,
                    [&](GanState& state, std::size_t epoch) {
                      EXPECT_EQ(state.history.size(), epoch);
                      seen.push_back(epoch);
                    });
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3}));
}

TEST(GanTrain, RequiresBothPools) {
  const GanConfig cfg = tiny_config();
  const auto malware = blobs(0.8, 1, 2, 320);
  const auto benign = blobs(0.2, 0, 2, 420);
  const auto bb = fitted_black_bone(520);
  EXPECT_THROW(codetensor::train(cfg, {}, benign, *bb), NoSamples);
  EXPECT_THROW(codetensor::train(cfg, malware, {}, *bb), NoSamples);
}

TEST(GanTrain, DivergenceRestoresLastGoodState) {
  GanConfig cfg = tiny_config();
  cfg.epochs = 10;
  cfg.lr_d = 1e300;  // weight overflow -> non-finite loss within a few steps
  cfg.lr_g = 1e300;
  const auto malware = blobs(0.8, 1, 3, 330);
  const auto benign = blobs(0.2, 0, 3, 430);
  const auto bb = fitted_black_bone(530);
  try {
    codetensor::train(cfg, malware, benign, *bb);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& ex) {
    ASSERT_NE(ex.state, nullptr);
    EXPECT_LT(ex.state->history.size(), cfg.epochs);
    // The carried state was rolled back to finite parameters.
    auto outputs = generate_from(*ex.state, malware, 1, 0.0);
    for (const RowMatXd& m : outputs)
      EXPECT_TRUE(m.allFinite());
  }
}

TEST(GanCheckpoint, SaveLoadRoundTrip) {
  testutil::TempDir tmp("gan_ckpt");
  const GanConfig cfg = tiny_config();
  const auto malware = blobs(0.8, 1, 3, 340);
  const auto benign = blobs(0.2, 0, 3, 440);
  const auto bb = fitted_black_bone(540);
  GanState state = codetensor::train(cfg, malware, benign, *bb);

  const std::string path = (tmp.path() / "gan.cmdl").string();
  save_gan(state, path);
  GanState back = load_gan(path);
  EXPECT_EQ(back.config.profile.factor, cfg.profile.factor);
  const auto want = generate_from(state, malware, 77, 0.05);
  const auto got = generate_from(back, malware, 77, 0.05);
  ASSERT_EQ(want.size(), got.size());
  for (std::size_t i = 0; i < want.size(); ++i)
    EXPECT_TRUE(want[i] == got[i]);

  // A detector model is not a GAN checkpoint.
  const std::string foreign = (tmp.path() / "det.cmdl").string();
  auto det = fitted_black_bone(541);
  codetensor::save_detector(*det, foreign);
  EXPECT_THROW(load_gan(foreign), FormatError);
}

TEST(GanGenerate, SeededAndValidated) {
  Rng rng(41);
  GanState state;
  state.generator = nn::build_generator({}, rng);
  state.discriminator = nn::build_discriminator({}, rng);
  const auto malware = blobs(0.8, 1, 3, 350);
  EXPECT_THROW(generate_from(state, {}, 1, 0.0), NoSamples);
  const auto a = generate_from(state, malware, 5, 0.05);
  const auto b = generate_from(state, malware, 5, 0.05);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(a[i] == b[i]);
    EXPECT_EQ(a[i].rows(), 64);
    EXPECT_GE(a[i].minCoeff(), 0.0);
    EXPECT_LE(a[i].maxCoeff(), 1.0);
  }
  const auto c = generate_from(state, malware, 6, 0.05);
  EXPECT_FALSE(a[0] == c[0]);
}

TEST(GanRetrain, ReportArithmeticAndAugmentation) {
  Rng rng(51);
  GanState state;
  state.config.jitter = 0.0;
  state.generator = nn::build_generator({}, rng);
  state.discriminator = nn::build_discriminator({}, rng);

  std::vector<FeatureSample> train_set = blobs(0.2, 0, 8, 360);
  auto train_mal = blobs(0.8, 1, 8, 361);
  train_set.insert(train_set.end(), train_mal.begin(), train_mal.end());
  std::vector<FeatureSample> test_set = blobs(0.2, 0, 4, 362);
  auto test_mal = blobs(0.8, 1, 4, 363);
  test_set.insert(test_set.end(), test_mal.begin(), test_mal.end());

  auto outcome = retrain_full(state, DetectorKind::kDT, {}, train_set,
                              test_set, 13);
  EXPECT_EQ(outcome.generated.size(), train_mal.size());
  for (const FeatureSample& s : outcome.generated) EXPECT_EQ(s.label, 1);
  EXPECT_DOUBLE_EQ(outcome.report.bbda_original,
                   bbda(*outcome.original, test_mal));
  EXPECT_DOUBLE_EQ(outcome.report.bbda_trained,
                   bbda(*outcome.retrained, test_mal));
  EXPECT_DOUBLE_EQ(
      outcome.report.signed_change,
      outcome.report.bbda_trained - outcome.report.bbda_original);
  if (outcome.report.bbda_original > 0)
    EXPECT_DOUBLE_EQ(outcome.report.improvement,
                     std::abs(outcome.report.signed_change) /
                         outcome.report.bbda_original);

  // retrain_and_improve is the report-only wrapper.
  auto report = codetensor::retrain_and_improve(state, DetectorKind::kDT, {},
                                                train_set, test_set, 13);
  EXPECT_DOUBLE_EQ(report.bbda_original, outcome.report.bbda_original);
  EXPECT_DOUBLE_EQ(report.bbda_trained, outcome.report.bbda_trained);

  EXPECT_THROW(retrain_full(state, DetectorKind::kDT, {}, train_set, {}, 1),
               NoSamples);
  EXPECT_THROW(retrain_full(state, DetectorKind::kDT, {}, train_set,
                            blobs(0.2, 0, 3, 364), 1),
               NoSamples);
  EXPECT_THROW(retrain_full(state, DetectorKind::kDT, {},
                            blobs(0.2, 0, 3, 365), test_set, 1),
               NoSamples);
}
