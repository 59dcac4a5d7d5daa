#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "codetensor/binio.hpp"
#include "codetensor/errors.hpp"
#include "codetensor/nn.hpp"
#include "codetensor/rng.hpp"
#include "codetensor/tensor.hpp"

namespace codetensor {

/// One compressed sample: a 64x64 feature matrix in [0,1] plus its label.
struct FeatureSample {
  RowMatXd matrix;  // 64x64, entries in [0,1]
  int label = 0;    // 0 benign, 1 malware
  std::string id;
  std::string source;
};

enum class DetectorKind : std::uint8_t {
  kLR = 0,
  kNB = 1,
  kDT = 2,
  kMLP = 3,
  // Declared plugin points (interface only, matching the comparison suite):
  kSVM = 10,
  kRF = 11,
  kAdaBoost = 12,
  kGBDT = 13,
  kAttention = 14,
};

inline DetectorKind detector_kind_from(const std::string& name) {
  if (name == "lr") return DetectorKind::kLR;
  if (name == "nb") return DetectorKind::kNB;
  if (name == "dt") return DetectorKind::kDT;
  if (name == "mlp") return DetectorKind::kMLP;
  if (name == "svm") return DetectorKind::kSVM;
  if (name == "rf") return DetectorKind::kRF;
  if (name == "adaboost") return DetectorKind::kAdaBoost;
  if (name == "gbdt") return DetectorKind::kGBDT;
  if (name == "attention") return DetectorKind::kAttention;
  throw ConfigError("unknown detector kind: " + name);
}

inline std::string detector_kind_name(DetectorKind k) {
  switch (k) {
    case DetectorKind::kLR: return "lr";
    case DetectorKind::kNB: return "nb";
    case DetectorKind::kDT: return "dt";
    case DetectorKind::kMLP: return "mlp";
    case DetectorKind::kSVM: return "svm";
    case DetectorKind::kRF: return "rf";
    case DetectorKind::kAdaBoost: return "adaboost";
    case DetectorKind::kGBDT: return "gbdt";
    case DetectorKind::kAttention: return "attention";
  }
  throw ConfigError("unknown detector kind value");
}

struct DetectorHyper {
  std::size_t pool = 16;      // classical models see pool x pool mean-pooled inputs
  double lr = 0.5;            // LR / MLP learning rate
  std::size_t epochs = 200;   // LR / MLP full-batch epochs
  std::size_t max_depth = 6;  // DT depth
  std::size_t hidden = 32;    // MLP hidden width
  double var_floor = 1e-6;    // NB variance floor
};

/// Mean-pools a 64x64 matrix to p x p and flattens row-major.
inline std::vector<double> pool_features(const RowMatXd& m, std::size_t p) {
  const auto rows = static_cast<std::size_t>(m.rows());
  const auto cols = static_cast<std::size_t>(m.cols());
  if (p == 0 || rows % p != 0 || cols % p != 0)
    throw ConfigError("detector.pool must divide the matrix size");
  const std::size_t bh = rows / p, bw = cols / p;
  std::vector<double> out(p * p, 0.0);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j)
      out[i * p + j] = m.block(static_cast<Eigen::Index>(i * bh),
                               static_cast<Eigen::Index>(j * bw),
                               static_cast<Eigen::Index>(bh),
                               static_cast<Eigen::Index>(bw))
                           .mean();
  return out;
}

/// Fit/predict interface shared by every Black-Bone detector. Predictions
/// are malware probabilities; the classification threshold is 0.5 with ties
/// going to malware.
class Detector {
 public:
  virtual ~Detector() = default;
  virtual DetectorKind kind() const = 0;
  virtual void fit(const std::vector<FeatureSample>& train,
                   const DetectorHyper& hyper, std::uint64_t seed) = 0;
  virtual double predict_proba(const RowMatXd& matrix) const = 0;
  virtual void save_payload(std::ostream& os) const = 0;
  virtual void load_payload(std::istream& is) = 0;

 protected:
  static void check_two_classes(const std::vector<FeatureSample>& train) {
    if (train.empty()) throw NoSamples("empty training set");
    const int first = train.front().label;
    const bool both = std::any_of(
        train.begin(), train.end(),
        [first](const FeatureSample& s) { return s.label != first; });
    if (!both) throw DegenerateLabels("training set has a single class");
  }
  void require_fitted() const {
    if (!fitted_) throw NotFitted("detector used before fit");
  }
  bool fitted_ = false;
};

inline bool predicted_malware(double proba) { return proba >= 0.5; }

/// Logistic regression on pooled features, full-batch gradient descent.
class LogisticDetector : public Detector {
 public:
  DetectorKind kind() const override { return DetectorKind::kLR; }

  void fit(const std::vector<FeatureSample>& train, const DetectorHyper& hyper,
           std::uint64_t) override {
    check_two_classes(train);
    pool_ = hyper.pool;
    const std::size_t dim = pool_ * pool_;
    const std::size_t n = train.size();
    std::vector<std::vector<double>> xs(n);
    for (std::size_t i = 0; i < n; ++i)
      xs[i] = pool_features(train[i].matrix, pool_);
    // Standardize per feature: the raw pooled intensities share a large
    // common offset that otherwise dominates the descent direction and
    // stalls full-batch training.
    mean_.assign(dim, 0.0);
    scale_.assign(dim, 1.0);
    for (std::size_t d = 0; d < dim; ++d) {
      for (std::size_t i = 0; i < n; ++i) mean_[d] += xs[i][d];
      mean_[d] /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double c = xs[i][d] - mean_[d];
        var += c * c;
      }
      var /= static_cast<double>(n);
      scale_[d] = var > 1e-12 ? std::sqrt(var) : 1.0;
      for (std::size_t i = 0; i < n; ++i)
        xs[i][d] = (xs[i][d] - mean_[d]) / scale_[d];
    }
    weights_.assign(dim + 1, 0.0);  // trailing entry is the bias
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
      std::vector<double> grad(dim + 1, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double err = score(xs[i]) - train[i].label;
        for (std::size_t d = 0; d < dim; ++d) grad[d] += err * xs[i][d];
        grad[dim] += err;
      }
      for (std::size_t d = 0; d <= dim; ++d)
        weights_[d] -= hyper.lr * grad[d] / static_cast<double>(n);
    }
    fitted_ = true;
  }

  double predict_proba(const RowMatXd& matrix) const override {
    require_fitted();
    std::vector<double> x = pool_features(matrix, pool_);
    for (std::size_t d = 0; d < x.size(); ++d)
      x[d] = (x[d] - mean_[d]) / scale_[d];
    return score(x);
  }

  /// Linear logit on standardized features, exposed for analytic tests.
  double logit(const std::vector<double>& x) const {
    double z = weights_.back();
    for (std::size_t d = 0; d < x.size(); ++d) z += weights_[d] * x[d];
    return z;
  }

  void save_payload(std::ostream& os) const override {
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(pool_));
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(weights_.size()));
    binio::put_f64s(os, weights_);
    binio::put_f64s(os, mean_);
    binio::put_f64s(os, scale_);
  }

  void load_payload(std::istream& is) override {
    pool_ = binio::get<std::uint32_t>(is);
    weights_ = binio::get_f64s(is, binio::get<std::uint32_t>(is));
    mean_ = binio::get_f64s(is, pool_ * pool_);
    scale_ = binio::get_f64s(is, pool_ * pool_);
    fitted_ = true;
  }

 private:
  double score(const std::vector<double>& x) const {
    return 1.0 / (1.0 + std::exp(-logit(x)));
  }

  std::size_t pool_ = 16;
  std::vector<double> weights_;
  std::vector<double> mean_;
  std::vector<double> scale_;
};

/// Gaussian naive Bayes on pooled features.
class NaiveBayesDetector : public Detector {
 public:
  DetectorKind kind() const override { return DetectorKind::kNB; }

  void fit(const std::vector<FeatureSample>& train, const DetectorHyper& hyper,
           std::uint64_t) override {
    check_two_classes(train);
    pool_ = hyper.pool;
    const std::size_t dim = pool_ * pool_;
    for (int c = 0; c < 2; ++c) {
      mean_[c].assign(dim, 0.0);
      var_[c].assign(dim, 0.0);
      count_[c] = 0;
    }
    std::vector<std::vector<double>> xs(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
      xs[i] = pool_features(train[i].matrix, pool_);
      const int c = train[i].label;
      ++count_[c];
      for (std::size_t d = 0; d < dim; ++d) mean_[c][d] += xs[i][d];
    }
    for (int c = 0; c < 2; ++c)
      for (std::size_t d = 0; d < dim; ++d)
        mean_[c][d] /= static_cast<double>(count_[c]);
    for (std::size_t i = 0; i < train.size(); ++i) {
      const int c = train[i].label;
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = xs[i][d] - mean_[c][d];
        var_[c][d] += diff * diff;
      }
    }
    for (int c = 0; c < 2; ++c)
      for (std::size_t d = 0; d < dim; ++d)
        var_[c][d] =
            std::max(var_[c][d] / static_cast<double>(count_[c]),
                     hyper.var_floor);
    fitted_ = true;
  }

  double predict_proba(const RowMatXd& matrix) const override {
    require_fitted();
    const auto x = pool_features(matrix, pool_);
    double lp[2];
    const double total = static_cast<double>(count_[0] + count_[1]);
    for (int c = 0; c < 2; ++c) {
      lp[c] = std::log(static_cast<double>(count_[c]) / total);
      for (std::size_t d = 0; d < x.size(); ++d) {
        const double diff = x[d] - mean_[c][d];
        lp[c] += -0.5 * std::log(2.0 * std::numbers::pi * var_[c][d]) -
                 diff * diff / (2.0 * var_[c][d]);
      }
    }
    const double mx = std::max(lp[0], lp[1]);
    const double e0 = std::exp(lp[0] - mx), e1 = std::exp(lp[1] - mx);
    return e1 / (e0 + e1);
  }

  void save_payload(std::ostream& os) const override {
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(pool_));
    for (int c = 0; c < 2; ++c) {
      binio::put<std::uint64_t>(os, count_[c]);
      binio::put_f64s(os, mean_[c]);
      binio::put_f64s(os, var_[c]);
    }
  }

  void load_payload(std::istream& is) override {
    pool_ = binio::get<std::uint32_t>(is);
    const std::size_t dim = pool_ * pool_;
    for (int c = 0; c < 2; ++c) {
      count_[c] = binio::get<std::uint64_t>(is);
      mean_[c] = binio::get_f64s(is, dim);
      var_[c] = binio::get_f64s(is, dim);
    }
    fitted_ = true;
  }

 private:
  std::size_t pool_ = 16;
  std::vector<double> mean_[2], var_[2];
  std::uint64_t count_[2] = {0, 0};
};

/// CART decision tree (Gini impurity, midpoint thresholds, deterministic
/// tie-breaks: lowest feature index, then lowest threshold).
class TreeDetector : public Detector {
 public:
  struct Node {
    bool leaf = true;
    std::uint32_t feature = 0;
    double threshold = 0.0;
    std::uint32_t left = 0, right = 0;
    double proba = 0.0;  // malware fraction at the leaf
  };

  DetectorKind kind() const override { return DetectorKind::kDT; }

  void fit(const std::vector<FeatureSample>& train, const DetectorHyper& hyper,
           std::uint64_t) override {
    check_two_classes(train);
    pool_ = hyper.pool;
    nodes_.clear();
    std::vector<std::vector<double>> xs(train.size());
    std::vector<int> ys(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
      xs[i] = pool_features(train[i].matrix, pool_);
      ys[i] = train[i].label;
    }
    std::vector<std::size_t> all(train.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    grow(xs, ys, all, 0, hyper.max_depth);
    fitted_ = true;
  }

  double predict_proba(const RowMatXd& matrix) const override {
    require_fitted();
    const auto x = pool_features(matrix, pool_);
    std::size_t at = 0;
    while (!nodes_[at].leaf)
      at = x[nodes_[at].feature] < nodes_[at].threshold ? nodes_[at].left
                                                        : nodes_[at].right;
    return nodes_[at].proba;
  }

  const std::vector<Node>& nodes() const { return nodes_; }

  void save_payload(std::ostream& os) const override {
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(pool_));
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(nodes_.size()));
    for (const Node& n : nodes_) {
      binio::put<std::uint8_t>(os, n.leaf ? 1 : 0);
      binio::put<std::uint32_t>(os, n.feature);
      binio::put<double>(os, n.threshold);
      binio::put<std::uint32_t>(os, n.left);
      binio::put<std::uint32_t>(os, n.right);
      binio::put<double>(os, n.proba);
    }
  }

  void load_payload(std::istream& is) override {
    pool_ = binio::get<std::uint32_t>(is);
    nodes_.resize(binio::get<std::uint32_t>(is));
    for (Node& n : nodes_) {
      n.leaf = binio::get<std::uint8_t>(is) != 0;
      n.feature = binio::get<std::uint32_t>(is);
      n.threshold = binio::get<double>(is);
      n.left = binio::get<std::uint32_t>(is);
      n.right = binio::get<std::uint32_t>(is);
      n.proba = binio::get<double>(is);
    }
    fitted_ = true;
  }

 private:
  static double gini(std::size_t pos, std::size_t total) {
    if (total == 0) return 0.0;
    const double p = static_cast<double>(pos) / static_cast<double>(total);
    return 2.0 * p * (1.0 - p);
  }

  std::uint32_t grow(const std::vector<std::vector<double>>& xs,
                     const std::vector<int>& ys,
                     const std::vector<std::size_t>& idx, std::size_t depth,
                     std::size_t max_depth) {
    const auto node_id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.emplace_back();
    std::size_t pos = 0;
    for (std::size_t i : idx) pos += static_cast<std::size_t>(ys[i]);
    nodes_[node_id].proba =
        static_cast<double>(pos) / static_cast<double>(idx.size());
    if (depth >= max_depth || pos == 0 || pos == idx.size()) return node_id;

    const double parent = gini(pos, idx.size());
    double best_score = parent - 1e-12;
    std::size_t best_feat = 0;
    double best_thr = 0.0;
    bool found = false;
    const std::size_t dim = xs[idx[0]].size();
    std::vector<std::pair<double, int>> sorted(idx.size());
    for (std::size_t f = 0; f < dim; ++f) {
      for (std::size_t i = 0; i < idx.size(); ++i)
        sorted[i] = {xs[idx[i]][f], ys[idx[i]]};
      std::sort(sorted.begin(), sorted.end());
      std::size_t left_pos = 0;
      for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        left_pos += static_cast<std::size_t>(sorted[i].second);
        if (sorted[i].first == sorted[i + 1].first) continue;
        const std::size_t nl = i + 1, nr = sorted.size() - nl;
        const double score =
            (static_cast<double>(nl) * gini(left_pos, nl) +
             static_cast<double>(nr) * gini(pos - left_pos, nr)) /
            static_cast<double>(sorted.size());
        // Scanning features then thresholds in ascending order makes the
        // first strict improvement the deterministic tie-break winner
        // (lowest feature index, then lowest threshold).
        if (score < best_score - 1e-12) {
          best_score = score;
          best_feat = f;
          best_thr = (sorted[i].first + sorted[i + 1].first) / 2.0;
          found = true;
        }
      }
    }
    if (!found) return node_id;

    std::vector<std::size_t> li, ri;
    for (std::size_t i : idx)
      (xs[i][best_feat] < best_thr ? li : ri).push_back(i);
    nodes_[node_id].leaf = false;
    nodes_[node_id].feature = static_cast<std::uint32_t>(best_feat);
    nodes_[node_id].threshold = best_thr;
    const auto l = grow(xs, ys, li, depth + 1, max_depth);
    const auto r = grow(xs, ys, ri, depth + 1, max_depth);
    nodes_[node_id].left = l;
    nodes_[node_id].right = r;
    return node_id;
  }

  std::size_t pool_ = 16;
  std::vector<Node> nodes_;
};

/// Batch conversion helper shared by the MLP detector and the GAN trainer.
inline nn::Tensor4 matrices_to_batch(
    const std::vector<const RowMatXd*>& mats) {
  if (mats.empty()) throw NoSamples("empty batch");
  const auto h = static_cast<std::size_t>(mats.front()->rows());
  const auto w = static_cast<std::size_t>(mats.front()->cols());
  nn::Tensor4 batch(mats.size(), 1, h, w);
  for (std::size_t i = 0; i < mats.size(); ++i) {
    if (static_cast<std::size_t>(mats[i]->rows()) != h ||
        static_cast<std::size_t>(mats[i]->cols()) != w)
      throw ShapeError("batch matrices disagree in shape");
    Eigen::Map<RowMatXd>(batch.sample(i), mats[i]->rows(), mats[i]->cols()) =
        *mats[i];
  }
  return batch;
}

/// Small dense network on the neural module; consumes the full 64x64 matrix.
class MlpDetector : public Detector {
 public:
  DetectorKind kind() const override { return DetectorKind::kMLP; }

  void fit(const std::vector<FeatureSample>& train, const DetectorHyper& hyper,
           std::uint64_t seed) override {
    check_two_classes(train);
    hidden_ = hyper.hidden;
    build(seed);
    std::vector<const RowMatXd*> mats(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) mats[i] = &train[i].matrix;
    const nn::Tensor4 batch = matrices_to_batch(mats);
    const double n = static_cast<double>(train.size());
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
      net_.zero_grads();
      nn::Tensor4 out = net_.forward(batch, true);
      nn::Tensor4 gy(out.n, out.shape());
      for (std::size_t i = 0; i < train.size(); ++i) {
        const double p = std::clamp(out.v[i], 1e-12, 1.0 - 1e-12);
        // d/dp of mean BCE: (p - y) / (p (1-p) n)
        gy.v[i] = (p - train[i].label) / (p * (1.0 - p) * n);
      }
      net_.backward(gy);
      nn::sgd_step(net_, hyper.lr, nn::StepDir::kDescend);
    }
    fitted_ = true;
  }

  double predict_proba(const RowMatXd& matrix) const override {
    require_fitted();
    std::vector<const RowMatXd*> mats{&matrix};
    nn::Tensor4 out = net_.forward(matrices_to_batch(mats), false);
    return out.v[0];
  }

  void save_payload(std::ostream& os) const override {
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(hidden_));
    net_.save_params(os);
  }

  void load_payload(std::istream& is) override {
    hidden_ = binio::get<std::uint32_t>(is);
    build(0);
    net_.load_params(is);
    fitted_ = true;
  }

 private:
  void build(std::uint64_t seed) {
    Rng rng(seed ^ 0x6d6c70);  // detector-local stream
    net_ = nn::Network();
    net_.add(std::make_unique<nn::Flatten>());
    net_.add(std::make_unique<nn::Dense>(64 * 64, hidden_, rng));
    net_.add(std::make_unique<nn::ReLU>());
    net_.add(std::make_unique<nn::Dense>(hidden_, 1, rng));
    net_.add(std::make_unique<nn::Sigmoid>());
    net_.build({1, 64, 64});
  }

  std::size_t hidden_ = 32;
  mutable nn::Network net_;  // forward() refreshes caches even in inference
};

inline std::unique_ptr<Detector> make_detector(DetectorKind kind) {
  switch (kind) {
    case DetectorKind::kLR: return std::make_unique<LogisticDetector>();
    case DetectorKind::kNB: return std::make_unique<NaiveBayesDetector>();
    case DetectorKind::kDT: return std::make_unique<TreeDetector>();
    case DetectorKind::kMLP: return std::make_unique<MlpDetector>();
    default:
      throw ConfigError("detector kind '" + detector_kind_name(kind) +
                        "' is a declared plugin point without an implementation");
  }
}

inline void save_detector(const Detector& model, const std::string& path) {
  auto os = binio::open_out(path);
  os.write("CMDL", 4);
  binio::put<std::uint8_t>(os, static_cast<std::uint8_t>(model.kind()));
  model.save_payload(os);
}

inline std::unique_ptr<Detector> load_detector(const std::string& path) {
  auto is = binio::open_in(path);
  binio::expect_magic(is, "CMDL");
  const auto kind = static_cast<DetectorKind>(binio::get<std::uint8_t>(is));
  auto model = make_detector(kind);
  model->load_payload(is);
  if (!is) throw FormatError("truncated model file: " + path);
  return model;
}

/// Black-Bone detection accuracy: recall on a malware-only sample list.
inline double bbda(const Detector& model,
                   const std::vector<FeatureSample>& malware) {
  if (malware.empty()) throw NoSamples("bbda needs at least one sample");
  std::size_t hit = 0;
  for (const FeatureSample& s : malware)
    if (predicted_malware(model.predict_proba(s.matrix))) ++hit;
  return static_cast<double>(hit) / static_cast<double>(malware.size());
}

/// Plain accuracy over a mixed-label sample list (threshold 0.5).
inline double accuracy(const Detector& model,
                       const std::vector<FeatureSample>& samples) {
  if (samples.empty()) throw NoSamples("accuracy needs at least one sample");
  std::size_t hit = 0;
  for (const FeatureSample& s : samples) {
    const int pred = predicted_malware(model.predict_proba(s.matrix)) ? 1 : 0;
    if (pred == s.label) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(samples.size());
}

}  // namespace codetensor
