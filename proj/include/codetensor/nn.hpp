#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "codetensor/binio.hpp"
#include "codetensor/errors.hpp"
#include "codetensor/rng.hpp"
#include "codetensor/tensor.hpp"  // RowMatXd

namespace codetensor::nn {

struct Shape {
  std::size_t c = 0, h = 0, w = 0;
  std::size_t numel() const { return c * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const {
    return std::to_string(h) + "x" + std::to_string(w) + "x" +
           std::to_string(c);
  }
};

/// Dense activation batch, layout (n, c, h, w) row-major.
struct Tensor4 {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor4() = default;
  Tensor4(std::size_t n_, Shape s)
      : n(n_), c(s.c), h(s.h), w(s.w), v(n_ * s.numel(), 0.0) {}
  Tensor4(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_)
      : n(n_), c(c_), h(h_), w(w_), v(n_ * c_ * h_ * w_, 0.0) {}

  Shape shape() const { return {c, h, w}; }
  std::size_t sample_size() const { return c * h * w; }
  double* sample(std::size_t i) { return v.data() + i * sample_size(); }
  const double* sample(std::size_t i) const {
    return v.data() + i * sample_size();
  }
  double at(std::size_t in, std::size_t ic, std::size_t ih,
            std::size_t iw) const {
    return v[((in * c + ic) * h + ih) * w + iw];
  }
  double& at(std::size_t in, std::size_t ic, std::size_t ih, std::size_t iw) {
    return v[((in * c + ic) * h + ih) * w + iw];
  }
};

struct Param {
  std::string name;
  std::vector<double> w;
  std::vector<double> g;  // same length as w
  bool trainable = true;

  void zero_grad() { std::fill(g.begin(), g.end(), 0.0); }
};

enum class PadMode : std::uint8_t { kZero = 0, kReflect = 1 };

class Layer {
 public:
  virtual ~Layer() = default;
  virtual const char* kind() const = 0;
  /// Computes (and validates) the output shape for the given input shape.
  virtual Shape infer(Shape in) const = 0;
  virtual Tensor4 forward(const Tensor4& x, bool train) = 0;
  virtual Tensor4 backward(const Tensor4& gy) = 0;
  virtual std::vector<Param*> params() { return {}; }
  /// Audit rows: (kind, output shape) per atomic sub-layer.
  virtual void audit(Shape in,
                     std::vector<std::pair<std::string, Shape>>& rows) const {
    rows.emplace_back(kind(), infer(in));
  }
};

namespace detail {

inline std::size_t reflect_index(long t, std::size_t extent) {
  const long e = static_cast<long>(extent);
  if (t < 0) t = -t;
  if (t >= e) t = 2 * e - 2 - t;
  return static_cast<std::size_t>(t);
}

inline void he_uniform(std::vector<double>& w, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& x : w) x = rng.uniform(-limit, limit);
}

}  // namespace detail

/// Symmetric spatial padding by `p` pixels per side (zero or reflect).
class Pad2d : public Layer {
 public:
  Pad2d(std::size_t p, PadMode mode = PadMode::kZero) : p_(p), mode_(mode) {}
  const char* kind() const override { return "pad"; }

  Shape infer(Shape in) const override {
    if (mode_ == PadMode::kReflect && (in.h <= p_ || in.w <= p_))
      throw BuildError("reflect pad wider than input");
    return {in.c, in.h + 2 * p_, in.w + 2 * p_};
  }

  Tensor4 forward(const Tensor4& x, bool) override {
    in_shape_ = x.shape();
    Tensor4 y(x.n, infer(in_shape_));
    for (std::size_t n = 0; n < x.n; ++n)
      for (std::size_t c = 0; c < x.c; ++c)
        for (std::size_t ih = 0; ih < y.h; ++ih)
          for (std::size_t iw = 0; iw < y.w; ++iw) {
            const long sh = static_cast<long>(ih) - static_cast<long>(p_);
            const long sw = static_cast<long>(iw) - static_cast<long>(p_);
            if (mode_ == PadMode::kZero) {
              if (sh < 0 || sw < 0 || sh >= static_cast<long>(x.h) ||
                  sw >= static_cast<long>(x.w))
                continue;
              y.at(n, c, ih, iw) = x.at(n, c, static_cast<std::size_t>(sh),
                                        static_cast<std::size_t>(sw));
            } else {
              y.at(n, c, ih, iw) = x.at(n, c, detail::reflect_index(sh, x.h),
                                        detail::reflect_index(sw, x.w));
            }
          }
    return y;
  }

  Tensor4 backward(const Tensor4& gy) override {
    Tensor4 gx(gy.n, in_shape_);
    for (std::size_t n = 0; n < gy.n; ++n)
      for (std::size_t c = 0; c < gy.c; ++c)
        for (std::size_t ih = 0; ih < gy.h; ++ih)
          for (std::size_t iw = 0; iw < gy.w; ++iw) {
            const long sh = static_cast<long>(ih) - static_cast<long>(p_);
            const long sw = static_cast<long>(iw) - static_cast<long>(p_);
            if (mode_ == PadMode::kZero) {
              if (sh < 0 || sw < 0 || sh >= static_cast<long>(gx.h) ||
                  sw >= static_cast<long>(gx.w))
                continue;
              gx.at(n, c, static_cast<std::size_t>(sh),
                    static_cast<std::size_t>(sw)) += gy.at(n, c, ih, iw);
            } else {
              gx.at(n, c, detail::reflect_index(sh, gx.h),
                    detail::reflect_index(sw, gx.w)) += gy.at(n, c, ih, iw);
            }
          }
    return gx;
  }

 private:
  std::size_t p_;
  PadMode mode_;
  Shape in_shape_;
};

/// 2-D convolution with a square kernel; `pad_lo`/`pad_hi` apply to both
/// spatial axes and may be negative (negative padding crops the input before
/// convolving, which is how the 70x70 padded discriminator input meets its
/// declared 32x32 output).
class Conv2d : public Layer {
 public:
  Conv2d(std::size_t in_c, std::size_t out_c, std::size_t k,
         std::size_t stride, int pad_lo, int pad_hi, Rng& rng)
      : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_lo_(pad_lo),
        pad_hi_(pad_hi) {
    weight_.name = "conv.w";
    weight_.w.resize(out_c * in_c * k * k);
    weight_.g.assign(weight_.w.size(), 0.0);
    detail::he_uniform(weight_.w, in_c * k * k, rng);
    bias_.name = "conv.b";
    bias_.w.assign(out_c, 0.0);
    bias_.g.assign(out_c, 0.0);
  }

  const char* kind() const override { return "conv"; }

  Shape infer(Shape in) const override {
    if (in.c != in_c_) throw BuildError("conv input channel mismatch");
    const long eh = static_cast<long>(in.h) + pad_lo_ + pad_hi_ -
                    static_cast<long>(k_);
    const long ew = static_cast<long>(in.w) + pad_lo_ + pad_hi_ -
                    static_cast<long>(k_);
    if (eh < 0 || ew < 0) throw BuildError("conv kernel larger than input");
    return {out_c_, static_cast<std::size_t>(eh) / stride_ + 1,
            static_cast<std::size_t>(ew) / stride_ + 1};
  }

  Tensor4 forward(const Tensor4& x, bool) override {
    if (x.c != in_c_) throw ShapeError("conv input channel mismatch");
    x_ = x;
    const Shape os = infer(x.shape());
    Tensor4 y(x.n, os);
    const std::size_t kdim = in_c_ * k_ * k_;
    const std::size_t cols = os.h * os.w;
    Eigen::Map<const RowMatXd> wmat(weight_.w.data(),
                                    static_cast<Eigen::Index>(out_c_),
                                    static_cast<Eigen::Index>(kdim));
    RowMatXd col(kdim, cols);
    for (std::size_t n = 0; n < x.n; ++n) {
      im2col(x, n, os, col);
      Eigen::Map<RowMatXd> ymat(y.sample(n),
                                static_cast<Eigen::Index>(out_c_),
                                static_cast<Eigen::Index>(cols));
      ymat.noalias() = wmat * col;
      for (std::size_t oc = 0; oc < out_c_; ++oc)
        ymat.row(static_cast<Eigen::Index>(oc)).array() += bias_.w[oc];
    }
    return y;
  }

  Tensor4 backward(const Tensor4& gy) override {
    const Shape os = gy.shape();
    Tensor4 gx(x_.n, x_.shape());
    const std::size_t kdim = in_c_ * k_ * k_;
    const std::size_t cols = os.h * os.w;
    Eigen::Map<const RowMatXd> wmat(weight_.w.data(),
                                    static_cast<Eigen::Index>(out_c_),
                                    static_cast<Eigen::Index>(kdim));
    Eigen::Map<RowMatXd> gwmat(weight_.g.data(),
                               static_cast<Eigen::Index>(out_c_),
                               static_cast<Eigen::Index>(kdim));
    RowMatXd col(kdim, cols);
    RowMatXd gcol(kdim, cols);
    for (std::size_t n = 0; n < gy.n; ++n) {
      im2col(x_, n, os, col);
      Eigen::Map<const RowMatXd> gymat(gy.sample(n),
                                       static_cast<Eigen::Index>(out_c_),
                                       static_cast<Eigen::Index>(cols));
      gwmat.noalias() += gymat * col.transpose();
      for (std::size_t oc = 0; oc < out_c_; ++oc)
        bias_.g[oc] += gymat.row(static_cast<Eigen::Index>(oc)).sum();
      gcol.noalias() = wmat.transpose() * gymat;
      col2im(gcol, n, os, gx);
    }
    return gx;
  }

  std::vector<Param*> params() override { return {&weight_, &bias_}; }

 private:
  void im2col(const Tensor4& x, std::size_t n, Shape os, RowMatXd& col) const {
    col.setZero();
    for (std::size_t c = 0; c < in_c_; ++c)
      for (std::size_t ki = 0; ki < k_; ++ki)
        for (std::size_t kj = 0; kj < k_; ++kj) {
          const std::size_t row = (c * k_ + ki) * k_ + kj;
          for (std::size_t oh = 0; oh < os.h; ++oh) {
            const long ih = static_cast<long>(oh * stride_) - pad_lo_ +
                            static_cast<long>(ki);
            if (ih < 0 || ih >= static_cast<long>(x.h)) continue;
            for (std::size_t ow = 0; ow < os.w; ++ow) {
              const long iw = static_cast<long>(ow * stride_) - pad_lo_ +
                              static_cast<long>(kj);
              if (iw < 0 || iw >= static_cast<long>(x.w)) continue;
              col(static_cast<Eigen::Index>(row),
                  static_cast<Eigen::Index>(oh * os.w + ow)) =
                  x.at(n, c, static_cast<std::size_t>(ih),
                       static_cast<std::size_t>(iw));
            }
          }
        }
  }

  void col2im(const RowMatXd& gcol, std::size_t n, Shape os,
              Tensor4& gx) const {
    for (std::size_t c = 0; c < in_c_; ++c)
      for (std::size_t ki = 0; ki < k_; ++ki)
        for (std::size_t kj = 0; kj < k_; ++kj) {
          const std::size_t row = (c * k_ + ki) * k_ + kj;
          for (std::size_t oh = 0; oh < os.h; ++oh) {
            const long ih = static_cast<long>(oh * stride_) - pad_lo_ +
                            static_cast<long>(ki);
            if (ih < 0 || ih >= static_cast<long>(gx.h)) continue;
            for (std::size_t ow = 0; ow < os.w; ++ow) {
              const long iw = static_cast<long>(ow * stride_) - pad_lo_ +
                              static_cast<long>(kj);
              if (iw < 0 || iw >= static_cast<long>(gx.w)) continue;
              gx.at(n, c, static_cast<std::size_t>(ih),
                    static_cast<std::size_t>(iw)) +=
                  gcol(static_cast<Eigen::Index>(row),
                       static_cast<Eigen::Index>(oh * os.w + ow));
            }
          }
        }
  }

  std::size_t in_c_, out_c_, k_, stride_;
  int pad_lo_, pad_hi_;
  Param weight_, bias_;
  Tensor4 x_;
};

/// Batch normalization over (n, h, w) per channel; biased batch variance,
/// eps 1e-5, running-stat momentum 0.1.
class BatchNorm2d : public Layer {
 public:
  explicit BatchNorm2d(std::size_t c) : c_(c) {
    gamma_.name = "bn.gamma";
    gamma_.w.assign(c, 1.0);
    gamma_.g.assign(c, 0.0);
    beta_.name = "bn.beta";
    beta_.w.assign(c, 0.0);
    beta_.g.assign(c, 0.0);
    run_mean_.name = "bn.running_mean";
    run_mean_.w.assign(c, 0.0);
    run_mean_.g.assign(c, 0.0);
    run_mean_.trainable = false;
    run_var_.name = "bn.running_var";
    run_var_.w.assign(c, 1.0);
    run_var_.g.assign(c, 0.0);
    run_var_.trainable = false;
  }

  const char* kind() const override { return "batchnorm"; }

  Shape infer(Shape in) const override {
    if (in.c != c_) throw BuildError("batchnorm channel mismatch");
    return in;
  }

  Tensor4 forward(const Tensor4& x, bool train) override {
    if (x.c != c_) throw ShapeError("batchnorm channel mismatch");
    train_ = train;
    const std::size_t m = x.n * x.h * x.w;
    count_ = m;
    inv_std_.assign(c_, 0.0);
    xhat_ = Tensor4(x.n, x.shape());
    Tensor4 y(x.n, x.shape());
    for (std::size_t c = 0; c < c_; ++c) {
      double mean, var;
      if (train) {
        double s = 0.0;
        for (std::size_t n = 0; n < x.n; ++n)
          for (std::size_t ih = 0; ih < x.h; ++ih)
            for (std::size_t iw = 0; iw < x.w; ++iw)
              s += x.at(n, c, ih, iw);
        mean = s / static_cast<double>(m);
        double v2 = 0.0;
        for (std::size_t n = 0; n < x.n; ++n)
          for (std::size_t ih = 0; ih < x.h; ++ih)
            for (std::size_t iw = 0; iw < x.w; ++iw) {
              const double d = x.at(n, c, ih, iw) - mean;
              v2 += d * d;
            }
        var = v2 / static_cast<double>(m);
        run_mean_.w[c] = (1.0 - kMomentum) * run_mean_.w[c] + kMomentum * mean;
        run_var_.w[c] = (1.0 - kMomentum) * run_var_.w[c] + kMomentum * var;
      } else {
        mean = run_mean_.w[c];
        var = run_var_.w[c];
      }
      const double inv = 1.0 / std::sqrt(var + kEps);
      inv_std_[c] = inv;
      for (std::size_t n = 0; n < x.n; ++n)
        for (std::size_t ih = 0; ih < x.h; ++ih)
          for (std::size_t iw = 0; iw < x.w; ++iw) {
            const double xh = (x.at(n, c, ih, iw) - mean) * inv;
            xhat_.at(n, c, ih, iw) = xh;
            y.at(n, c, ih, iw) = gamma_.w[c] * xh + beta_.w[c];
          }
    }
    return y;
  }

  Tensor4 backward(const Tensor4& gy) override {
    Tensor4 gx(gy.n, gy.shape());
    const double m = static_cast<double>(count_);
    for (std::size_t c = 0; c < c_; ++c) {
      double sum_gy = 0.0, sum_gy_xh = 0.0;
      for (std::size_t n = 0; n < gy.n; ++n)
        for (std::size_t ih = 0; ih < gy.h; ++ih)
          for (std::size_t iw = 0; iw < gy.w; ++iw) {
            const double g = gy.at(n, c, ih, iw);
            sum_gy += g;
            sum_gy_xh += g * xhat_.at(n, c, ih, iw);
          }
      gamma_.g[c] += sum_gy_xh;
      beta_.g[c] += sum_gy;
      const double scale = gamma_.w[c] * inv_std_[c];
      for (std::size_t n = 0; n < gy.n; ++n)
        for (std::size_t ih = 0; ih < gy.h; ++ih)
          for (std::size_t iw = 0; iw < gy.w; ++iw) {
            const double g = gy.at(n, c, ih, iw);
            if (train_) {
              gx.at(n, c, ih, iw) =
                  scale * (g - sum_gy / m -
                           xhat_.at(n, c, ih, iw) * sum_gy_xh / m);
            } else {
              gx.at(n, c, ih, iw) = scale * g;
            }
          }
    }
    return gx;
  }

  std::vector<Param*> params() override {
    return {&gamma_, &beta_, &run_mean_, &run_var_};
  }

  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

 private:
  std::size_t c_;
  Param gamma_, beta_, run_mean_, run_var_;
  Tensor4 xhat_;
  std::vector<double> inv_std_;
  std::size_t count_ = 1;
  bool train_ = true;
};

class LeakyReLU : public Layer {
 public:
  explicit LeakyReLU(double slope = 0.2) : slope_(slope) {}
  const char* kind() const override { return "leakyrelu"; }
  Shape infer(Shape in) const override { return in; }

  Tensor4 forward(const Tensor4& x, bool) override {
    x_ = x;
    Tensor4 y = x;
    for (double& v : y.v)
      if (v < 0.0) v *= slope_;
    return y;
  }

  Tensor4 backward(const Tensor4& gy) override {
    Tensor4 gx = gy;
    for (std::size_t i = 0; i < gx.v.size(); ++i)
      if (x_.v[i] <= 0.0) gx.v[i] *= slope_;
    return gx;
  }

 private:
  double slope_;
  Tensor4 x_;
};

class ReLU : public Layer {
 public:
  const char* kind() const override { return "relu"; }
  Shape infer(Shape in) const override { return in; }

  Tensor4 forward(const Tensor4& x, bool) override {
    x_ = x;
    Tensor4 y = x;
    for (double& v : y.v) v = std::max(v, 0.0);
    return y;
  }

  Tensor4 backward(const Tensor4& gy) override {
    Tensor4 gx = gy;
    for (std::size_t i = 0; i < gx.v.size(); ++i)
      if (x_.v[i] <= 0.0) gx.v[i] = 0.0;
    return gx;
  }

 private:
  Tensor4 x_;
};

class Sigmoid : public Layer {
 public:
  const char* kind() const override { return "sigmoid"; }
  Shape infer(Shape in) const override { return in; }

  Tensor4 forward(const Tensor4& x, bool) override {
    y_ = x;
    for (double& v : y_.v) v = 1.0 / (1.0 + std::exp(-v));
    return y_;
  }

  Tensor4 backward(const Tensor4& gy) override {
    Tensor4 gx = gy;
    for (std::size_t i = 0; i < gx.v.size(); ++i)
      gx.v[i] *= y_.v[i] * (1.0 - y_.v[i]);
    return gx;
  }

 private:
  Tensor4 y_;
};

class Flatten : public Layer {
 public:
  const char* kind() const override { return "flatten"; }
  Shape infer(Shape in) const override { return {in.numel(), 1, 1}; }

  Tensor4 forward(const Tensor4& x, bool) override {
    in_shape_ = x.shape();
    Tensor4 y = x;
    y.c = x.sample_size();
    y.h = y.w = 1;
    return y;
  }

  Tensor4 backward(const Tensor4& gy) override {
    Tensor4 gx = gy;
    gx.c = in_shape_.c;
    gx.h = in_shape_.h;
    gx.w = in_shape_.w;
    return gx;
  }

 private:
  Shape in_shape_;
};

class Dense : public Layer {
 public:
  Dense(std::size_t in_dim, std::size_t out_dim, Rng& rng)
      : in_dim_(in_dim), out_dim_(out_dim) {
    weight_.name = "dense.w";
    weight_.w.resize(out_dim * in_dim);
    weight_.g.assign(weight_.w.size(), 0.0);
    detail::he_uniform(weight_.w, in_dim, rng);
    bias_.name = "dense.b";
    bias_.w.assign(out_dim, 0.0);
    bias_.g.assign(out_dim, 0.0);
  }

  const char* kind() const override { return "dense"; }

  Shape infer(Shape in) const override {
    if (in.numel() != in_dim_) throw BuildError("dense input size mismatch");
    return {out_dim_, 1, 1};
  }

  Tensor4 forward(const Tensor4& x, bool) override {
    if (x.sample_size() != in_dim_)
      throw ShapeError("dense input size mismatch");
    x_ = x;
    Tensor4 y(x.n, {out_dim_, 1, 1});
    Eigen::Map<const RowMatXd> xm(x.v.data(), static_cast<Eigen::Index>(x.n),
                                  static_cast<Eigen::Index>(in_dim_));
    Eigen::Map<const RowMatXd> wm(weight_.w.data(),
                                  static_cast<Eigen::Index>(out_dim_),
                                  static_cast<Eigen::Index>(in_dim_));
    Eigen::Map<RowMatXd> ym(y.v.data(), static_cast<Eigen::Index>(x.n),
                            static_cast<Eigen::Index>(out_dim_));
    ym.noalias() = xm * wm.transpose();
    for (std::size_t o = 0; o < out_dim_; ++o)
      ym.col(static_cast<Eigen::Index>(o)).array() += bias_.w[o];
    return y;
  }

  Tensor4 backward(const Tensor4& gy) override {
    Tensor4 gx(x_.n, x_.shape());
    Eigen::Map<const RowMatXd> gym(gy.v.data(),
                                   static_cast<Eigen::Index>(gy.n),
                                   static_cast<Eigen::Index>(out_dim_));
    Eigen::Map<const RowMatXd> xm(x_.v.data(),
                                  static_cast<Eigen::Index>(x_.n),
                                  static_cast<Eigen::Index>(in_dim_));
    Eigen::Map<const RowMatXd> wm(weight_.w.data(),
                                  static_cast<Eigen::Index>(out_dim_),
                                  static_cast<Eigen::Index>(in_dim_));
    Eigen::Map<RowMatXd> gwm(weight_.g.data(),
                             static_cast<Eigen::Index>(out_dim_),
                             static_cast<Eigen::Index>(in_dim_));
    gwm.noalias() += gym.transpose() * xm;
    for (std::size_t o = 0; o < out_dim_; ++o)
      bias_.g[o] += gym.col(static_cast<Eigen::Index>(o)).sum();
    Eigen::Map<RowMatXd> gxm(gx.v.data(), static_cast<Eigen::Index>(gx.n),
                             static_cast<Eigen::Index>(in_dim_));
    gxm.noalias() = gym * wm;
    return gx;
  }

  std::vector<Param*> params() override { return {&weight_, &bias_}; }

 private:
  std::size_t in_dim_, out_dim_;
  Param weight_, bias_;
  Tensor4 x_;
};

/// Nearest-neighbor 2x spatial upsampling.
class Upsample2x : public Layer {
 public:
  const char* kind() const override { return "upsample"; }
  Shape infer(Shape in) const override { return {in.c, in.h * 2, in.w * 2}; }

  Tensor4 forward(const Tensor4& x, bool) override {
    in_shape_ = x.shape();
    Tensor4 y(x.n, infer(in_shape_));
    for (std::size_t n = 0; n < x.n; ++n)
      for (std::size_t c = 0; c < x.c; ++c)
        for (std::size_t ih = 0; ih < y.h; ++ih)
          for (std::size_t iw = 0; iw < y.w; ++iw)
            y.at(n, c, ih, iw) = x.at(n, c, ih / 2, iw / 2);
    return y;
  }

  Tensor4 backward(const Tensor4& gy) override {
    Tensor4 gx(gy.n, in_shape_);
    for (std::size_t n = 0; n < gy.n; ++n)
      for (std::size_t c = 0; c < gy.c; ++c)
        for (std::size_t ih = 0; ih < gy.h; ++ih)
          for (std::size_t iw = 0; iw < gy.w; ++iw)
            gx.at(n, c, ih / 2, iw / 2) += gy.at(n, c, ih, iw);
    return gx;
  }

 private:
  Shape in_shape_;
};

/// Elementwise clamp to [0,1] (the generator's final "Lambda" row).
class Clamp01 : public Layer {
 public:
  const char* kind() const override { return "clamp"; }
  Shape infer(Shape in) const override { return in; }

  Tensor4 forward(const Tensor4& x, bool) override {
    x_ = x;
    Tensor4 y = x;
    for (double& v : y.v) v = std::clamp(v, 0.0, 1.0);
    return y;
  }

  Tensor4 backward(const Tensor4& gy) override {
    Tensor4 gx = gy;
    for (std::size_t i = 0; i < gx.v.size(); ++i)
      if (x_.v[i] <= 0.0 || x_.v[i] >= 1.0) gx.v[i] = 0.0;
    return gx;
  }

 private:
  Tensor4 x_;
};

/// Adds the network input (skip connection from the very first layer); the
/// owning Network wires the input in before forward.
class AddInput : public Layer {
 public:
  const char* kind() const override { return "add"; }
  Shape infer(Shape in) const override { return in; }

  void set_input(const Tensor4* x0) { x0_ = x0; }
  const Tensor4& input_grad() const { return input_grad_; }

  Tensor4 forward(const Tensor4& x, bool) override {
    if (!x0_ || x0_->shape() != x.shape() || x0_->n != x.n)
      throw ShapeError("add-input shape mismatch");
    Tensor4 y = x;
    for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += x0_->v[i];
    return y;
  }

  Tensor4 backward(const Tensor4& gy) override {
    input_grad_ = gy;
    return gy;
  }

 private:
  const Tensor4* x0_ = nullptr;
  Tensor4 input_grad_;
};

/// Residual block: pad1 -> conv3x3 -> bn -> relu -> pad1 -> conv3x3 -> bn,
/// plus the identity skip. Audit rows follow the flattened table trace
/// (pad, conv, pad, conv, add).
class ResBlock : public Layer {
 public:
  ResBlock(std::size_t channels, Rng& rng, PadMode pad_mode = PadMode::kZero)
      : pad1_(1, pad_mode),
        conv1_(channels, channels, 3, 1, 0, 0, rng),
        bn1_(channels),
        pad2_(1, pad_mode),
        conv2_(channels, channels, 3, 1, 0, 0, rng),
        bn2_(channels) {}

  const char* kind() const override { return "resblock"; }

  Shape infer(Shape in) const override {
    Shape s = bn1_.infer(conv1_.infer(pad1_.infer(in)));
    s = bn2_.infer(conv2_.infer(pad2_.infer(s)));
    if (!(s == in)) throw BuildError("resblock does not preserve shape");
    return in;
  }

  Tensor4 forward(const Tensor4& x, bool train) override {
    Tensor4 t = pad1_.forward(x, train);
    t = conv1_.forward(t, train);
    t = bn1_.forward(t, train);
    t = relu_.forward(t, train);
    t = pad2_.forward(t, train);
    t = conv2_.forward(t, train);
    t = bn2_.forward(t, train);
    for (std::size_t i = 0; i < t.v.size(); ++i) t.v[i] += x.v[i];
    return t;
  }

  Tensor4 backward(const Tensor4& gy) override {
    Tensor4 g = bn2_.backward(gy);
    g = conv2_.backward(g);
    g = pad2_.backward(g);
    g = relu_.backward(g);
    g = bn1_.backward(g);
    g = conv1_.backward(g);
    g = pad1_.backward(g);
    for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += gy.v[i];
    return g;
  }

  std::vector<Param*> params() override {
    std::vector<Param*> out;
    for (Layer* l : std::initializer_list<Layer*>{&conv1_, &bn1_, &conv2_,
                                                  &bn2_}) {
      auto p = l->params();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  void audit(Shape in,
             std::vector<std::pair<std::string, Shape>>& rows) const override {
    const Shape padded = pad1_.infer(in);
    rows.emplace_back("pad", padded);
    rows.emplace_back("conv", conv1_.infer(padded));
    rows.emplace_back("pad", padded);
    rows.emplace_back("conv", in);
    rows.emplace_back("add", in);
  }

 private:
  Pad2d pad1_;
  Conv2d conv1_;
  BatchNorm2d bn1_;
  ReLU relu_;
  Pad2d pad2_;
  Conv2d conv2_;
  BatchNorm2d bn2_;
};

/// Sequential container with parameter bookkeeping, the input-skip hookup,
/// and CMDL (de)serialization.
class Network {
 public:
  Layer* add(std::unique_ptr<Layer> layer) {
    layers_.push_back(std::move(layer));
    return layers_.back().get();
  }

  /// Validates the layer chain for `in` and records the output shape.
  Shape build(Shape in) {
    in_shape_ = in;
    Shape s = in;
    for (const auto& l : layers_) s = l->infer(s);
    out_shape_ = s;
    return s;
  }

  Shape in_shape() const { return in_shape_; }
  Shape out_shape() const { return out_shape_; }

  Tensor4 forward(const Tensor4& x, bool train) {
    if (x.shape() != in_shape_) throw ShapeError("network input shape");
    input_ = x;
    for (const auto& l : layers_)
      if (auto* add = dynamic_cast<AddInput*>(l.get())) add->set_input(&input_);
    Tensor4 y = input_;
    for (const auto& l : layers_) y = l->forward(y, train);
    return y;
  }

  /// Backpropagates `gy` and returns the gradient with respect to the
  /// network input (including skip-connection contributions).
  Tensor4 backward(const Tensor4& gy) {
    Tensor4 g = gy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
      g = (*it)->backward(g);
    for (const auto& l : layers_)
      if (auto* add = dynamic_cast<AddInput*>(l.get())) {
        const Tensor4& ig = add->input_grad();
        for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += ig.v[i];
      }
    return g;
  }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      for (Param* p : layers_[i]->params()) out.push_back(p);
    return out;
  }

  void zero_grads() {
    for (Param* p : params()) p->zero_grad();
  }

  std::vector<std::pair<std::string, Shape>> audit(Shape in) const {
    std::vector<std::pair<std::string, Shape>> rows;
    Shape s = in;
    for (const auto& l : layers_) {
      l->audit(s, rows);
      s = l->infer(s);
    }
    return rows;
  }

  void save_params(std::ostream& os) {
    auto ps = params();
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(ps.size()));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      binio::put_string(os, std::to_string(i) + "." + ps[i]->name);
      binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(ps[i]->w.size()));
      binio::put_f64s(os, ps[i]->w);
    }
  }

  void load_params(std::istream& is) {
    auto ps = params();
    const auto count = binio::get<std::uint32_t>(is);
    if (count != ps.size()) throw FormatError("parameter count mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const std::string name = binio::get_string(is);
      if (name != std::to_string(i) + "." + ps[i]->name)
        throw FormatError("parameter name mismatch: " + name);
      const auto len = binio::get<std::uint32_t>(is);
      if (len != ps[i]->w.size())
        throw FormatError("parameter size mismatch: " + name);
      ps[i]->w = binio::get_f64s(is, len);
    }
  }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
  Shape in_shape_, out_shape_;
  Tensor4 input_;
};

/// One SGD update over all trainable parameters; `ascend` flips the sign
/// (used by the generator's maximization objective).
enum class StepDir : std::uint8_t { kDescend, kAscend };

inline void sgd_step(Network& net, double lr, StepDir dir) {
  const double sign = dir == StepDir::kDescend ? -1.0 : 1.0;
  for (Param* p : net.params()) {
    if (!p->trainable) continue;
    for (std::size_t i = 0; i < p->w.size(); ++i)
      p->w[i] += sign * lr * p->g[i];
  }
}

enum class NetProfile : std::uint8_t { kPaper = 0, kDesk = 1 };

struct ProfileOpts {
  NetProfile profile = NetProfile::kDesk;
  std::size_t factor = 8;      // channel divisor for the desk profile
  double leaky_slope = 0.2;
  PadMode pad_mode = PadMode::kZero;

  std::size_t ch(std::size_t paper_channels) const {
    if (profile == NetProfile::kPaper) return paper_channels;
    return std::max<std::size_t>(1, paper_channels / factor);
  }
  std::size_t resblocks() const {
    return profile == NetProfile::kPaper ? 9 : 2;
  }
};

/// Discriminator realizing Table I on 64x64x1 inputs: the declared 32x32
/// output of the first stride-2 conv requires consuming the 70x70 padding
/// with a -2 crop, and the stride-1 convs keep 8x8 via asymmetric (1,2)
/// padding.
inline Network build_discriminator(const ProfileOpts& opts, Rng& rng) {
  Network net;
  const auto c64 = opts.ch(64);
  const auto c128 = opts.ch(128);
  net.add(std::make_unique<Pad2d>(3, opts.pad_mode));
  net.add(std::make_unique<Conv2d>(1, c64, 4, 2, -2, -2, rng));
  net.add(std::make_unique<LeakyReLU>(opts.leaky_slope));
  net.add(std::make_unique<Conv2d>(c64, c64, 4, 2, 1, 1, rng));
  net.add(std::make_unique<BatchNorm2d>(c64));
  net.add(std::make_unique<LeakyReLU>(opts.leaky_slope));
  net.add(std::make_unique<Conv2d>(c64, c128, 4, 2, 1, 1, rng));
  net.add(std::make_unique<BatchNorm2d>(c128));
  net.add(std::make_unique<LeakyReLU>(opts.leaky_slope));
  net.add(std::make_unique<Conv2d>(c128, c128, 4, 1, 1, 2, rng));
  net.add(std::make_unique<BatchNorm2d>(c128));
  net.add(std::make_unique<LeakyReLU>(opts.leaky_slope));
  net.add(std::make_unique<Conv2d>(c128, 1, 4, 1, 1, 2, rng));
  net.add(std::make_unique<Flatten>());
  net.add(std::make_unique<Dense>(64, opts.ch(1024), rng));
  net.add(std::make_unique<Dense>(opts.ch(1024), 1, rng));
  net.add(std::make_unique<Sigmoid>());
  const Shape out = net.build({1, 64, 64});
  if (!(out == Shape{1, 1, 1}))
    throw BuildError("discriminator output shape mismatch");
  return net;
}

/// Generator realizing Table II on 64x64x1 inputs. The table's standalone
/// 18x18 padding row and each block's trailing padding row fold into the
/// residual blocks as their leading pads, so upsampling receives 16x16 as
/// declared.
inline Network build_generator(const ProfileOpts& opts, Rng& rng) {
  Network net;
  const auto c64 = opts.ch(64);
  const auto c128 = opts.ch(128);
  const auto c256 = opts.ch(256);
  net.add(std::make_unique<Pad2d>(3, opts.pad_mode));
  net.add(std::make_unique<Conv2d>(1, c64, 7, 1, 0, 0, rng));
  net.add(std::make_unique<LeakyReLU>(opts.leaky_slope));
  net.add(std::make_unique<Conv2d>(c64, c128, 3, 2, 0, 1, rng));
  net.add(std::make_unique<BatchNorm2d>(c128));
  net.add(std::make_unique<Conv2d>(c128, c256, 3, 2, 0, 1, rng));
  net.add(std::make_unique<BatchNorm2d>(c256));
  for (std::size_t i = 0; i < opts.resblocks(); ++i)
    net.add(std::make_unique<ResBlock>(c256, rng, opts.pad_mode));
  net.add(std::make_unique<Upsample2x>());
  net.add(std::make_unique<Conv2d>(c256, c128, 3, 1, 1, 1, rng));
  net.add(std::make_unique<BatchNorm2d>(c128));
  net.add(std::make_unique<Upsample2x>());
  net.add(std::make_unique<Conv2d>(c128, c64, 3, 1, 1, 1, rng));
  net.add(std::make_unique<BatchNorm2d>(c64));
  net.add(std::make_unique<Pad2d>(3, opts.pad_mode));
  net.add(std::make_unique<Conv2d>(c64, 1, 7, 1, 0, 0, rng));
  net.add(std::make_unique<AddInput>());
  net.add(std::make_unique<Clamp01>());
  const Shape out = net.build({1, 64, 64});
  if (!(out == Shape{1, 64, 64}))
    throw BuildError("generator output shape mismatch");
  return net;
}

}  // namespace codetensor::nn
