#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "codetensor/binio.hpp"
#include "codetensor/errors.hpp"

namespace codetensor {

using Cplx = std::complex<double>;
using RowMatXd =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatXcd =
    Eigen::Matrix<Cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense third-order tensor. Element (i,j,k) lives at ((k*I1 + i)*I2 + j),
/// which makes every frontal slice a contiguous row-major I1 x I2 matrix.
struct Tensor3 {
  std::size_t i1 = 0, i2 = 0, i3 = 0;
  std::vector<double> values;

  Tensor3() = default;
  Tensor3(std::size_t a, std::size_t b, std::size_t c)
      : i1(a), i2(b), i3(c), values(a * b * c, 0.0) {}

  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return values[(k * i1 + i) * i2 + j];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return values[(k * i1 + i) * i2 + j];
  }

  Eigen::Map<RowMatXd> slice(std::size_t k) {
    return {values.data() + k * i1 * i2, static_cast<Eigen::Index>(i1),
            static_cast<Eigen::Index>(i2)};
  }
  Eigen::Map<const RowMatXd> slice(std::size_t k) const {
    return {values.data() + k * i1 * i2, static_cast<Eigen::Index>(i1),
            static_cast<Eigen::Index>(i2)};
  }
};

/// Mode-3 DFT image of a Tensor3 (same layout, complex values).
struct FreqTensor3 {
  std::size_t i1 = 0, i2 = 0, i3 = 0;
  std::vector<Cplx> values;

  FreqTensor3() = default;
  FreqTensor3(std::size_t a, std::size_t b, std::size_t c)
      : i1(a), i2(b), i3(c), values(a * b * c, Cplx{0.0, 0.0}) {}

  Cplx at(std::size_t i, std::size_t j, std::size_t k) const {
    return values[(k * i1 + i) * i2 + j];
  }
  Cplx& at(std::size_t i, std::size_t j, std::size_t k) {
    return values[(k * i1 + i) * i2 + j];
  }

  Eigen::Map<RowMatXcd> slice(std::size_t k) {
    return {values.data() + k * i1 * i2, static_cast<Eigen::Index>(i1),
            static_cast<Eigen::Index>(i2)};
  }
  Eigen::Map<const RowMatXcd> slice(std::size_t k) const {
    return {values.data() + k * i1 * i2, static_cast<Eigen::Index>(i1),
            static_cast<Eigen::Index>(i2)};
  }
};

namespace detail {

/// Twiddle table w[m] = exp(-2*pi*i*m/n), built so that w[n-m] is the exact
/// floating-point conjugate of w[m]; this keeps DFTs of real tensors exactly
/// conjugate-symmetric.
inline std::vector<Cplx> twiddles(std::size_t n) {
  std::vector<Cplx> w(n);
  for (std::size_t m = 0; m <= n / 2; ++m) {
    const double ang = -2.0 * std::numbers::pi * static_cast<double>(m) /
                       static_cast<double>(n);
    w[m] = {std::cos(ang), std::sin(ang)};
    if (m != 0 && n - m != m) w[n - m] = std::conj(w[m]);
  }
  return w;
}

}  // namespace detail

/// Unnormalized forward DFT along mode 3, one tube at a time.
inline FreqTensor3 dft_mode3(const Tensor3& t) {
  FreqTensor3 f(t.i1, t.i2, t.i3);
  const auto w = detail::twiddles(t.i3);
  const std::size_t stride = t.i1 * t.i2;
  std::vector<double> tube(t.i3);
  for (std::size_t i = 0; i < t.i1; ++i) {
    for (std::size_t j = 0; j < t.i2; ++j) {
      const std::size_t base = i * t.i2 + j;
      for (std::size_t k = 0; k < t.i3; ++k)
        tube[k] = t.values[base + k * stride];
      for (std::size_t p = 0; p < t.i3; ++p) {
        Cplx acc{0.0, 0.0};
        for (std::size_t k = 0; k < t.i3; ++k)
          acc += tube[k] * w[(p * k) % t.i3];
        f.values[base + p * stride] = acc;
      }
    }
  }
  return f;
}

/// Inverse DFT along mode 3 (divides by I3) and truncation to the real part.
/// If `max_imag` is given it receives the largest absolute imaginary residue,
/// which should be ~0 for conjugate-symmetric input.
inline Tensor3 idft_mode3(const FreqTensor3& f, double* max_imag = nullptr) {
  Tensor3 t(f.i1, f.i2, f.i3);
  const auto w = detail::twiddles(f.i3);
  const std::size_t stride = f.i1 * f.i2;
  const double inv = 1.0 / static_cast<double>(f.i3);
  std::vector<Cplx> tube(f.i3);
  double residue = 0.0;
  for (std::size_t i = 0; i < f.i1; ++i) {
    for (std::size_t j = 0; j < f.i2; ++j) {
      const std::size_t base = i * f.i2 + j;
      for (std::size_t p = 0; p < f.i3; ++p)
        tube[p] = f.values[base + p * stride];
      for (std::size_t k = 0; k < f.i3; ++k) {
        Cplx acc{0.0, 0.0};
        for (std::size_t p = 0; p < f.i3; ++p)
          acc += tube[p] * std::conj(w[(p * k) % f.i3]);
        acc *= inv;
        residue = std::max(residue, std::abs(acc.imag()));
        t.values[base + k * stride] = acc.real();
      }
    }
  }
  if (max_imag) *max_imag = residue;
  return t;
}

/// Eq. 4: stacks the frontal slices into an (I1*I3) x I2 block column.
inline Eigen::MatrixXd matvec(const Tensor3& t) {
  Eigen::MatrixXd m(t.i1 * t.i3, t.i2);
  for (std::size_t k = 0; k < t.i3; ++k)
    m.middleRows(static_cast<Eigen::Index>(k * t.i1),
                 static_cast<Eigen::Index>(t.i1)) = t.slice(k);
  return m;
}

/// Eq. 5: inverse of matvec. Row count must be divisible by i3.
inline Tensor3 fold(const Eigen::MatrixXd& m, std::size_t i3) {
  if (i3 == 0 || static_cast<std::size_t>(m.rows()) % i3 != 0)
    throw ShapeError("fold: row count not divisible by I3");
  const std::size_t i1 = static_cast<std::size_t>(m.rows()) / i3;
  Tensor3 t(i1, static_cast<std::size_t>(m.cols()), i3);
  for (std::size_t k = 0; k < i3; ++k)
    t.slice(k) = m.middleRows(static_cast<Eigen::Index>(k * i1),
                              static_cast<Eigen::Index>(i1));
  return t;
}

/// Eq. 6: block-circulant matrix; block (r,c) holds slice ((r-c) mod I3).
inline Eigen::MatrixXd circ(const Tensor3& t) {
  Eigen::MatrixXd m(t.i1 * t.i3, t.i2 * t.i3);
  for (std::size_t br = 0; br < t.i3; ++br) {
    for (std::size_t bc = 0; bc < t.i3; ++bc) {
      const std::size_t k = (br + t.i3 - bc) % t.i3;
      m.block(static_cast<Eigen::Index>(br * t.i1),
              static_cast<Eigen::Index>(bc * t.i2),
              static_cast<Eigen::Index>(t.i1),
              static_cast<Eigen::Index>(t.i2)) = t.slice(k);
    }
  }
  return m;
}

/// Eq. 3: frequency slices arranged block-diagonally.
inline Eigen::MatrixXcd blkdiag(const FreqTensor3& f) {
  Eigen::MatrixXcd m =
      Eigen::MatrixXcd::Zero(f.i1 * f.i3, f.i2 * f.i3);
  for (std::size_t k = 0; k < f.i3; ++k)
    m.block(static_cast<Eigen::Index>(k * f.i1),
            static_cast<Eigen::Index>(k * f.i2),
            static_cast<Eigen::Index>(f.i1),
            static_cast<Eigen::Index>(f.i2)) = f.slice(k);
  return m;
}

/// Eq. 2 t-product, computed in the frequency domain (slice-wise complex
/// matrix products). Equals fold(circ(a) * matvec(b)).
inline Tensor3 t_product(const Tensor3& a, const Tensor3& b) {
  if (a.i2 != b.i1 || a.i3 != b.i3)
    throw ShapeError("t_product: inner extent or depth mismatch");
  const FreqTensor3 fa = dft_mode3(a);
  const FreqTensor3 fb = dft_mode3(b);
  FreqTensor3 fc(a.i1, b.i2, a.i3);
  for (std::size_t k = 0; k < a.i3; ++k)
    fc.slice(k) = fa.slice(k) * fb.slice(k);
  return idft_mode3(fc);
}

/// Transpose: slice 1 transposed in place; slices 2..I3 transposed and
/// reversed in order.
inline Tensor3 t_transpose(const Tensor3& a) {
  Tensor3 t(a.i2, a.i1, a.i3);
  t.slice(0) = a.slice(0).transpose();
  for (std::size_t k = 1; k < a.i3; ++k)
    t.slice(k) = a.slice(a.i3 - k).transpose();
  return t;
}

/// Identity element of the t-product: first frontal slice I, others zero.
inline Tensor3 identity_tensor(std::size_t n, std::size_t i3) {
  Tensor3 t(n, n, i3);
  t.slice(0) = Eigen::MatrixXd::Identity(n, n);
  return t;
}

inline double fro_norm(const Tensor3& t) {
  double s = 0.0;
  for (double v : t.values) s += v * v;
  return std::sqrt(s);
}

namespace detail {

/// Deterministic phase convention for a frequency-slice SVD: the first
/// component of each left singular vector larger than 1e-12 in magnitude is
/// rotated onto the positive real axis; paired right singular vectors get the
/// same rotation so the product is unchanged. Unpaired (null-space) columns
/// of U and V are normalized independently.
inline void canonicalize_svd(Eigen::MatrixXcd& u, Eigen::MatrixXcd& v) {
  const Eigen::Index paired = std::min(u.cols(), v.cols());
  auto phase_of = [](const Eigen::MatrixXcd& m, Eigen::Index c) -> Cplx {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      if (std::abs(m(r, c)) > 1e-12) return m(r, c) / std::abs(m(r, c));
    return {1.0, 0.0};
  };
  for (Eigen::Index c = 0; c < u.cols(); ++c) {
    const Cplx ph = std::conj(phase_of(u, c));
    u.col(c) *= ph;
    if (c < paired) v.col(c) *= ph;
  }
  for (Eigen::Index c = paired; c < v.cols(); ++c)
    v.col(c) *= std::conj(phase_of(v, c));
}

}  // namespace detail

struct TSvd {
  Tensor3 u;  // I1 x I1 x I3
  Tensor3 s;  // I1 x I2 x I3, f-diagonal
  Tensor3 v;  // I2 x I2 x I3
};

/// t-SVD (Alg. 3): DFT along mode 3, full complex SVD per frequency slice,
/// inverse DFT. Conjugate symmetry is enforced by mirroring slices, so the
/// outputs are exactly real. Satisfies t = u * s * t_transpose(v).
inline TSvd t_svd(const Tensor3& t) {
  const FreqTensor3 f = dft_mode3(t);
  FreqTensor3 fu(t.i1, t.i1, t.i3), fs(t.i1, t.i2, t.i3),
      fv(t.i2, t.i2, t.i3);
  for (std::size_t k = 0; k <= t.i3 / 2; ++k) {
    Eigen::BDCSVD<Eigen::MatrixXcd> svd(
        f.slice(k), Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::MatrixXcd u = svd.matrixU();
    Eigen::MatrixXcd v = svd.matrixV();
    detail::canonicalize_svd(u, v);
    fu.slice(k) = u;
    fv.slice(k) = v;
    fs.slice(k).setZero();
    const auto sv = svd.singularValues();
    for (Eigen::Index d = 0; d < sv.size(); ++d)
      fs.slice(k)(d, d) = Cplx{sv(d), 0.0};
    const std::size_t mirror = (t.i3 - k) % t.i3;
    if (mirror != k) {
      fu.slice(mirror) = fu.slice(k).conjugate();
      fs.slice(mirror) = fs.slice(k).conjugate();
      fv.slice(mirror) = fv.slice(k).conjugate();
    }
  }
  TSvd out;
  out.u = idft_mode3(fu);
  out.s = idft_mode3(fs);
  out.v = idft_mode3(fv);
  return out;
}

/// Frequency-domain singular values, slice-major: sv[k] holds the descending
/// singular values of frequency slice k. Useful for energy accounting.
inline std::vector<std::vector<double>> tubal_singular_values(
    const Tensor3& t) {
  const FreqTensor3 f = dft_mode3(t);
  std::vector<std::vector<double>> out(t.i3);
  for (std::size_t k = 0; k < t.i3; ++k) {
    Eigen::BDCSVD<Eigen::MatrixXcd> svd(f.slice(k));
    const auto sv = svd.singularValues();
    out[k].assign(sv.data(), sv.data() + sv.size());
  }
  return out;
}

/// Eq. 7 best tubal-rank-r approximation: per frequency slice keep the top r
/// singular triplets, then invert the DFT.
inline Tensor3 rank_r_approx(const Tensor3& t, std::size_t r) {
  const std::size_t min_dim = std::min(t.i1, t.i2);
  if (r < 1 || r > min_dim)
    throw RankError("rank_r_approx: r must be in [1, min(I1,I2)]");
  const FreqTensor3 f = dft_mode3(t);
  FreqTensor3 g(t.i1, t.i2, t.i3);
  const auto rr = static_cast<Eigen::Index>(r);
  for (std::size_t k = 0; k <= t.i3 / 2; ++k) {
    Eigen::BDCSVD<Eigen::MatrixXcd> svd(
        f.slice(k), Eigen::ComputeThinU | Eigen::ComputeThinV);
    g.slice(k) = svd.matrixU().leftCols(rr) *
                 svd.singularValues().head(rr).asDiagonal() *
                 svd.matrixV().leftCols(rr).adjoint();
    const std::size_t mirror = (t.i3 - k) % t.i3;
    if (mirror != k) g.slice(mirror) = g.slice(k).conjugate();
  }
  return idft_mode3(g);
}

inline void save_tensor(const Tensor3& t, const std::string& path) {
  auto os = binio::open_out(path);
  os.write("CTEN", 4);
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.i1));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.i2));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.i3));
  binio::put_f64s(os, t.values);
}

inline Tensor3 load_tensor(const std::string& path) {
  auto is = binio::open_in(path);
  binio::expect_magic(is, "CTEN");
  const auto i1 = binio::get<std::uint32_t>(is);
  const auto i2 = binio::get<std::uint32_t>(is);
  const auto i3 = binio::get<std::uint32_t>(is);
  if (i1 == 0 || i2 == 0 || i3 == 0)
    throw FormatError("degenerate tensor dims in " + path);
  Tensor3 t(i1, i2, i3);
  t.values = binio::get_f64s(is, t.values.size());
  if (!is) throw FormatError("truncated tensor file: " + path);
  return t;
}

}  // namespace codetensor
