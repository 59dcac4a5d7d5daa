#include <gtest/gtest.h>

#include <cmath>

#include "codetensor/tensor.hpp"
#include "test_util.hpp"

using namespace codetensor;

namespace {

double rel_err(const Tensor3& a, const Tensor3& b) {
  Tensor3 d = a;
  for (std::size_t i = 0; i < d.values.size(); ++i) d.values[i] -= b.values[i];
  const double na = fro_norm(a);
  return na > 0 ? fro_norm(d) / na : fro_norm(d);
}

}  // namespace

TEST(Dft, RoundTripIsExactlyRealAndLossless) {
  const Tensor3 t = testutil::random_tensor(5, 4, 7, 1);
  double residue = 0.0;
  const Tensor3 back = idft_mode3(dft_mode3(t), &residue);
  EXPECT_LT(residue, 1e-12);  // conjugate symmetry makes this exactly real
  EXPECT_LT(rel_err(t, back), 1e-14);
}

TEST(Dft, ParsevalEnergyIdentity) {
  const Tensor3 t = testutil::random_tensor(6, 3, 8, 2);
  const FreqTensor3 f = dft_mode3(t);
  double freq_energy = 0.0;
  for (const Cplx& c : f.values) freq_energy += std::norm(c);
  freq_energy /= static_cast<double>(t.i3);
  const double time_energy = fro_norm(t) * fro_norm(t);
  EXPECT_NEAR(freq_energy, time_energy, 1e-9 * time_energy);
}

TEST(MatVecFold, InverseBijection) {
  const Tensor3 t = testutil::random_tensor(4, 5, 3, 3);
  const Tensor3 back = fold(matvec(t), t.i3);
  EXPECT_EQ(back.values, t.values);  // exact, element-for-element
  EXPECT_THROW(fold(Eigen::MatrixXd::Zero(7, 2), 3), ShapeError);
}

TEST(Circ, HasBlockCirculantStructure) {
  const Tensor3 t = testutil::random_tensor(2, 3, 4, 4);
  const Eigen::MatrixXd c = circ(t);
  ASSERT_EQ(c.rows(), 8);
  ASSERT_EQ(c.cols(), 12);
  for (std::size_t br = 0; br < 4; ++br)
    for (std::size_t bc = 0; bc < 4; ++bc) {
      const std::size_t k = (br + 4 - bc) % 4;
      const Eigen::MatrixXd block = c.block(2 * br, 3 * bc, 2, 3);
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j)
          EXPECT_DOUBLE_EQ(block(i, j), t.at(i, j, k));
    }
}

TEST(TProduct, MatchesLiteralCircMatVecFoldDefinition) {
  const Tensor3 a = testutil::random_tensor(4, 3, 5, 5);
  const Tensor3 b = testutil::random_tensor(3, 6, 5, 6);
  const Tensor3 fast = t_product(a, b);
  const Tensor3 literal = fold(circ(a) * matvec(b), a.i3);
  EXPECT_LT(rel_err(literal, fast), 1e-12);
}

TEST(TProduct, IdentityActsTrivially) {
  const Tensor3 a = testutil::random_tensor(4, 4, 6, 7);
  const Tensor3 e = identity_tensor(4, 6);
  EXPECT_LT(rel_err(t_product(e, a), a), 1e-13);
  EXPECT_LT(rel_err(t_product(a, e), a), 1e-13);
}

TEST(TProduct, ShapeMismatchThrows) {
  const Tensor3 a = testutil::random_tensor(4, 3, 5, 8);
  const Tensor3 b = testutil::random_tensor(4, 6, 5, 9);   // inner dim wrong
  const Tensor3 c = testutil::random_tensor(3, 6, 4, 10);  // depth wrong
  EXPECT_THROW(t_product(a, b), ShapeError);
  EXPECT_THROW(t_product(a, c), ShapeError);
}

TEST(TTranspose, InvolutionAndProductReversal) {
  const Tensor3 a = testutil::random_tensor(4, 3, 5, 11);
  const Tensor3 b = testutil::random_tensor(3, 2, 5, 12);
  EXPECT_LT(rel_err(t_transpose(t_transpose(a)), a), 1e-15);
  const Tensor3 lhs = t_transpose(t_product(a, b));
  const Tensor3 rhs = t_product(t_transpose(b), t_transpose(a));
  EXPECT_LT(rel_err(lhs, rhs), 1e-12);
}

TEST(TSvd, ReconstructsAndFactorsAreOrthogonal) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Tensor3 a = testutil::random_tensor(6, 4, 5, 100 + seed);
    const TSvd f = t_svd(a);
    const Tensor3 recon =
        t_product(t_product(f.u, f.s), t_transpose(f.v));
    EXPECT_LT(rel_err(a, recon), 1e-10);

    const Tensor3 utu = t_product(t_transpose(f.u), f.u);
    const Tensor3 vtv = t_product(t_transpose(f.v), f.v);
    EXPECT_LT(rel_err(utu, identity_tensor(a.i1, a.i3)), 1e-9);
    EXPECT_LT(rel_err(vtv, identity_tensor(a.i2, a.i3)), 1e-9);
  }
}

TEST(TSvd, SIsFDiagonalWithDescendingFirstSliceInFreq) {
  const Tensor3 a = testutil::random_tensor(5, 5, 4, 200);
  const TSvd f = t_svd(a);
  for (std::size_t k = 0; k < f.s.i3; ++k)
    for (std::size_t i = 0; i < f.s.i1; ++i)
      for (std::size_t j = 0; j < f.s.i2; ++j)
        if (i != j) EXPECT_EQ(f.s.at(i, j, k), 0.0);
  const auto per_slice = tubal_singular_values(a);
  ASSERT_EQ(per_slice.size(), a.i3);
  for (const auto& sv : per_slice)
    for (std::size_t d = 0; d + 1 < sv.size(); ++d)
      EXPECT_GE(sv[d] + 1e-12, sv[d + 1]);
}

TEST(TSvd, DeterministicAcrossRuns) {
  const Tensor3 a = testutil::random_tensor(6, 5, 4, 300);
  const TSvd f1 = t_svd(a);
  const TSvd f2 = t_svd(a);
  EXPECT_EQ(f1.u.values, f2.u.values);
  EXPECT_EQ(f1.s.values, f2.s.values);
  EXPECT_EQ(f1.v.values, f2.v.values);
}

TEST(RankR, ErrorNonIncreasingAndExactAtFullRank) {
  const Tensor3 a = testutil::random_tensor(6, 5, 4, 400);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t r = 1; r <= 5; ++r) {
    const double err = rel_err(a, rank_r_approx(a, r));
    EXPECT_LE(err, prev + 1e-12);
    prev = err;
  }
  EXPECT_LT(rel_err(a, rank_r_approx(a, 5)), 1e-10);
  EXPECT_THROW(rank_r_approx(a, 0), RankError);
  EXPECT_THROW(rank_r_approx(a, 6), RankError);
}

TEST(RankR, RecoversExactLowRankTensors) {
  // A = B * C with inner dimension 2 has tubal rank <= 2.
  const Tensor3 b = testutil::random_tensor(6, 2, 5, 500);
  const Tensor3 c = testutil::random_tensor(2, 7, 5, 501);
  const Tensor3 a = t_product(b, c);
  EXPECT_LT(rel_err(a, rank_r_approx(a, 2)), 1e-10);
}

TEST(Cten, SaveLoadRoundTripIsExactAndByteStable) {
  testutil::TempDir dir("cten");
  const Tensor3 t = testutil::random_tensor(7, 3, 2, 600);
  save_tensor(t, dir.path("t.cten"));
  const Tensor3 back = load_tensor(dir.path("t.cten"));
  EXPECT_EQ(back.i1, t.i1);
  EXPECT_EQ(back.i2, t.i2);
  EXPECT_EQ(back.i3, t.i3);
  EXPECT_EQ(back.values, t.values);
  save_tensor(back, dir.path("u.cten"));
  EXPECT_EQ(testutil::slurp(dir.path("t.cten")),
            testutil::slurp(dir.path("u.cten")));
}

TEST(Cten, RejectsForeignFiles) {
  testutil::TempDir dir("ctenbad");
  {
    std::ofstream os(dir.path("x.cten"), std::ios::binary);
    os << "NOPE1234";
  }
  EXPECT_THROW(load_tensor(dir.path("x.cten")), FormatError);
}
