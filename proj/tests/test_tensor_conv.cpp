#include <gtest/gtest.h>

#include "soc/oracle.hpp"
#include "test_util.hpp"

namespace soc {
namespace {

using test::Rng;

TEST(Tensor, ShapeAndStorageAgree) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), std::invalid_argument);
  EXPECT_THROW(Tensor(Shape{}), std::invalid_argument);
  EXPECT_THROW(Tensor(Shape{1, 1, 1, 1, 1, 1}), std::invalid_argument);
}

TEST(Tensor, RowMajorIndexing) {
  Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
  EXPECT_EQ(t(1, 2), 5.0);
  EXPECT_EQ(t(0, 1), 1.0);
}

TEST(Tensor, ArithmeticChecksShapes) {
  Tensor a = Tensor::filled({2, 2}, 1.0);
  Tensor b = Tensor::filled({2, 3}, 1.0);
  EXPECT_THROW(a += b, std::invalid_argument);
  EXPECT_DOUBLE_EQ((a * 3.0).norm(), 6.0);
}

TEST(Tensor, ComplexDotConjugatesLeft) {
  ComplexTensor a({1}, {Complex(0, 1)});
  ComplexTensor b({1}, {Complex(0, 1)});
  EXPECT_EQ(dot(a, b), Complex(1, 0));
}

TEST(Conv2d, DeltaFilterIsIdentity) {
  Rng rng(1);
  Filter delta = Filter::zeros(1, 1, 3, 3);
  delta(0, 0, 1, 1) = 1.0;
  const Tensor x = Tensor::randn({1, 5, 5}, rng);
  EXPECT_EQ(conv2d(delta, x), x);
}

TEST(Conv2d, ScalarFilterScales) {
  Rng rng(2);
  Filter f = Filter::zeros(1, 1, 1, 1);
  f(0, 0, 0, 0) = 2.5;
  const Tensor x = Tensor::randn({1, 4, 4}, rng);
  EXPECT_LE(max_abs_diff(conv2d(f, x), x * 2.5), 0.0);
}

TEST(Conv2d, MatchesDenseJacobian) {
  Rng rng(3);
  const Filter l(Tensor::randn({1, 1, 3, 3}, rng));
  const Tensor x = Tensor::randn({1, 4, 4}, rng);
  const auto jac = materialize_jacobian(l, 4);
  const Vector<double> expected = jac.matrix * vectorize(x);
  EXPECT_LE(max_abs_diff(conv2d(l, x), unvectorize<double>(expected, x.dims())), 1e-12);
}

TEST(Conv2d, ZeroPaddingAtBorders) {
  Filter f = Filter::zeros(1, 1, 3, 3);
  f(0, 0, 0, 0) = 1.0;  // reads input[y - 1, x - 1]
  Tensor x({1, 2, 2}, {1, 2, 3, 4});
  const Tensor y = conv2d(f, x);
  EXPECT_EQ(y.storage(), (std::vector<double>{0, 0, 0, 1}));
}

TEST(Conv2d, Errors) {
  Rng rng(4);
  const Filter even(Tensor::randn({1, 1, 2, 2}, rng));
  EXPECT_THROW(conv2d(even, Tensor::randn({1, 4, 4}, rng)), std::invalid_argument);
  const Filter two_in(Tensor::randn({1, 2, 3, 3}, rng));
  EXPECT_THROW(conv2d(two_in, Tensor::randn({1, 4, 4}, rng)), std::invalid_argument);
}

TEST(Conv2d, Linearity) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Filter l(Tensor::randn({2, 3, 3, 3}, rng));
    const Tensor x = Tensor::randn({3, 5, 5}, rng), z = Tensor::randn({3, 5, 5}, rng);
    const double a = 1.7, b = -0.3;
    const Tensor lhs = conv2d(l, x * a + z * b);
    const Tensor rhs = conv2d(l, x) * a + conv2d(l, z) * b;
    EXPECT_LE((lhs - rhs).norm(), 1e-12 * rhs.norm());
  }
}

TEST(ConvTranspose, FlipsSpatialAxes) {
  Tensor t({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Filter out = conv_transpose(Filter(t));
  EXPECT_EQ(out.tensor().storage(), (std::vector<double>{9, 8, 7, 6, 5, 4, 3, 2, 1}));
}

TEST(ConvTranspose, SwapsChannels) {
  Filter f = Filter::zeros(2, 3, 1, 1);
  f(1, 2, 0, 0) = 4.0;
  const Filter t = conv_transpose(f);
  EXPECT_EQ(t.out_channels(), 3u);
  EXPECT_EQ(t(2, 1, 0, 0), 4.0);
}

TEST(ConvTranspose, Involution) {
  Rng rng(6);
  const ComplexFilter l(ComplexTensor::randn({2, 3, 3, 5}, rng));
  EXPECT_EQ(conv_transpose(conv_transpose(l)), l);
}

TEST(ConvTranspose, ConjugatesComplex) {
  ComplexFilter f(ComplexTensor({1, 1, 1, 1}, {Complex(2, 3)}));
  EXPECT_EQ(conv_transpose(f)(0, 0, 0, 0), Complex(2, -3));
}

TEST(ConvTranspose, JacobianIsTransposeReal) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t co = 1 + trial % 3, ci = 1 + (trial / 3) % 3, n = 3 + trial % 3;
    const Filter l(Tensor::randn({co, ci, 3, 3}, rng));
    const Matrix<double> j = materialize_jacobian(l, n).matrix;
    const Matrix<double> jt = materialize_jacobian(conv_transpose(l), n).matrix;
    EXPECT_LE(max_abs<double>(jt - j.transpose()), 1e-12);
  }
}

TEST(ConvTranspose, JacobianIsAdjointComplex) {
  Rng rng(8);
  const ComplexFilter l(ComplexTensor::randn({2, 3, 3, 3}, rng));
  const Matrix<Complex> j = materialize_jacobian(l, 4).matrix;
  const Matrix<Complex> jt = materialize_jacobian(conv_transpose(l), 4).matrix;
  EXPECT_LE(max_abs<Complex>(jt - j.adjoint()), 1e-12);
}

TEST(Conv3dTranspose, SingleAxisFlip) {
  Filter f(Tensor({1, 1, 1, 1, 3}, {1, 2, 3}));
  EXPECT_EQ(conv3d_transpose(f).tensor().storage(), (std::vector<double>{3, 2, 1}));
}

TEST(Conv3dTranspose, InvolutionAndAdjointJacobian) {
  Rng rng(9);
  const ComplexFilter l(ComplexTensor::randn({2, 2, 3, 3, 3}, rng));
  EXPECT_EQ(conv3d_transpose(conv3d_transpose(l)), l);
  const Matrix<Complex> j = materialize_jacobian(l, 3).matrix;
  const Matrix<Complex> jt = materialize_jacobian(conv3d_transpose(l), 3).matrix;
  EXPECT_LE(max_abs<Complex>(jt - j.adjoint()), 1e-12);
  EXPECT_THROW(conv3d_transpose(ComplexFilter(ComplexTensor({1, 1, 3, 3}))), std::invalid_argument);
}

TEST(Conv3d, MatchesDenseJacobian) {
  Rng rng(10);
  const Filter l(Tensor::randn({2, 1, 3, 3, 3}, rng));
  const Tensor x = Tensor::randn({1, 3, 3, 3}, rng);
  const Vector<double> expected = materialize_jacobian(l, 3).matrix * vectorize(x);
  EXPECT_LE(max_abs_diff(conv3d(l, x), unvectorize<double>(expected, {2, 3, 3, 3})), 1e-12);
}

TEST(FilterGrad, MatchesFiniteDifferences) {
  Rng rng(11);
  const Tensor x = Tensor::randn({2, 5, 5}, rng);
  const Tensor v = Tensor::randn({3, 5, 5}, rng);
  const Filter l(Tensor::randn({3, 2, 3, 3}, rng));
  const Filter g = conv2d_filter_grad(v, x, 3, 3);
  const Tensor fd = test::numeric_gradient([&](const Tensor& w) { return dot(v, conv2d(Filter(w), x)); }, l.tensor());
  EXPECT_LE(test::relative_error(g.tensor(), fd), 1e-8);
}

TEST(Downsample, BlockOrder) {
  Tensor x({1, 2, 2}, {1, 2, 3, 4});
  const Tensor y = invertible_downsample(x);
  EXPECT_EQ(y.dims(), (Shape{4, 1, 1}));
  EXPECT_EQ(y.storage(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Downsample, RoundTripAndNorm) {
  Rng rng(12);
  const Tensor x = Tensor::randn({3, 6, 6}, rng);
  const Tensor y = invertible_downsample(x);
  EXPECT_EQ(invertible_upsample(y), x);
  EXPECT_DOUBLE_EQ(y.norm(), x.norm());
}

TEST(Downsample, IsBijectionOnPositions) {
  const std::size_t c = 2, n = 4;
  Tensor x({c, n, n});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  const Tensor y = invertible_downsample(x);
  std::vector<bool> seen(x.size(), false);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const auto idx = static_cast<std::size_t>(y[i]);
    ASSERT_FALSE(seen[idx]);
    seen[idx] = true;
  }
}

TEST(Downsample, OddSizeRejected) {
  EXPECT_THROW(invertible_downsample(Tensor({1, 3, 3})), std::invalid_argument);
}

TEST(Channels, PadAndTruncate) {
  Rng rng(13);
  const Tensor ones = Tensor::filled({1, 2, 2}, 1.0);
  const Tensor padded = pad_channels(ones, 3);
  EXPECT_EQ(padded.dims(), (Shape{3, 2, 2}));
  for (std::size_t i = 4; i < padded.size(); ++i) EXPECT_EQ(padded[i], 0.0);
  const Tensor x = Tensor::randn({2, 3, 3}, rng);
  EXPECT_EQ(truncate_channels(pad_channels(x, 5), 2), x);
  EXPECT_DOUBLE_EQ(pad_channels(x, 4).norm(), x.norm());
  EXPECT_THROW(pad_channels(x, 1), std::invalid_argument);
  EXPECT_THROW(truncate_channels(x, 3), std::invalid_argument);
}

TEST(PadToOdd, TrailingZeros) {
  Filter f(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
  const Filter p = pad_to_odd(f);
  EXPECT_EQ(p.tensor().dims(), (Shape{1, 1, 3, 3}));
  EXPECT_EQ(p.tensor().storage(), (std::vector<double>{1, 2, 0, 3, 4, 0, 0, 0, 0}));
}

}  // namespace
}  // namespace soc
