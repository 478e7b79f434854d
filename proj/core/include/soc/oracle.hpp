#pragma once

// Brute-force ground truth for the convolution machinery: explicit Jacobians,
// a dense matrix exponential and a Hermitian eigensolver. Everything here works
// on materialized matrices and is deliberately independent of the direct
// convolution and series code paths it is used to check.

#include "soc/skew_filter.hpp"

namespace soc {

/// Explicit Jacobian of a zero-padded stride-1 convolution. Rows and columns
/// follow row-major vectorization of (channel, spatial...) tensors.
template <Scalar T>
struct DenseJacobian {
  Matrix<T> matrix;
  std::size_t n = 0;          // spatial side
  std::size_t c_out = 0;
  std::size_t c_in = 0;
  std::size_t spatial_rank = 2;
};

/// n x n shift matrix with ones where row - col == offset.
Matrix<double> shift_matrix(std::size_t n, std::ptrdiff_t offset);

template <Scalar T>
Matrix<T> kronecker(const Matrix<T>& a, const Matrix<T>& b);

/// Sum over taps of L[o, i, taps] times a Kronecker product of shift matrices,
/// one block per channel pair. Handles 2D and 3D filters; n must cover the filter.
template <Scalar T>
DenseJacobian<T> materialize_jacobian(const BasicFilter<T>& filter, std::size_t n);

template <Scalar T>
Vector<T> vectorize(const BasicTensor<T>& t);
template <Scalar T>
BasicTensor<T> unvectorize(const Vector<T>& v, const Shape& dims);

/// Scaling and squaring around a Taylor series: scale until ||A|| <= 0.5,
/// sum terms until one drops below 1e-18, square back.
template <Scalar T>
Matrix<T> dense_expm(const Matrix<T>& a);

/// S_k(A) = sum_{j<k} A^j / j!.
template <Scalar T>
Matrix<T> truncated_series(const Matrix<T>& a, int k);

/// Largest singular value (dense SVD).
template <Scalar T>
double spectral_norm(const Matrix<T>& a);

template <Scalar T>
double max_abs(const Matrix<T>& a) {
  return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff();
}

struct EigenDecomposition {
  Matrix<Complex> vectors;  // unitary U, columns are eigenvectors
  Vector<Complex> values;   // diagonal of Lambda, sorted by descending real part
};

/// Cyclic Jacobi for complex Hermitian matrices.
EigenDecomposition hermitian_eig(const Matrix<Complex>& h);

/// Real skew-symmetric B with exp(B) == exp(A) and ||B||_2 <= pi, obtained by
/// shifting each eigenvalue of A by a multiple of 2*pi*i into [-pi*i, pi*i).
Matrix<double> reduce_norm_skew(const Matrix<double>& a);

/// Skew-Hermitian counterpart of reduce_norm_skew.
Matrix<Complex> reduce_norm_skew_hermitian(const Matrix<Complex>& a);

/// Whether `m` equals the Jacobian of some (c x c x (2r+1) x (2r+1)) filter at
/// spatial side n for any r < n: the block doubly Toeplitz pattern check.
bool has_convolution_structure(const Matrix<double>& m, std::size_t channels, std::size_t n, double tol);

}  // namespace soc
