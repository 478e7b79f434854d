#include "soc/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include <Eigen/SVD>

namespace soc {

Matrix<double> shift_matrix(std::size_t n, std::ptrdiff_t offset) {
  Matrix<double> p = Matrix<double>::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < n; ++r) {
    const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(r) - offset;
    if (c >= 0 && c < static_cast<std::ptrdiff_t>(n)) p(static_cast<Eigen::Index>(r), c) = 1.0;
  }
  return p;
}

template <Scalar T>
Matrix<T> kronecker(const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

template <Scalar T>
DenseJacobian<T> materialize_jacobian(const BasicFilter<T>& filter, std::size_t n) {
  if (!filter.odd_sized()) throw std::invalid_argument("materialize_jacobian: filter sides must be odd");
  const std::size_t d = filter.depth(), h = filter.height(), w = filter.width();
  if (n < std::max({d, h, w})) {
    throw std::invalid_argument("materialize_jacobian: n=" + std::to_string(n) + " smaller than filter " +
                                shape_to_string(filter.tensor().dims()));
  }
  const bool three_d = filter.is_3d();
  const std::size_t co = filter.out_channels(), ci = filter.in_channels();
  const std::size_t block = three_d ? n * n * n : n * n;

  // Offset of tap t along an axis of radius r: a cross-correlation tap t reads
  // input index out + t - r, i.e. row - col == r - t.
  auto offset = [](std::size_t radius, std::size_t tap) {
    return static_cast<std::ptrdiff_t>(radius) - static_cast<std::ptrdiff_t>(tap);
  };
  std::vector<Matrix<T>> py(h), px(w), pz(d);
  for (std::size_t t = 0; t < h; ++t) py[t] = shift_matrix(n, offset(h / 2, t)).template cast<T>();
  for (std::size_t t = 0; t < w; ++t) px[t] = shift_matrix(n, offset(w / 2, t)).template cast<T>();
  for (std::size_t t = 0; t < d; ++t) pz[t] = shift_matrix(n, offset(d / 2, t)).template cast<T>();

  DenseJacobian<T> jac;
  jac.n = n;
  jac.c_out = co;
  jac.c_in = ci;
  jac.spatial_rank = three_d ? 3 : 2;
  jac.matrix = Matrix<T>::Zero(static_cast<Eigen::Index>(co * block), static_cast<Eigen::Index>(ci * block));
  const auto bs = static_cast<Eigen::Index>(block);
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t i = 0; i < ci; ++i) {
      auto blk = jac.matrix.block(static_cast<Eigen::Index>(o) * bs, static_cast<Eigen::Index>(i) * bs, bs, bs);
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < h; ++b)
          for (std::size_t c = 0; c < w; ++c) {
            const T tap = three_d ? filter(o, i, a, b, c) : filter(o, i, b, c);
            if (tap == T{}) continue;
            if (three_d) {
              blk += tap * kronecker<T>(pz[a], kronecker<T>(py[b], px[c]));
            } else {
              blk += tap * kronecker<T>(py[b], px[c]);
            }
          }
    }
  }
  return jac;
}

template <Scalar T>
Vector<T> vectorize(const BasicTensor<T>& t) {
  Vector<T> v(static_cast<Eigen::Index>(t.size()));
  for (std::size_t k = 0; k < t.size(); ++k) v(static_cast<Eigen::Index>(k)) = t[k];
  return v;
}

template <Scalar T>
BasicTensor<T> unvectorize(const Vector<T>& v, const Shape& dims) {
  std::vector<T> data(v.data(), v.data() + v.size());
  return BasicTensor<T>(dims, std::move(data));
}

template <Scalar T>
Matrix<T> dense_expm(const Matrix<T>& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("dense_expm: matrix must be square");
  const Eigen::Index n = a.rows();
  // The Frobenius norm bounds the spectral norm from above.
  const double norm = a.norm();
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Matrix<T> scaled = a / T(std::ldexp(1.0, squarings));

  Matrix<T> sum = Matrix<T>::Identity(n, n);
  Matrix<T> term = Matrix<T>::Identity(n, n);
  for (int j = 1; j < 100; ++j) {
    term = (term * scaled) / T(static_cast<double>(j));
    sum += term;
    if (term.norm() < 1e-18) break;
  }
  for (int s = 0; s < squarings; ++s) sum = (sum * sum).eval();
  return sum;
}

template <Scalar T>
Matrix<T> truncated_series(const Matrix<T>& a, int k) {
  if (a.rows() != a.cols()) throw std::invalid_argument("truncated_series: matrix must be square");
  if (k < 1) throw std::invalid_argument("truncated_series: k must be >= 1");
  const Eigen::Index n = a.rows();
  Matrix<T> sum = Matrix<T>::Identity(n, n);
  Matrix<T> term = Matrix<T>::Identity(n, n);
  for (int j = 1; j < k; ++j) {
    term = (term * a) / T(static_cast<double>(j));
    sum += term;
  }
  return sum;
}

template <Scalar T>
double spectral_norm(const Matrix<T>& a) {
  if (a.size() == 0) return 0.0;
  Eigen::BDCSVD<Matrix<T>> svd(a);
  return svd.singularValues()(0);
}

EigenDecomposition hermitian_eig(const Matrix<Complex>& h) {
  if (h.rows() != h.cols()) throw std::invalid_argument("hermitian_eig: matrix must be square");
  if (max_abs<Complex>(h - h.adjoint()) > 1e-12) throw std::invalid_argument("hermitian_eig: matrix is not Hermitian");
  const Eigen::Index n = h.rows();
  Matrix<Complex> a = h;
  Matrix<Complex> u = Matrix<Complex>::Identity(n, n);
  const double scale = std::max(1.0, h.norm());

  auto off_diagonal = [&] {
    double s = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = 0; q < n; ++q)
        if (p != q) s += std::norm(a(p, q));
    return std::sqrt(s);
  };

  for (int sweep = 0; sweep < 100 && off_diagonal() > 1e-12 * scale; ++sweep) {
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const Complex apq = a(p, q);
        const double mag = std::abs(apq);
        if (mag == 0.0) continue;
        // Phase e rotates a(p, q) onto the positive real axis; then a real
        // Jacobi rotation (c, s) annihilates it.
        const Complex e = std::conj(apq) / mag;
        const double theta = (a(q, q).real() - a(p, p).real()) / (2.0 * mag);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // W = [[c, s], [-s e, c e]] acting on coordinates (p, q).
        const Complex w00 = c, w01 = s, w10 = -s * e, w11 = c * e;
        for (Eigen::Index r = 0; r < n; ++r) {
          const Complex rp = a(r, p), rq = a(r, q);
          a(r, p) = rp * w00 + rq * w10;
          a(r, q) = rp * w01 + rq * w11;
        }
        for (Eigen::Index r = 0; r < n; ++r) {
          const Complex pr = a(p, r), qr = a(q, r);
          a(p, r) = std::conj(w00) * pr + std::conj(w10) * qr;
          a(q, r) = std::conj(w01) * pr + std::conj(w11) * qr;
        }
        for (Eigen::Index r = 0; r < n; ++r) {
          const Complex rp = u(r, p), rq = u(r, q);
          u(r, p) = rp * w00 + rq * w10;
          u(r, q) = rp * w01 + rq * w11;
        }
        a(p, q) = a(q, p) = Complex(0.0);
        a(p, p) = a(p, p).real();
        a(q, q) = a(q, q).real();
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index x, Eigen::Index y) { return a(x, x).real() > a(y, y).real(); });
  EigenDecomposition out;
  out.vectors.resize(n, n);
  out.values.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = order[static_cast<std::size_t>(k)];
    out.vectors.col(k) = u.col(src);
    out.values(k) = Complex(a(src, src).real(), 0.0);
  }
  return out;
}

namespace {

// Imaginary part of an eigenvalue of a skew matrix, shifted by 2*pi*k into [-pi, pi).
double wrap_to_pi(double theta) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double mu = theta - two_pi * std::round(theta / two_pi);
  if (mu >= std::numbers::pi) mu -= two_pi;
  if (mu < -std::numbers::pi) mu += two_pi;
  return mu;
}

Matrix<Complex> reduce_via_eig(const Matrix<Complex>& a) {
  // a is skew-Hermitian, so i*a is Hermitian: i a = U diag(h) U^H and the
  // eigenvalues of a are -i h.
  const Matrix<Complex> hermitian = Complex(0.0, 1.0) * a;
  // Remove rounding-level asymmetry before the Hermitian check.
  const Matrix<Complex> symmetrized = 0.5 * (hermitian + hermitian.adjoint());
  const EigenDecomposition eig = hermitian_eig(symmetrized);
  Vector<Complex> shifted(eig.values.size());
  for (Eigen::Index j = 0; j < eig.values.size(); ++j) {
    shifted(j) = Complex(0.0, wrap_to_pi(-eig.values(j).real()));
  }
  return eig.vectors * shifted.asDiagonal() * eig.vectors.adjoint();
}

}  // namespace

Matrix<double> reduce_norm_skew(const Matrix<double>& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("reduce_norm_skew: matrix must be square");
  if (max_abs<double>(a + a.transpose()) > 1e-12) throw std::invalid_argument("reduce_norm_skew: matrix is not skew-symmetric");
  const Matrix<Complex> b = reduce_via_eig(a.cast<Complex>());
  const double residue = b.imag().cwiseAbs().maxCoeff();
  if (residue > 1e-9) {
    throw NumericalError("reduce_norm_skew: reconstruction has imaginary residue " + std::to_string(residue));
  }
  const Matrix<double> real = b.real();
  return 0.5 * (real - real.transpose());
}

Matrix<Complex> reduce_norm_skew_hermitian(const Matrix<Complex>& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("reduce_norm_skew_hermitian: matrix must be square");
  if (max_abs<Complex>(a + a.adjoint()) > 1e-12) {
    throw std::invalid_argument("reduce_norm_skew_hermitian: matrix is not skew-Hermitian");
  }
  const Matrix<Complex> b = reduce_via_eig(a);
  return 0.5 * (b - b.adjoint());
}

bool has_convolution_structure(const Matrix<double>& m, std::size_t channels, std::size_t n, double tol) {
  const auto block = static_cast<Eigen::Index>(n * n);
  if (m.rows() != block * static_cast<Eigen::Index>(channels) || m.cols() != m.rows()) return false;
  for (std::size_t o = 0; o < channels; ++o) {
    for (std::size_t i = 0; i < channels; ++i) {
      std::map<std::pair<std::ptrdiff_t, std::ptrdiff_t>, double> seen;
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x)
          for (std::size_t y2 = 0; y2 < n; ++y2)
            for (std::size_t x2 = 0; x2 < n; ++x2) {
              const double v = m(static_cast<Eigen::Index>(o) * block + static_cast<Eigen::Index>(y * n + x),
                                 static_cast<Eigen::Index>(i) * block + static_cast<Eigen::Index>(y2 * n + x2));
              const auto key = std::make_pair(static_cast<std::ptrdiff_t>(y) - static_cast<std::ptrdiff_t>(y2),
                                              static_cast<std::ptrdiff_t>(x) - static_cast<std::ptrdiff_t>(x2));
              auto [it, inserted] = seen.emplace(key, v);
              if (!inserted && std::abs(it->second - v) > tol) return false;
            }
    }
  }
  return true;
}

#define SOC_INSTANTIATE(T)                                                              \
  template Matrix<T> kronecker(const Matrix<T>&, const Matrix<T>&);                     \
  template DenseJacobian<T> materialize_jacobian(const BasicFilter<T>&, std::size_t);   \
  template Vector<T> vectorize(const BasicTensor<T>&);                                  \
  template BasicTensor<T> unvectorize(const Vector<T>&, const Shape&);                  \
  template Matrix<T> dense_expm(const Matrix<T>&);                                      \
  template Matrix<T> truncated_series(const Matrix<T>&, int);                           \
  template double spectral_norm(const Matrix<T>&);

SOC_INSTANTIATE(double)
SOC_INSTANTIATE(Complex)

#undef SOC_INSTANTIATE

}  // namespace soc
