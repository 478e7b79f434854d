#include "soc/skew_filter.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace soc {
namespace {

struct ReshapeIndex {
  std::size_t row;
  std::size_t col;
};

ReshapeIndex reshape_index(Reshape kind, std::size_t o, std::size_t i, std::size_t y, std::size_t x, std::size_t h,
                           std::size_t w) {
  switch (kind) {
    case Reshape::R:
      return {o * h + y, i * w + x};
    case Reshape::S:
      return {o * w + x, i * h + y};
    case Reshape::T:
      return {o, (i * h + y) * w + x};
    case Reshape::U:
      return {(o * h + y) * w + x, i};
  }
  return {0, 0};
}

std::pair<std::size_t, std::size_t> reshape_size(Reshape kind, std::size_t co, std::size_t ci, std::size_t h,
                                                 std::size_t w) {
  switch (kind) {
    case Reshape::R:
      return {co * h, ci * w};
    case Reshape::S:
      return {co * w, ci * h};
    case Reshape::T:
      return {co, ci * h * w};
    case Reshape::U:
      return {co * h * w, ci};
  }
  return {0, 0};
}

void require_2d(const auto& filter, const char* what) {
  if (filter.is_3d()) throw std::invalid_argument(std::string(what) + ": expected a 4-axis filter");
}

}  // namespace

template <Scalar T>
Matrix<T> reshape_filter(const BasicFilter<T>& filter, Reshape kind) {
  require_2d(filter, "reshape_filter");
  const std::size_t co = filter.out_channels(), ci = filter.in_channels();
  const std::size_t h = filter.height(), w = filter.width();
  const auto [rows, cols] = reshape_size(kind, co, ci, h, w);
  Matrix<T> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < ci; ++i)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const auto idx = reshape_index(kind, o, i, y, x, h, w);
          m(static_cast<Eigen::Index>(idx.row), static_cast<Eigen::Index>(idx.col)) = filter(o, i, y, x);
        }
  return m;
}

Filter filter_from_reshape(const Matrix<double>& matrix, Reshape kind, const Shape& dims) {
  if (dims.size() != 4) throw std::invalid_argument("filter_from_reshape: expected 4 filter axes");
  const std::size_t co = dims[0], ci = dims[1], h = dims[2], w = dims[3];
  const auto [rows, cols] = reshape_size(kind, co, ci, h, w);
  if (static_cast<std::size_t>(matrix.rows()) != rows || static_cast<std::size_t>(matrix.cols()) != cols) {
    throw std::invalid_argument("filter_from_reshape: matrix size does not match filter shape");
  }
  Filter f = Filter::zeros(co, ci, h, w);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < ci; ++i)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const auto idx = reshape_index(kind, o, i, y, x, h, w);
          f(o, i, y, x) = matrix(static_cast<Eigen::Index>(idx.row), static_cast<Eigen::Index>(idx.col));
        }
  return f;
}

Vector<double> default_start_vector(std::size_t size) {
  std::mt19937_64 rng(0x50C5EEDULL + size);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector<double> v(static_cast<Eigen::Index>(size));
  for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = normal(rng);
  return v / v.norm();
}

template <Scalar T>
PowerIterationResult power_iteration(const Matrix<T>& a, Vector<double> start, int max_iters, double tol) {
  PowerIterationResult result;
  if (a.size() == 0 || a.norm() == 0.0) {
    result.right = start;
    return result;
  }
  if (start.size() != a.cols()) throw std::invalid_argument("power_iteration: start vector has wrong size");
  Vector<T> v = start.template cast<T>();
  double sigma = (a * v).norm();
  for (int it = 0; it < max_iters; ++it) {
    Vector<T> next = a.adjoint() * (a * v);
    const double len = next.norm();
    if (len == 0.0) break;  // start vector in the null space
    v = next / len;
    const double updated = (a * v).norm();
    ++result.iterations;
    const double change = std::abs(updated - sigma);
    sigma = updated;
    if (change <= tol * sigma) break;
  }
  result.sigma = sigma;
  if constexpr (is_complex_v<T>) {
    result.right = v.real();  // only meaningful for real inputs; kept for shape
  } else {
    result.right = v;
  }
  return result;
}

template <Scalar T>
SpectralBound spectral_bound(const BasicFilter<T>& filter, int iters) {
  require_2d(filter, "spectral_bound");
  if (iters < 1) throw std::invalid_argument("spectral_bound: iters must be >= 1");
  SpectralBound b;
  b.hw = filter.height() * filter.width();
  double* slots[4] = {&b.r_norm, &b.s_norm, &b.t_norm, &b.u_norm};
  for (Reshape kind : kAllReshapes) {
    const Matrix<T> m = reshape_filter(filter, kind);
    *slots[static_cast<int>(kind)] =
        power_iteration<T>(m, default_start_vector(static_cast<std::size_t>(m.cols())), iters).sigma;
  }
  b.bound = std::sqrt(static_cast<double>(b.hw)) * b.min_norm();
  return b;
}

template <Scalar T>
BasicSkewFilter<T> make_skew(const BasicFilter<T>& params, double gain) {
  require_2d(params, "make_skew");
  if (params.out_channels() != params.in_channels()) {
    throw std::invalid_argument("make_skew: filter must have c_out == c_in, got " +
                                shape_to_string(params.tensor().dims()));
  }
  const BasicFilter<T> odd = pad_to_odd(params);
  BasicSkewFilter<T> sf;
  sf.params = params;
  sf.skew = odd - conv_transpose(odd);
  sf.gain = gain;
  sf.norm_bound = spectral_bound(sf.skew).bound;
  return sf;
}

template <Scalar T>
BasicSkewFilter<T> normalize(const BasicSkewFilter<T>& sf, int iters) {
  const SpectralBound b = spectral_bound(sf.skew, iters);
  BasicSkewFilter<T> out = sf;
  if (b.min_norm() == 0.0) {
    out.norm_bound = 0.0;
    return out;
  }
  out.skew *= T(sf.gain / b.min_norm());
  out.norm_bound = sf.gain * std::sqrt(static_cast<double>(b.hw));
  return out;
}

template <Scalar T>
bool is_skew_filter(const BasicFilter<T>& filter, double tol) {
  if (filter.out_channels() != filter.in_channels()) return false;
  const auto t = filter.is_3d() ? conv3d_transpose(filter) : conv_transpose(filter);
  for (std::size_t k = 0; k < filter.tensor().size(); ++k) {
    if (std::abs(filter.tensor()[k] + t.tensor()[k]) > tol) return false;
  }
  return true;
}

template <Scalar T>
BasicFilter<T> skew_preimage(const BasicFilter<T>& skew) {
  require_2d(skew, "skew_preimage");
  if (!skew.odd_sized() || skew.out_channels() != skew.in_channels()) {
    throw std::invalid_argument("skew_preimage: expected a square-channel odd-sized filter");
  }
  const std::size_t m = skew.out_channels(), h = skew.height(), w = skew.width();
  const std::size_t p = h / 2, q = w / 2;
  BasicFilter<T> out = BasicFilter<T>::zeros(m, m, h, w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t s = 0; s < w; ++s) {
          if (i < j) {
            out(i, j, r, s) = skew(i, j, r, s);
          } else if (i == j) {
            if (r < p || (r == p && s < q)) {
              out(i, j, r, s) = skew(i, j, r, s);
            } else if (r == p && s == q) {
              out(i, j, r, s) = T(0.5) * skew(i, j, r, s);
            }
          }
        }
  return out;
}

template <Scalar T>
BasicFilter<T> make_skew_3d(const BasicFilter<T>& params) {
  if (!params.is_3d()) throw std::invalid_argument("make_skew_3d: expected a 5-axis filter");
  if (params.out_channels() != params.in_channels()) throw std::invalid_argument("make_skew_3d: c_out != c_in");
  const BasicFilter<T> odd = pad_to_odd(params);
  return odd - conv3d_transpose(odd);
}

template <Scalar T>
BasicFilter<T> skew_preimage_3d(const BasicFilter<T>& skew) {
  if (!skew.is_3d() || !skew.odd_sized() || skew.out_channels() != skew.in_channels()) {
    throw std::invalid_argument("skew_preimage_3d: expected a square-channel odd-sized 5-axis filter");
  }
  const std::size_t m = skew.out_channels(), d = skew.depth(), h = skew.height(), w = skew.width();
  const std::size_t p = d / 2, q = h / 2, r = w / 2;
  BasicFilter<T> out(BasicTensor<T>({m, m, d, h, w}));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < h; ++b)
          for (std::size_t c = 0; c < w; ++c) {
            if (i < j) {
              out(i, j, a, b, c) = skew(i, j, a, b, c);
            } else if (i == j) {
              const bool leading = a < p || (a == p && b < q) || (a == p && b == q && c < r);
              if (leading) {
                out(i, j, a, b, c) = skew(i, j, a, b, c);
              } else if (a == p && b == q && c == r) {
                out(i, j, a, b, c) = T(0.5) * skew(i, j, a, b, c);
              }
            }
          }
  return out;
}

void NormalizationState::refresh(const Filter& skew, int iters, double tol) {
  for (Reshape kind : kAllReshapes) {
    const Matrix<double> m = reshape_filter(skew, kind);
    auto& v = right[static_cast<int>(kind)];
    if (v.size() != m.cols()) v = default_start_vector(static_cast<std::size_t>(m.cols()));
    if (iters <= 0) continue;
    const auto result = power_iteration<double>(m, v, iters, tol);
    if (result.iterations > 0) v = result.right;
  }
}

FrozenNormalization evaluate_frozen(const NormalizationState& state, const Filter& skew) {
  if (!state.initialized()) throw std::logic_error("evaluate_frozen: normalization state not initialized");
  FrozenNormalization best;
  best.sigma = std::numeric_limits<double>::infinity();
  for (Reshape kind : kAllReshapes) {
    const Matrix<double> m = reshape_filter(skew, kind);
    const auto& v = state.right[static_cast<int>(kind)];
    if (v.size() != m.cols()) throw std::invalid_argument("evaluate_frozen: state does not match filter shape");
    const Vector<double> av = m * v;
    const double sigma = av.norm();
    if (sigma < best.sigma) {
      best.sigma = sigma;
      best.which = kind;
      best.right = v;
      best.left = sigma > 0.0 ? Vector<double>(av / sigma) : Vector<double>::Zero(av.size());
    }
  }
  return best;
}

Filter apply_normalization(const Filter& skew, const FrozenNormalization& frozen, double gain) {
  if (frozen.sigma == 0.0) return Filter::zeros(skew.out_channels(), skew.in_channels(), skew.height(), skew.width());
  return skew * (gain / frozen.sigma);
}

Filter normalization_backward(const Filter& skew, const FrozenNormalization& frozen, double gain,
                              const Filter& grad_normalized) {
  if (frozen.sigma == 0.0) {
    // gain * L / sigma is not differentiable at L = 0; treat as a dead direction.
    return Filter::zeros(skew.out_channels(), skew.in_channels(), skew.height(), skew.width());
  }
  const double sigma = frozen.sigma;
  const double coupling = dot(grad_normalized.tensor(), skew.tensor());
  const Matrix<double> outer = frozen.left * frozen.right.transpose();
  Filter dsigma = filter_from_reshape(outer, frozen.which, skew.tensor().dims());
  Filter grad = grad_normalized * (gain / sigma);
  grad -= dsigma * (gain * coupling / (sigma * sigma));
  return grad;
}

Filter skew_backward(const Filter& grad_skew) { return grad_skew - conv_transpose(grad_skew); }

#define SOC_INSTANTIATE(T)                                                                      \
  template Matrix<T> reshape_filter(const BasicFilter<T>&, Reshape);                            \
  template PowerIterationResult power_iteration(const Matrix<T>&, Vector<double>, int, double); \
  template SpectralBound spectral_bound(const BasicFilter<T>&, int);                            \
  template BasicSkewFilter<T> make_skew(const BasicFilter<T>&, double);                         \
  template BasicSkewFilter<T> normalize(const BasicSkewFilter<T>&, int);                        \
  template bool is_skew_filter(const BasicFilter<T>&, double);                                  \
  template BasicFilter<T> skew_preimage(const BasicFilter<T>&);                                 \
  template BasicFilter<T> make_skew_3d(const BasicFilter<T>&);                                  \
  template BasicFilter<T> skew_preimage_3d(const BasicFilter<T>&);

SOC_INSTANTIATE(double)
SOC_INSTANTIATE(Complex)

#undef SOC_INSTANTIATE

}  // namespace soc
