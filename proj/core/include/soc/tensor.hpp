#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace soc {

using Complex = std::complex<double>;
using Shape = std::vector<std::size_t>;

template <typename T>
struct is_complex : std::false_type {};
template <typename T>
struct is_complex<std::complex<T>> : std::true_type {};
template <typename T>
inline constexpr bool is_complex_v = is_complex<T>::value;

template <typename T>
concept Scalar = std::is_same_v<T, double> || std::is_same_v<T, Complex>;

/// Complex conjugate that leaves real scalars untouched.
template <Scalar T>
constexpr T conj_if_complex(const T& v) {
  if constexpr (is_complex_v<T>) {
    return std::conj(v);
  } else {
    return v;
  }
}

/// Raised when an iterative or training procedure produces a non-finite value.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_to_string(const Shape& dims);
std::size_t shape_product(const Shape& dims);

/// Dense row-major tensor of 1 to 5 axes over a real or complex scalar.
template <Scalar T>
class BasicTensor {
 public:
  using value_type = T;
  static constexpr std::size_t kMaxRank = 5;

  BasicTensor() = default;

  explicit BasicTensor(Shape dims) : dims_(std::move(dims)) {
    check_rank();
    data_.assign(shape_product(dims_), T{});
  }

  BasicTensor(Shape dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    check_rank();
    if (data_.size() != shape_product(dims_)) {
      throw std::invalid_argument("tensor: " + std::to_string(data_.size()) +
                                  " scalars do not fill shape " + shape_to_string(dims_));
    }
  }

  static BasicTensor zeros(Shape dims) { return BasicTensor(std::move(dims)); }

  static BasicTensor filled(Shape dims, T value) {
    BasicTensor t(std::move(dims));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  /// Standard normal entries (independent real and imaginary parts for complex).
  template <typename Rng>
  static BasicTensor randn(Shape dims, Rng& rng, double scale = 1.0) {
    BasicTensor t(std::move(dims));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : t.data_) {
      if constexpr (is_complex_v<T>) {
        const double re = normal(rng);
        const double im = normal(rng);
        v = T(scale * re, scale * im);
      } else {
        v = scale * normal(rng);
      }
    }
    return t;
  }

  const Shape& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t flat) { return data_[flat]; }
  const T& operator[](std::size_t flat) const { return data_[flat]; }

  template <typename... Idx>
  T& operator()(Idx... idx) {
    return data_[offset(idx...)];
  }
  template <typename... Idx>
  const T& operator()(Idx... idx) const {
    return data_[offset(idx...)];
  }

  /// Same scalars, new extents; the element count must not change.
  BasicTensor reshaped(Shape dims) const { return BasicTensor(std::move(dims), data_); }

  BasicTensor& operator+=(const BasicTensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }
  BasicTensor& operator-=(const BasicTensor& other) {
    require_same_shape(other, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
  }
  BasicTensor& operator*=(T scale) {
    for (auto& v : data_) v *= scale;
    return *this;
  }

  /// this += scale * other
  BasicTensor& axpy(T scale, const BasicTensor& other) {
    require_same_shape(other, "axpy");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
    return *this;
  }

  friend BasicTensor operator+(BasicTensor a, const BasicTensor& b) { return a += b; }
  friend BasicTensor operator-(BasicTensor a, const BasicTensor& b) { return a -= b; }
  friend BasicTensor operator*(BasicTensor a, T s) { return a *= s; }
  friend BasicTensor operator*(T s, BasicTensor a) { return a *= s; }
  friend BasicTensor operator-(BasicTensor a) { return a *= T(-1.0); }

  bool operator==(const BasicTensor& other) const = default;

  /// Euclidean (Frobenius) norm over all scalars.
  double norm() const {
    double s = 0.0;
    for (const auto& v : data_) s += std::norm(v);
    return std::sqrt(s);
  }

  double max_abs() const {
    double m = 0.0;
    for (const auto& v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  BasicTensor conj() const {
    BasicTensor out = *this;
    for (auto& v : out.data_) v = conj_if_complex(v);
    return out;
  }

 private:
  void check_rank() const {
    if (dims_.empty() || dims_.size() > kMaxRank) {
      throw std::invalid_argument("tensor: rank must be 1..5, got " + std::to_string(dims_.size()));
    }
  }

  void require_same_shape(const BasicTensor& other, const char* op) const {
    if (dims_ != other.dims_) {
      throw std::invalid_argument(std::string("tensor ") + op + ": shape " + shape_to_string(dims_) +
                                  " vs " + shape_to_string(other.dims_));
    }
  }

  template <typename... Idx>
  std::size_t offset(Idx... idx) const {
    const std::size_t ids[] = {static_cast<std::size_t>(idx)...};
    std::size_t flat = 0;
    for (std::size_t a = 0; a < sizeof...(Idx); ++a) flat = flat * dims_[a] + ids[a];
    return flat;
  }

  Shape dims_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;
using ComplexTensor = BasicTensor<Complex>;

/// Real inner product; for complex tensors this is sum(conj(a) * b).
template <Scalar T>
T dot(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.dims() != b.dims()) {
    throw std::invalid_argument("dot: shape " + shape_to_string(a.dims()) + " vs " +
                                shape_to_string(b.dims()));
  }
  T s{};
  for (std::size_t i = 0; i < a.size(); ++i) s += conj_if_complex(a[i]) * b[i];
  return s;
}

template <Scalar T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.dims() != b.dims()) {
    throw std::invalid_argument("max_abs_diff: shape " + shape_to_string(a.dims()) + " vs " +
                                shape_to_string(b.dims()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ComplexTensor to_complex(const Tensor& t);

}  // namespace soc
