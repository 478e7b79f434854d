#pragma once

#include "soc/tensor.hpp"

namespace soc {

/// Convolution filter: (c_out, c_in, h, w) for 2D or (c_out, c_in, d, h, w) for 3D.
template <Scalar T>
class BasicFilter {
 public:
  BasicFilter() = default;
  explicit BasicFilter(BasicTensor<T> weights);

  static BasicFilter zeros(std::size_t c_out, std::size_t c_in, std::size_t h, std::size_t w) {
    return BasicFilter(BasicTensor<T>({c_out, c_in, h, w}));
  }

  const BasicTensor<T>& tensor() const noexcept { return weights_; }
  BasicTensor<T>& tensor() noexcept { return weights_; }

  bool is_3d() const noexcept { return weights_.rank() == 5; }
  std::size_t out_channels() const { return weights_.dim(0); }
  std::size_t in_channels() const { return weights_.dim(1); }
  std::size_t depth() const { return is_3d() ? weights_.dim(2) : 1; }
  std::size_t height() const { return weights_.dim(weights_.rank() - 2); }
  std::size_t width() const { return weights_.dim(weights_.rank() - 1); }
  /// Number of spatial taps (h*w, or d*h*w for 3D).
  std::size_t taps() const { return depth() * height() * width(); }
  bool odd_sized() const { return depth() % 2 == 1 && height() % 2 == 1 && width() % 2 == 1; }

  template <typename... Idx>
  T& operator()(Idx... idx) {
    return weights_(idx...);
  }
  template <typename... Idx>
  const T& operator()(Idx... idx) const {
    return weights_(idx...);
  }

  BasicFilter& operator+=(const BasicFilter& o) {
    weights_ += o.weights_;
    return *this;
  }
  BasicFilter& operator-=(const BasicFilter& o) {
    weights_ -= o.weights_;
    return *this;
  }
  BasicFilter& operator*=(T s) {
    weights_ *= s;
    return *this;
  }
  friend BasicFilter operator+(BasicFilter a, const BasicFilter& b) { return a += b; }
  friend BasicFilter operator-(BasicFilter a, const BasicFilter& b) { return a -= b; }
  friend BasicFilter operator*(BasicFilter a, T s) { return a *= s; }
  friend BasicFilter operator*(T s, BasicFilter a) { return a *= s; }
  bool operator==(const BasicFilter&) const = default;

 private:
  BasicTensor<T> weights_;
};

using Filter = BasicFilter<double>;
using ComplexFilter = BasicFilter<Complex>;

/// Stride-1 "same" cross-correlation with zero padding; filter sides must be odd.
/// output[o, y, x] = sum_{i, dy, dx} f[o, i, dy, dx] * input[i, y + dy - h/2, x + dx - w/2]
template <Scalar T>
BasicTensor<T> conv2d(const BasicFilter<T>& filter, const BasicTensor<T>& input);

/// 3D analogue of conv2d over (c, n1, n2, n3) inputs.
template <Scalar T>
BasicTensor<T> conv3d(const BasicFilter<T>& filter, const BasicTensor<T>& input);

/// Channel swap, spatial flip and conjugation:
/// out[i, j, k, l] = conj(L[j, i, h-1-k, w-1-l]). The resulting filter's
/// Jacobian is the conjugate transpose of the original's.
template <Scalar T>
BasicFilter<T> conv_transpose(const BasicFilter<T>& filter);

template <Scalar T>
BasicFilter<T> conv3d_transpose(const BasicFilter<T>& filter);

/// Zero-pads even spatial sides on the trailing edge so every side is odd.
template <Scalar T>
BasicFilter<T> pad_to_odd(const BasicFilter<T>& filter);

/// Gradient of <grad_out, conv2d(L, input)> with respect to L, for an h x w filter.
Filter conv2d_filter_grad(const Tensor& grad_out, const Tensor& input, std::size_t h, std::size_t w);

/// Space-to-depth: c x n x n -> 4c x n/2 x n/2. Channel c*4 + (2*by + bx) holds
/// the (by, bx) corner of every 2x2 block of source channel c.
template <Scalar T>
BasicTensor<T> invertible_downsample(const BasicTensor<T>& input);

/// Exact inverse of invertible_downsample.
template <Scalar T>
BasicTensor<T> invertible_upsample(const BasicTensor<T>& input);

/// Appends zero channels up to `target`.
template <Scalar T>
BasicTensor<T> pad_channels(const BasicTensor<T>& input, std::size_t target);

/// Keeps the first `target` channels.
template <Scalar T>
BasicTensor<T> truncate_channels(const BasicTensor<T>& input, std::size_t target);

}  // namespace soc
