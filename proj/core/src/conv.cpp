#include "soc/conv.hpp"

#include <algorithm>

namespace soc {
namespace {

// Output positions [lo, hi) along one axis for which tap `d` of a filter with
// radius `pad` reads an in-range input index.
struct Range {
  std::ptrdiff_t lo;
  std::ptrdiff_t hi;
};

Range valid_range(std::size_t extent, std::size_t pad, std::size_t d) {
  const auto n = static_cast<std::ptrdiff_t>(extent);
  const auto shift = static_cast<std::ptrdiff_t>(d) - static_cast<std::ptrdiff_t>(pad);
  return {std::max<std::ptrdiff_t>(0, -shift), std::min<std::ptrdiff_t>(n, n - shift)};
}

}  // namespace

template <Scalar T>
BasicFilter<T>::BasicFilter(BasicTensor<T> weights) : weights_(std::move(weights)) {
  if (weights_.rank() != 4 && weights_.rank() != 5) {
    throw std::invalid_argument("filter: expected 4 or 5 axes, got shape " +
                                shape_to_string(weights_.dims()));
  }
  for (auto d : weights_.dims()) {
    if (d == 0) throw std::invalid_argument("filter: zero extent in " + shape_to_string(weights_.dims()));
  }
}

template <Scalar T>
BasicTensor<T> conv2d(const BasicFilter<T>& filter, const BasicTensor<T>& input) {
  if (filter.is_3d()) throw std::invalid_argument("conv2d: got a 3D filter");
  if (input.rank() != 3) {
    throw std::invalid_argument("conv2d: input must be c x n x n, got " + shape_to_string(input.dims()));
  }
  const std::size_t co = filter.out_channels(), ci = filter.in_channels();
  const std::size_t h = filter.height(), w = filter.width();
  if (input.dim(0) != ci) {
    throw std::invalid_argument("conv2d: filter expects " + std::to_string(ci) + " input channels, input has " +
                                std::to_string(input.dim(0)));
  }
  if (h % 2 == 0 || w % 2 == 0) {
    throw std::invalid_argument("conv2d: filter sides must be odd (pad first), got " +
                                shape_to_string(filter.tensor().dims()));
  }
  const std::size_t rows = input.dim(1), cols = input.dim(2);
  const std::size_t ph = h / 2, pw = w / 2;

  BasicTensor<T> out({co, rows, cols});
  T* dst = out.data().data();
  const T* src = input.data().data();
  const T* taps = filter.tensor().data().data();

  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t i = 0; i < ci; ++i) {
      for (std::size_t dy = 0; dy < h; ++dy) {
        const Range ry = valid_range(rows, ph, dy);
        for (std::size_t dx = 0; dx < w; ++dx) {
          const T k = taps[((o * ci + i) * h + dy) * w + dx];
          if (k == T{}) continue;
          const Range rx = valid_range(cols, pw, dx);
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(dy) - static_cast<std::ptrdiff_t>(ph);
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(dx) - static_cast<std::ptrdiff_t>(pw);
          for (std::ptrdiff_t y = ry.lo; y < ry.hi; ++y) {
            T* orow = dst + (o * rows + y) * cols;
            const T* irow = src + (i * rows + (y + sy)) * cols + sx;
            for (std::ptrdiff_t x = rx.lo; x < rx.hi; ++x) orow[x] += k * irow[x];
          }
        }
      }
    }
  }
  return out;
}

template <Scalar T>
BasicTensor<T> conv3d(const BasicFilter<T>& filter, const BasicTensor<T>& input) {
  if (!filter.is_3d()) throw std::invalid_argument("conv3d: expected a 5-axis filter");
  if (input.rank() != 4) {
    throw std::invalid_argument("conv3d: input must be c x n x n x n, got " + shape_to_string(input.dims()));
  }
  const std::size_t co = filter.out_channels(), ci = filter.in_channels();
  const std::size_t fd = filter.depth(), fh = filter.height(), fw = filter.width();
  if (input.dim(0) != ci) throw std::invalid_argument("conv3d: channel mismatch");
  if (!filter.odd_sized()) throw std::invalid_argument("conv3d: filter sides must be odd");
  const std::size_t n1 = input.dim(1), n2 = input.dim(2), n3 = input.dim(3);

  BasicTensor<T> out({co, n1, n2, n3});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < ci; ++i)
      for (std::size_t a = 0; a < fd; ++a)
        for (std::size_t b = 0; b < fh; ++b)
          for (std::size_t c = 0; c < fw; ++c) {
            const T k = filter(o, i, a, b, c);
            if (k == T{}) continue;
            const Range r1 = valid_range(n1, fd / 2, a);
            const Range r2 = valid_range(n2, fh / 2, b);
            const Range r3 = valid_range(n3, fw / 2, c);
            for (std::ptrdiff_t z = r1.lo; z < r1.hi; ++z)
              for (std::ptrdiff_t y = r2.lo; y < r2.hi; ++y)
                for (std::ptrdiff_t x = r3.lo; x < r3.hi; ++x)
                  out(o, z, y, x) += k * input(i, z + static_cast<std::ptrdiff_t>(a) - static_cast<std::ptrdiff_t>(fd / 2),
                                               y + static_cast<std::ptrdiff_t>(b) - static_cast<std::ptrdiff_t>(fh / 2),
                                               x + static_cast<std::ptrdiff_t>(c) - static_cast<std::ptrdiff_t>(fw / 2));
          }
  return out;
}

template <Scalar T>
BasicFilter<T> conv_transpose(const BasicFilter<T>& filter) {
  if (filter.is_3d()) throw std::invalid_argument("conv_transpose: expected a 4-axis filter, use conv3d_transpose");
  const std::size_t co = filter.out_channels(), ci = filter.in_channels();
  const std::size_t h = filter.height(), w = filter.width();
  BasicFilter<T> out(BasicTensor<T>({ci, co, h, w}));
  for (std::size_t i = 0; i < ci; ++i)
    for (std::size_t j = 0; j < co; ++j)
      for (std::size_t k = 0; k < h; ++k)
        for (std::size_t l = 0; l < w; ++l) out(i, j, k, l) = conj_if_complex(filter(j, i, h - 1 - k, w - 1 - l));
  return out;
}

template <Scalar T>
BasicFilter<T> conv3d_transpose(const BasicFilter<T>& filter) {
  if (!filter.is_3d()) throw std::invalid_argument("conv3d_transpose: expected a 5-axis filter");
  const std::size_t co = filter.out_channels(), ci = filter.in_channels();
  const std::size_t d = filter.depth(), h = filter.height(), w = filter.width();
  BasicFilter<T> out(BasicTensor<T>({ci, co, d, h, w}));
  for (std::size_t i = 0; i < ci; ++i)
    for (std::size_t j = 0; j < co; ++j)
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < h; ++b)
          for (std::size_t c = 0; c < w; ++c)
            out(i, j, a, b, c) = conj_if_complex(filter(j, i, d - 1 - a, h - 1 - b, w - 1 - c));
  return out;
}

template <Scalar T>
BasicFilter<T> pad_to_odd(const BasicFilter<T>& filter) {
  if (filter.odd_sized()) return filter;
  const auto& dims = filter.tensor().dims();
  Shape padded = dims;
  for (std::size_t a = 2; a < padded.size(); ++a) padded[a] += (padded[a] % 2 == 0) ? 1 : 0;
  BasicTensor<T> out(padded);
  for (std::size_t flat = 0; flat < filter.tensor().size(); ++flat) {
    // unravel against the source shape, ravel against the padded one
    std::size_t rem = flat, dst = 0, stride = 1;
    std::size_t idx[5] = {};
    for (std::size_t a = dims.size(); a-- > 0;) {
      idx[a] = rem % dims[a];
      rem /= dims[a];
    }
    for (std::size_t a = dims.size(); a-- > 0;) {
      dst += idx[a] * stride;
      stride *= padded[a];
    }
    out[dst] = filter.tensor()[flat];
  }
  return BasicFilter<T>(std::move(out));
}

Filter conv2d_filter_grad(const Tensor& grad_out, const Tensor& input, std::size_t h, std::size_t w) {
  if (grad_out.rank() != 3 || input.rank() != 3 || grad_out.dim(1) != input.dim(1) ||
      grad_out.dim(2) != input.dim(2)) {
    throw std::invalid_argument("conv2d_filter_grad: incompatible shapes " + shape_to_string(grad_out.dims()) +
                                " and " + shape_to_string(input.dims()));
  }
  const std::size_t co = grad_out.dim(0), ci = input.dim(0);
  const std::size_t rows = input.dim(1), cols = input.dim(2);
  const std::size_t ph = h / 2, pw = w / 2;
  Filter grad = Filter::zeros(co, ci, h, w);
  const double* g = grad_out.data().data();
  const double* src = input.data().data();
  for (std::size_t o = 0; o < co; ++o) {
    for (std::size_t i = 0; i < ci; ++i) {
      for (std::size_t dy = 0; dy < h; ++dy) {
        const Range ry = valid_range(rows, ph, dy);
        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(dy) - static_cast<std::ptrdiff_t>(ph);
        for (std::size_t dx = 0; dx < w; ++dx) {
          const Range rx = valid_range(cols, pw, dx);
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(dx) - static_cast<std::ptrdiff_t>(pw);
          double acc = 0.0;
          for (std::ptrdiff_t y = ry.lo; y < ry.hi; ++y) {
            const double* grow = g + (o * rows + y) * cols;
            const double* irow = src + (i * rows + (y + sy)) * cols + sx;
            for (std::ptrdiff_t x = rx.lo; x < rx.hi; ++x) acc += grow[x] * irow[x];
          }
          grad(o, i, dy, dx) = acc;
        }
      }
    }
  }
  return grad;
}

template <Scalar T>
BasicTensor<T> invertible_downsample(const BasicTensor<T>& input) {
  if (input.rank() != 3) throw std::invalid_argument("invertible_downsample: expected c x n x n");
  const std::size_t c = input.dim(0), rows = input.dim(1), cols = input.dim(2);
  if (rows % 2 != 0 || cols % 2 != 0) {
    throw std::invalid_argument("invertible_downsample: spatial size must be even, got " +
                                shape_to_string(input.dims()));
  }
  BasicTensor<T> out({4 * c, rows / 2, cols / 2});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < rows; ++y)
      for (std::size_t x = 0; x < cols; ++x) out(ch * 4 + (y % 2) * 2 + (x % 2), y / 2, x / 2) = input(ch, y, x);
  return out;
}

template <Scalar T>
BasicTensor<T> invertible_upsample(const BasicTensor<T>& input) {
  if (input.rank() != 3 || input.dim(0) % 4 != 0) {
    throw std::invalid_argument("invertible_upsample: expected 4c x m x m, got " + shape_to_string(input.dims()));
  }
  const std::size_t c = input.dim(0) / 4, rows = input.dim(1) * 2, cols = input.dim(2) * 2;
  BasicTensor<T> out({c, rows, cols});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < rows; ++y)
      for (std::size_t x = 0; x < cols; ++x) out(ch, y, x) = input(ch * 4 + (y % 2) * 2 + (x % 2), y / 2, x / 2);
  return out;
}

template <Scalar T>
BasicTensor<T> pad_channels(const BasicTensor<T>& input, std::size_t target) {
  if (input.rank() < 2) throw std::invalid_argument("pad_channels: expected a channel-first tensor");
  if (target < input.dim(0)) {
    throw std::invalid_argument("pad_channels: target " + std::to_string(target) + " < " +
                                std::to_string(input.dim(0)) + " channels");
  }
  Shape dims = input.dims();
  dims[0] = target;
  std::vector<T> data(input.data().begin(), input.data().end());
  data.resize(shape_product(dims), T{});
  return BasicTensor<T>(std::move(dims), std::move(data));
}

template <Scalar T>
BasicTensor<T> truncate_channels(const BasicTensor<T>& input, std::size_t target) {
  if (input.rank() < 2) throw std::invalid_argument("truncate_channels: expected a channel-first tensor");
  if (target > input.dim(0)) {
    throw std::invalid_argument("truncate_channels: target " + std::to_string(target) + " > " +
                                std::to_string(input.dim(0)) + " channels");
  }
  Shape dims = input.dims();
  dims[0] = target;
  const std::size_t keep = shape_product(dims);
  std::vector<T> data(input.data().begin(), input.data().begin() + static_cast<std::ptrdiff_t>(keep));
  return BasicTensor<T>(std::move(dims), std::move(data));
}

#define SOC_INSTANTIATE(T)                                                        \
  template class BasicFilter<T>;                                                  \
  template BasicTensor<T> conv2d(const BasicFilter<T>&, const BasicTensor<T>&);   \
  template BasicTensor<T> conv3d(const BasicFilter<T>&, const BasicTensor<T>&);   \
  template BasicFilter<T> conv_transpose(const BasicFilter<T>&);                  \
  template BasicFilter<T> conv3d_transpose(const BasicFilter<T>&);                \
  template BasicFilter<T> pad_to_odd(const BasicFilter<T>&);                      \
  template BasicTensor<T> invertible_downsample(const BasicTensor<T>&);           \
  template BasicTensor<T> invertible_upsample(const BasicTensor<T>&);             \
  template BasicTensor<T> pad_channels(const BasicTensor<T>&, std::size_t);       \
  template BasicTensor<T> truncate_channels(const BasicTensor<T>&, std::size_t);

SOC_INSTANTIATE(double)
SOC_INSTANTIATE(Complex)

#undef SOC_INSTANTIATE

}  // namespace soc
