#include "soc/tensor.hpp"

#include <functional>
#include <numeric>
#include <sstream>

namespace soc {

std::string shape_to_string(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << 'x';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_product(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

ComplexTensor to_complex(const Tensor& t) {
  std::vector<Complex> data(t.data().begin(), t.data().end());
  return ComplexTensor(t.dims(), std::move(data));
}

}  // namespace soc
