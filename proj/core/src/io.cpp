#include "soc/io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace soc {
namespace {

void put_u64(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> bytes{};
  for (std::size_t b = 0; b < 8; ++b) bytes[b] = static_cast<char>((v >> (8 * b)) & 0xffu);
  os.write(bytes.data(), 8);
}

std::uint64_t get_u64(std::istream& is) {
  std::array<unsigned char, 8> bytes{};
  if (!is.read(reinterpret_cast<char*>(bytes.data()), 8)) throw FormatError("soct: truncated stream");
  std::uint64_t v = 0;
  for (std::size_t b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
  return v;
}

void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }
double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

void write_header(std::ostream& os, DType dtype, const Shape& dims) {
  os.write(kSoctMagic, 4);
  os.put(static_cast<char>(kSoctVersion));
  os.put(static_cast<char>(dtype));
  os.put(static_cast<char>(dims.size()));
  for (auto d : dims) put_u64(os, d);
}

std::uint8_t get_u8(std::istream& is) {
  const int c = is.get();
  if (c == std::char_traits<char>::eof()) throw FormatError("soct: truncated header");
  return static_cast<std::uint8_t>(c);
}

}  // namespace

void write_soct(std::ostream& os, const Tensor& t) {
  write_header(os, DType::f64, t.dims());
  for (double v : t.data()) put_f64(os, v);
  if (!os) throw FormatError("soct: write failed");
}

void write_soct(std::ostream& os, const ComplexTensor& t) {
  write_header(os, DType::complex_f64, t.dims());
  for (const Complex& v : t.data()) {
    put_f64(os, v.real());
    put_f64(os, v.imag());
  }
  if (!os) throw FormatError("soct: write failed");
}

AnyTensor read_soct(std::istream& is) {
  char magic[4] = {};
  if (!is.read(magic, 4) || std::memcmp(magic, kSoctMagic, 4) != 0) throw FormatError("soct: bad magic");
  const auto version = get_u8(is);
  if (version != kSoctVersion) throw FormatError("soct: unsupported version " + std::to_string(version));
  const auto dtype = get_u8(is);
  const auto ndim = get_u8(is);
  if (ndim == 0 || ndim > 5) throw FormatError("soct: rank must be 1..5, got " + std::to_string(ndim));
  Shape dims(ndim);
  for (auto& d : dims) {
    d = get_u64(is);
    if (d == 0 || d > (std::uint64_t{1} << 32)) throw FormatError("soct: implausible extent");
  }
  const std::size_t count = shape_product(dims);
  if (dtype == static_cast<std::uint8_t>(DType::f64)) {
    std::vector<double> data(count);
    for (auto& v : data) v = get_f64(is);
    return Tensor(std::move(dims), std::move(data));
  }
  if (dtype == static_cast<std::uint8_t>(DType::complex_f64)) {
    std::vector<Complex> data(count);
    for (auto& v : data) {
      const double re = get_f64(is);
      const double im = get_f64(is);
      v = Complex(re, im);
    }
    return ComplexTensor(std::move(dims), std::move(data));
  }
  throw FormatError("soct: unknown dtype " + std::to_string(dtype));
}

namespace {
template <typename T>
void save_impl(const std::filesystem::path& path, const T& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_soct(os, t);
}
}  // namespace

void save_tensor(const std::filesystem::path& path, const Tensor& t) { save_impl(path, t); }
void save_tensor(const std::filesystem::path& path, const ComplexTensor& t) { save_impl(path, t); }

AnyTensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  try {
    return read_soct(is);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Tensor load_real_tensor(const std::filesystem::path& path) {
  auto any = load_tensor(path);
  if (auto* t = std::get_if<Tensor>(&any)) return std::move(*t);
  throw FormatError(path.string() + ": expected a real (f64) tensor");
}

}  // namespace soc
