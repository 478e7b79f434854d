#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <variant>

#include "soc/tensor.hpp"

namespace soc {

/// Malformed or unreadable on-disk artifact.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// SOCT container layout (all integers little-endian):
//   "SOCT" | u8 version (1) | u8 dtype (0 = f64, 1 = complex f64) | u8 ndim
//   | ndim x u64 extents | row-major payload (complex as re, im pairs)
inline constexpr char kSoctMagic[4] = {'S', 'O', 'C', 'T'};
inline constexpr std::uint8_t kSoctVersion = 1;

enum class DType : std::uint8_t { f64 = 0, complex_f64 = 1 };

using AnyTensor = std::variant<Tensor, ComplexTensor>;

void write_soct(std::ostream& os, const Tensor& t);
void write_soct(std::ostream& os, const ComplexTensor& t);
AnyTensor read_soct(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
void save_tensor(const std::filesystem::path& path, const ComplexTensor& t);
AnyTensor load_tensor(const std::filesystem::path& path);
/// Loads a file that must hold a real tensor.
Tensor load_real_tensor(const std::filesystem::path& path);

}  // namespace soc
