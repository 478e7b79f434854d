#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "soc/tensor.hpp"

namespace soc {

/// Labelled c x n x n samples.
struct Dataset {
  std::vector<Tensor> inputs;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;

  std::size_t size() const noexcept { return inputs.size(); }
  bool empty() const noexcept { return inputs.empty(); }
  /// Throws unless inputs and labels line up, shapes agree and labels < classes.
  void validate() const;
};

/// Two Gaussian classes centred at -amplitude * p and +amplitude * p for a fixed
/// unit-norm pattern p, with i.i.d. per-pixel noise.
struct SyntheticConfig {
  std::size_t samples = 256;
  std::size_t channels = 1;
  std::size_t size = 8;
  double amplitude = 1.0;
  double noise = 0.2;
  std::uint64_t seed = 0;
};

Dataset make_synthetic(const SyntheticConfig& config);

// On disk: one SOCT file per sample plus labels.json
//   {"classes": c, "shape": [...], "samples": [{"file": "...", "label": l}, ...]}
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace soc
