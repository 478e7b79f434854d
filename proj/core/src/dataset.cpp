#include "soc/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "soc/io.hpp"

namespace soc {

namespace fs = std::filesystem;

void Dataset::validate() const {
  if (inputs.size() != labels.size()) {
    throw std::invalid_argument("dataset: " + std::to_string(inputs.size()) + " inputs but " +
                                std::to_string(labels.size()) + " labels");
  }
  if (classes < 2) throw std::invalid_argument("dataset: need at least 2 classes");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].dims() != inputs.front().dims()) {
      throw std::invalid_argument("dataset: sample " + std::to_string(i) + " has shape " +
                                  shape_to_string(inputs[i].dims()) + ", expected " +
                                  shape_to_string(inputs.front().dims()));
    }
    if (labels[i] >= classes) {
      throw std::invalid_argument("dataset: label " + std::to_string(labels[i]) + " out of range");
    }
  }
}

Dataset make_synthetic(const SyntheticConfig& config) {
  if (config.channels == 0 || config.size == 0) throw std::invalid_argument("synthetic: empty sample shape");
  std::mt19937_64 rng(config.seed);
  const Shape dims{config.channels, config.size, config.size};
  Tensor pattern = Tensor::randn(dims, rng);
  pattern *= 1.0 / pattern.norm();

  Dataset data;
  data.classes = 2;
  data.inputs.reserve(config.samples);
  data.labels.reserve(config.samples);
  for (std::size_t i = 0; i < config.samples; ++i) {
    const std::size_t label = i % 2;
    Tensor x = Tensor::randn(dims, rng, config.noise);
    x.axpy(label == 1 ? config.amplitude : -config.amplitude, pattern);
    data.inputs.push_back(std::move(x));
    data.labels.push_back(label);
  }
  return data;
}

void save_dataset(const Dataset& data, const fs::path& dir) {
  data.validate();
  fs::create_directories(dir);
  nlohmann::ordered_json index;
  index["classes"] = data.classes;
  index["shape"] = data.empty() ? Shape{} : data.inputs.front().dims();
  auto& samples = index["samples"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%06zu.soct", i);
    save_tensor(dir / name, data.inputs[i]);
    samples.push_back({{"file", name}, {"label", data.labels[i]}});
  }
  std::ofstream out(dir / "labels.json");
  if (!out) throw FormatError("cannot write " + (dir / "labels.json").string());
  out << index.dump(2) << '\n';
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path index_path = dir / "labels.json";
  std::ifstream in(index_path);
  if (!in) throw FormatError("cannot open dataset index " + index_path.string());
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed dataset index " + index_path.string() + ": " + e.what());
  }

  Dataset data;
  try {
    data.classes = index.at("classes").get<std::size_t>();
    for (const auto& entry : index.at("samples")) {
      data.inputs.push_back(load_real_tensor(dir / entry.at("file").get<std::string>()));
      data.labels.push_back(entry.at("label").get<std::size_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed dataset index " + index_path.string() + ": " + e.what());
  }
  try {
    data.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("inconsistent dataset: ") + e.what());
  }
  return data;
}

}  // namespace soc
