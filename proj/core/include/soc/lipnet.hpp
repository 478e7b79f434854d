#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "soc/dataset.hpp"
#include "soc/soc_layer.hpp"

namespace soc {

/// Channel-pairwise activation over halves A = x[:c/2], B = x[c/2:]:
/// first half max(A, B), second half min(A, B). Needs an even channel count.
Tensor maxmin(const Tensor& x);
/// Routes grad_out back through maxmin evaluated at x. On ties A == B the max
/// output is attributed to A and the min output to B.
Tensor maxmin_backward(const Tensor& x, const Tensor& grad_out);

struct BlockSpec {
  std::size_t out_channels = 0;
  int stride = 1;
};

struct LipNetConfig {
  std::size_t input_channels = 1;
  std::size_t input_size = 8;
  std::size_t classes = 2;
  std::vector<BlockSpec> blocks;
  int k_train = kDefaultTrainTerms;
  int k_eval = kDefaultEvalTerms;
  double gain = kDefaultGain;

  /// Five SOC layers on 1x8x8 inputs: [8,1] [8,1] [16,2] [16,1] [16,1].
  static LipNetConfig tiny();

  void validate() const;
  std::size_t output_size() const;  // spatial side after the last block
  std::size_t feature_count() const;

  nlohmann::ordered_json to_json() const;
  static LipNetConfig from_json(const nlohmann::json& j);
};

struct Certificate {
  double margin = 0.0;
  double radius = 0.0;
  std::size_t predicted = 0;
  std::size_t correct = 0;

  bool correct_prediction() const { return predicted == correct; }
  bool certified_at(double r) const { return correct_prediction() && radius >= r; }
};

/// margin = max(0, y_t - max_{i != t} y_i), radius = margin / sqrt(2).
/// `predicted` is the first index attaining the largest logit.
Certificate certify(const Tensor& logits, std::size_t label);

struct LipNetTrace {
  Tensor input;
  std::vector<SocTape> tapes;
  std::vector<Tensor> pre_activations;  // SOC output plus bias, per block
  Tensor features;                      // flattened last activation
  double head_sigma = 0.0;
  Vector<double> head_left;   // W v / ||W v||
  Vector<double> head_right;  // frozen v
  Tensor logits;
};

struct LipNetGradients {
  std::vector<Filter> params;
  std::vector<Tensor> biases;
  Tensor head_weight;
  Tensor head_bias;
  Tensor input;
  /// ||d/d block input|| / ||d/d block output|| for each SOC + MaxMin block.
  std::vector<double> block_norm_ratios;

  LipNetGradients& operator+=(const LipNetGradients& other);
  LipNetGradients& operator*=(double scale);
};

/// Stack of SOC layers, each followed by a per-channel bias and MaxMin, then a
/// dense head whose weight is divided by a power-iterated spectral norm.
class LipNet {
 public:
  /// Random initialization from `seed`.
  LipNet(LipNetConfig config, std::uint64_t seed);
  LipNet(LipNetConfig config, std::vector<SocLayer> layers, std::vector<Tensor> biases, Tensor head_weight,
         Tensor head_bias, Vector<double> head_right);

  const LipNetConfig& config() const noexcept { return config_; }
  std::size_t depth() const noexcept { return layers_.size(); }

  std::vector<SocLayer>& layers() noexcept { return layers_; }
  const std::vector<SocLayer>& layers() const noexcept { return layers_; }
  std::vector<Tensor>& biases() noexcept { return biases_; }
  const std::vector<Tensor>& biases() const noexcept { return biases_; }
  Tensor& head_weight() noexcept { return head_weight_; }
  const Tensor& head_weight() const noexcept { return head_weight_; }
  Tensor& head_bias() noexcept { return head_bias_; }
  const Tensor& head_bias() const noexcept { return head_bias_; }
  const Vector<double>& head_right() const noexcept { return head_right_; }

  /// Warm-started power iteration on every layer and the head.
  void refresh_normalization(int iters, double tol = kPowerIterationTolerance);
  /// Converges every normalization vector; the head vector becomes the exact top
  /// right singular vector. Call before evaluation or certification.
  void prepare_for_evaluation();

  /// Normalization scalar of the head with the current frozen vector.
  double head_sigma() const;

  Tensor forward(const Tensor& x, int k, LipNetTrace* trace = nullptr) const;
  LipNetGradients backward(const LipNetTrace& trace, const Tensor& grad_logits) const;

  /// Spatial side of each block's input, plus the final side.
  std::vector<std::size_t> spatial_sizes() const;

 private:
  void validate() const;

  LipNetConfig config_;
  std::vector<SocLayer> layers_;
  std::vector<Tensor> biases_;
  Tensor head_weight_;  // classes x features
  Tensor head_bias_;
  Vector<double> head_right_;
};

/// Softmax cross-entropy; writes d(loss)/d(logits) when grad is non-null.
double cross_entropy(const Tensor& logits, std::size_t label, Tensor* grad = nullptr);

struct EvalResult {
  double accuracy = 0.0;
  double certified_accuracy = 0.0;
  double loss = 0.0;
  std::vector<Certificate> certificates;
};

/// Forward pass over the dataset with k terms, certificates at `radius`.
EvalResult evaluate(const LipNet& net, const Dataset& data, double radius, int k);

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 32;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;  // applied to SOC parameters M only
  /// Epochs (0-based) at whose start lr is multiplied by lr_drop. Empty means
  /// epochs/4 and 3*epochs/4.
  std::vector<int> lr_drop_epochs;
  double lr_drop = 0.1;
  double radius = 36.0 / 255.0;
  std::uint64_t seed = 0;
  int power_iterations = 1;  // per optimizer step
  int evaluate_every = 1;    // 0: only after the last epoch

  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;      // running mean during the epoch, k_train terms
  double train_accuracy = 0.0;  // running, k_train terms
  bool evaluated = false;
  double accuracy = 0.0;            // after the epoch, k_eval terms
  double certified_accuracy = 0.0;  // after the epoch, k_eval terms

  nlohmann::ordered_json to_json() const;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
};

/// Minibatch SGD with momentum and cross-entropy. Throws invalid_argument on an
/// empty or mismatched dataset and NumericalError on a non-finite loss.
TrainResult train(LipNet& net, const Dataset& data, const TrainConfig& config,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

struct AttackConfig {
  int restarts = 50;
  int steps = 10;
  std::uint64_t seed = 0;
  int k = 0;  // 0: the network's k_eval
};

struct AttackResult {
  bool violated = false;
  double best_gap = 0.0;  // max over restarts of max_{j != t} y_j - y_t
  Tensor adversarial;
};

/// Projected gradient ascent on the best wrong-class logit gap inside the l2
/// ball of radius epsilon around x, from random starts. `violated` reports
/// whether the predicted class ever changed.
AttackResult pgd_search(const LipNet& net, const Tensor& x, std::size_t target, double epsilon,
                        const AttackConfig& config);

/// Directory of SOCT tensors plus manifest.json holding the config and `extra`.
void save_checkpoint(const LipNet& net, const std::filesystem::path& dir,
                     const nlohmann::ordered_json& extra = nlohmann::ordered_json::object());
LipNet load_checkpoint(const std::filesystem::path& dir, nlohmann::json* manifest = nullptr);

}  // namespace soc
