#pragma once

#include <random>
#include <utility>
#include <vector>

#include "soc/skew_filter.hpp"

namespace soc {

inline constexpr int kDefaultTrainTerms = 6;
inline constexpr int kDefaultEvalTerms = 12;
inline constexpr int kMaxTerms = 64;
/// Largest certified truncation error (at k_eval) a layer may be built with.
inline constexpr double kMaxEvalTruncationError = 1e-4;

/// ||J||^k / k!, the truncation error of the k-term exponential series for a
/// skew-symmetric J of spectral norm `norm`. Evaluated in log space.
double error_bound(double norm, int k);

/// Smallest k in [1, 64] with error_bound(norm, k) <= tol.
int terms_for_tolerance(double norm, double tol);

struct SocConfig {
  std::size_t c_in = 1;
  std::size_t c_out = 1;
  int stride = 1;          // 1, or 2 via invertible downsampling
  std::size_t kernel = 3;  // odd filter side
  int k_train = kDefaultTrainTerms;
  int k_eval = kDefaultEvalTerms;
  double gain = kDefaultGain;

  /// Channel count of the internal skew filter.
  std::size_t channels() const { return std::max(stride == 2 ? 4 * c_in : c_in, c_out); }
};

/// Skew orthogonal convolution: the truncated exponential of a normalized
/// skew-symmetric filter's Jacobian, with channel padding/truncation and an
/// optional stride-2 space-to-depth step.
class SocLayer {
 public:
  SocLayer(SocConfig config, Filter params);

  template <typename Rng>
  static SocLayer random(const SocConfig& config, Rng& rng, double scale = 0.1) {
    const std::size_t m = config.channels();
    return SocLayer(config, Filter(Tensor::randn({m, m, config.kernel, config.kernel}, rng, scale)));
  }

  const SocConfig& config() const noexcept { return config_; }
  std::size_t channels() const noexcept { return config_.channels(); }

  const Filter& params() const noexcept { return params_; }
  /// Replaces M; normalization vectors are kept as a warm start.
  void set_params(Filter params);

  NormalizationState& normalization() noexcept { return state_; }
  const NormalizationState& normalization() const noexcept { return state_; }
  /// Warm-started power iteration on the current skew filter.
  void refresh_normalization(int iters, double tol = kPowerIterationTolerance);

  /// Raw L = M - conv_transpose(M).
  Filter skew() const;
  FrozenNormalization frozen_normalization() const;
  /// gain * L / sigma with the current (frozen) normalization vectors.
  Filter normalized_filter() const;
  SkewFilter skew_filter() const;
  double norm_bound() const;

  std::size_t output_size(std::size_t n) const;

 private:
  void validate() const;

  SocConfig config_;
  Filter params_;
  NormalizationState state_;
};

/// Reverse-mode state of one soc_forward call.
struct SocTape {
  int k = 0;
  std::vector<Tensor> intermediates;  // X'_0 .. X'_{k-1}
  Shape input_dims;
  Filter skew;    // raw L at forward time
  Filter filter;  // normalized filter used by the forward pass
  FrozenNormalization frozen;
};

/// sum_{j<k} L^{*j} X / j!, the k-term series over an already channel-matched
/// input. `keep`, when given, receives every iterate X'_j.
Tensor exp_series(const Filter& filter, const Tensor& input, int k, std::vector<Tensor>* keep = nullptr);

/// Channel/stride adjustment applied before the series: downsample (stride 2)
/// then zero-pad to the layer's internal channel count.
Tensor soc_prepare_input(const SocLayer& layer, const Tensor& input);

std::pair<Tensor, SocTape> soc_forward(const SocLayer& layer, const Tensor& input, int k);
/// Forward pass without retaining intermediates.
Tensor soc_apply(const SocLayer& layer, const Tensor& input, int k);

/// S_k(J)^T applied to grad_out, mapped back through the channel/stride steps.
Tensor soc_backward_input(const SocLayer& layer, const SocTape& tape, const Tensor& grad_out);

/// Gradient of <grad_out, forward> with respect to the free parameters M.
Filter soc_backward_filter(const SocLayer& layer, const SocTape& tape, const Tensor& grad_out);

struct SocGradients {
  Tensor input;
  Filter params;
};

/// Both gradients from a single reverse sweep.
SocGradients soc_backward(const SocLayer& layer, const SocTape& tape, const Tensor& grad_out);

}  // namespace soc
