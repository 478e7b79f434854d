#include "soc/soc_layer.hpp"

#include <cmath>
#include <string>

namespace soc {

double error_bound(double norm, int k) {
  if (k < 1) throw std::invalid_argument("error_bound: k must be >= 1");
  if (norm < 0.0) throw std::invalid_argument("error_bound: norm must be >= 0");
  if (norm == 0.0) return 0.0;
  return std::exp(k * std::log(norm) - std::lgamma(k + 1.0));
}

int terms_for_tolerance(double norm, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("terms_for_tolerance: tol must be > 0");
  for (int k = 1; k <= kMaxTerms; ++k) {
    if (error_bound(norm, k) <= tol) return k;
  }
  throw std::invalid_argument("terms_for_tolerance: norm " + std::to_string(norm) + " cannot reach tolerance " +
                              std::to_string(tol) + " within " + std::to_string(kMaxTerms) + " terms");
}

SocLayer::SocLayer(SocConfig config, Filter params) : config_(config), params_(std::move(params)) {
  validate();
  state_.refresh(skew(), kDefaultPowerIterations);
}

void SocLayer::validate() const {
  const auto& c = config_;
  if (c.c_in == 0 || c.c_out == 0) throw std::invalid_argument("SocLayer: channel counts must be positive");
  if (c.stride != 1 && c.stride != 2) throw std::invalid_argument("SocLayer: stride must be 1 or 2");
  if (c.kernel % 2 == 0) throw std::invalid_argument("SocLayer: kernel side must be odd");
  if (c.k_train < 1 || c.k_eval < 1) throw std::invalid_argument("SocLayer: term counts must be >= 1");
  const std::size_t m = c.channels();
  const Shape expected{m, m, c.kernel, c.kernel};
  if (params_.tensor().dims() != expected) {
    throw std::invalid_argument("SocLayer: params must be " + shape_to_string(expected) + ", got " +
                                shape_to_string(params_.tensor().dims()));
  }
  const double bound = c.gain * static_cast<double>(c.kernel);
  if (error_bound(bound, c.k_eval) > kMaxEvalTruncationError) {
    throw std::invalid_argument("SocLayer: k_eval=" + std::to_string(c.k_eval) + " leaves truncation error " +
                                std::to_string(error_bound(bound, c.k_eval)) + " at norm bound " +
                                std::to_string(bound));
  }
}

void SocLayer::set_params(Filter params) {
  if (params.tensor().dims() != params_.tensor().dims()) {
    throw std::invalid_argument("SocLayer::set_params: shape mismatch");
  }
  params_ = std::move(params);
}

void SocLayer::refresh_normalization(int iters, double tol) { state_.refresh(skew(), iters, tol); }

Filter SocLayer::skew() const { return params_ - conv_transpose(params_); }

FrozenNormalization SocLayer::frozen_normalization() const { return evaluate_frozen(state_, skew()); }

Filter SocLayer::normalized_filter() const {
  const Filter l = skew();
  return apply_normalization(l, evaluate_frozen(state_, l), config_.gain);
}

SkewFilter SocLayer::skew_filter() const {
  SkewFilter sf;
  sf.params = params_;
  sf.gain = config_.gain;
  const Filter l = skew();
  const auto frozen = evaluate_frozen(state_, l);
  sf.skew = apply_normalization(l, frozen, config_.gain);
  sf.norm_bound = frozen.sigma == 0.0 ? 0.0 : norm_bound();
  return sf;
}

double SocLayer::norm_bound() const { return config_.gain * static_cast<double>(config_.kernel); }

std::size_t SocLayer::output_size(std::size_t n) const {
  if (config_.stride == 2 && n % 2 != 0) {
    throw std::invalid_argument("SocLayer: stride 2 needs an even spatial size, got " + std::to_string(n));
  }
  return n / static_cast<std::size_t>(config_.stride);
}

Tensor exp_series(const Filter& filter, const Tensor& input, int k, std::vector<Tensor>* keep) {
  if (k < 1) throw std::invalid_argument("exp_series: k must be >= 1");
  if (keep) {
    keep->clear();
    keep->reserve(static_cast<std::size_t>(k));
    keep->push_back(input);
  }
  Tensor y = input;
  Tensor term = input;
  double factorial = 1.0;
  for (int j = 2; j <= k; ++j) {
    term = conv2d(filter, term);
    factorial *= static_cast<double>(j - 1);
    y.axpy(1.0 / factorial, term);
    if (keep) keep->push_back(term);
  }
  return y;
}

Tensor soc_prepare_input(const SocLayer& layer, const Tensor& input) {
  const auto& c = layer.config();
  if (input.rank() != 3 || input.dim(0) != c.c_in) {
    throw std::invalid_argument("soc_forward: expected " + std::to_string(c.c_in) + " x n x n input, got " +
                                shape_to_string(input.dims()));
  }
  Tensor x = c.stride == 2 ? invertible_downsample(input) : input;
  return x.dim(0) < layer.channels() ? pad_channels(x, layer.channels()) : x;
}

std::pair<Tensor, SocTape> soc_forward(const SocLayer& layer, const Tensor& input, int k) {
  if (k < 1) throw std::invalid_argument("soc_forward: k must be >= 1");
  SocTape tape;
  tape.k = k;
  tape.input_dims = input.dims();
  tape.skew = layer.skew();
  tape.frozen = evaluate_frozen(layer.normalization(), tape.skew);
  tape.filter = apply_normalization(tape.skew, tape.frozen, layer.config().gain);
  const Tensor x = soc_prepare_input(layer, input);
  Tensor y = exp_series(tape.filter, x, k, &tape.intermediates);
  if (layer.config().c_out < y.dim(0)) y = truncate_channels(y, layer.config().c_out);
  return {std::move(y), std::move(tape)};
}

Tensor soc_apply(const SocLayer& layer, const Tensor& input, int k) {
  const Tensor x = soc_prepare_input(layer, input);
  Tensor y = exp_series(layer.normalized_filter(), x, k);
  if (layer.config().c_out < y.dim(0)) y = truncate_channels(y, layer.config().c_out);
  return y;
}

namespace {

void check_tape(const SocLayer& layer, const SocTape& tape, const Tensor& grad_out) {
  if (tape.k < 1 || tape.intermediates.size() != static_cast<std::size_t>(tape.k)) {
    throw std::invalid_argument("soc backward: tape holds " + std::to_string(tape.intermediates.size()) +
                                " intermediates for k=" + std::to_string(tape.k));
  }
  const Tensor& x0 = tape.intermediates.front();
  if (x0.dim(0) != layer.channels() || tape.filter.out_channels() != layer.channels()) {
    throw std::invalid_argument("soc backward: tape does not belong to this layer");
  }
  const Shape expected{layer.config().c_out, x0.dim(1), x0.dim(2)};
  if (grad_out.dims() != expected) {
    throw std::invalid_argument("soc backward: grad_out must be " + shape_to_string(expected) + ", got " +
                                shape_to_string(grad_out.dims()));
  }
}

// Maps a cotangent on the series input back to the caller's input layout.
Tensor unprepare_grad(const SocLayer& layer, const Tensor& grad) {
  const auto& c = layer.config();
  const std::size_t adjusted = c.stride == 2 ? 4 * c.c_in : c.c_in;
  Tensor g = grad.dim(0) > adjusted ? truncate_channels(grad, adjusted) : grad;
  return c.stride == 2 ? invertible_upsample(g) : g;
}

}  // namespace

Tensor soc_backward_input(const SocLayer& layer, const SocTape& tape, const Tensor& grad_out) {
  check_tape(layer, tape, grad_out);
  const Tensor g = pad_channels(grad_out, layer.channels());
  // S_k(J)^T = S_k(J^T), and J^T is the Jacobian of conv_transpose(L).
  return unprepare_grad(layer, exp_series(conv_transpose(tape.filter), g, tape.k));
}

SocGradients soc_backward(const SocLayer& layer, const SocTape& tape, const Tensor& grad_out) {
  check_tape(layer, tape, grad_out);
  const int k = tape.k;
  const Tensor g = pad_channels(grad_out, layer.channels());
  const Filter transposed = conv_transpose(tape.filter);
  const std::size_t side = layer.config().kernel;

  std::vector<double> coef(static_cast<std::size_t>(k));
  coef[0] = 1.0;
  for (int j = 1; j < k; ++j) coef[static_cast<std::size_t>(j)] = coef[static_cast<std::size_t>(j - 1)] / j;

  // cot holds d(loss)/d(X'_j), walking j from k-1 down to 0.
  Tensor cot = g * coef[static_cast<std::size_t>(k - 1)];
  Filter grad_filter = Filter::zeros(layer.channels(), layer.channels(), side, side);
  for (int j = k - 1; j >= 1; --j) {
    grad_filter += conv2d_filter_grad(cot, tape.intermediates[static_cast<std::size_t>(j - 1)], side, side);
    Tensor next = conv2d(transposed, cot);
    next.axpy(coef[static_cast<std::size_t>(j - 1)], g);
    cot = std::move(next);
  }

  const Filter grad_skew = normalization_backward(tape.skew, tape.frozen, layer.config().gain, grad_filter);
  return {unprepare_grad(layer, cot), skew_backward(grad_skew)};
}

Filter soc_backward_filter(const SocLayer& layer, const SocTape& tape, const Tensor& grad_out) {
  return soc_backward(layer, tape, grad_out).params;
}

}  // namespace soc
