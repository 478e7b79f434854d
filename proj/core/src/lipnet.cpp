#include "soc/lipnet.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <Eigen/SVD>

#include "soc/io.hpp"
#include "soc/parallel.hpp"

namespace soc {

namespace fs = std::filesystem;

namespace {

constexpr int kEvalPowerIterations = 500;

void require_even_channels(const Tensor& x, const char* who) {
  if (x.rank() != 3 || x.dim(0) % 2 != 0) {
    throw std::invalid_argument(std::string(who) + ": expected an even-channel c x n x n tensor, got " +
                                shape_to_string(x.dims()));
  }
}

Eigen::Map<const Matrix<double>> as_matrix(const Tensor& t) {
  // Tensor storage is row-major; Eigen's default is column-major, so map the
  // transpose shape and transpose back at use sites via .transpose().
  return {t.data().data(), static_cast<Eigen::Index>(t.dim(1)), static_cast<Eigen::Index>(t.dim(0))};
}

Vector<double> head_start(std::size_t features) { return default_start_vector(features); }

}  // namespace

Tensor maxmin(const Tensor& x) {
  require_even_channels(x, "maxmin");
  const std::size_t half = x.size() / 2;
  Tensor out(x.dims());
  for (std::size_t i = 0; i < half; ++i) {
    const double a = x[i], b = x[half + i];
    out[i] = a >= b ? a : b;
    out[half + i] = a >= b ? b : a;
  }
  return out;
}

Tensor maxmin_backward(const Tensor& x, const Tensor& grad_out) {
  require_even_channels(x, "maxmin_backward");
  if (grad_out.dims() != x.dims()) throw std::invalid_argument("maxmin_backward: gradient shape mismatch");
  const std::size_t half = x.size() / 2;
  Tensor g(x.dims());
  for (std::size_t i = 0; i < half; ++i) {
    const bool first_is_max = x[i] >= x[half + i];
    g[i] = first_is_max ? grad_out[i] : grad_out[half + i];
    g[half + i] = first_is_max ? grad_out[half + i] : grad_out[i];
  }
  return g;
}

LipNetConfig LipNetConfig::tiny() {
  LipNetConfig c;
  c.blocks = {{8, 1}, {8, 1}, {16, 2}, {16, 1}, {16, 1}};
  return c;
}

void LipNetConfig::validate() const {
  if (input_channels == 0 || input_size == 0) throw std::invalid_argument("lipnet: empty input shape");
  if (classes < 2) throw std::invalid_argument("lipnet: need at least 2 classes");
  if (blocks.empty()) throw std::invalid_argument("lipnet: at least one block is required");
  std::size_t n = input_size;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& blk = blocks[b];
    const std::string where = "lipnet block " + std::to_string(b);
    if (blk.out_channels == 0 || blk.out_channels % 2 != 0) {
      throw std::invalid_argument(where + ": MaxMin needs an even channel count, got " +
                                  std::to_string(blk.out_channels));
    }
    if (blk.stride != 1 && blk.stride != 2) throw std::invalid_argument(where + ": stride must be 1 or 2");
    if (blk.stride == 2) {
      if (n % 2 != 0) throw std::invalid_argument(where + ": stride 2 on odd spatial size " + std::to_string(n));
      n /= 2;
    }
  }
}

std::size_t LipNetConfig::output_size() const {
  std::size_t n = input_size;
  for (const auto& b : blocks) n /= static_cast<std::size_t>(b.stride);
  return n;
}

std::size_t LipNetConfig::feature_count() const {
  const std::size_t n = output_size();
  return blocks.back().out_channels * n * n;
}

nlohmann::ordered_json LipNetConfig::to_json() const {
  nlohmann::ordered_json j;
  j["input_channels"] = input_channels;
  j["input_size"] = input_size;
  j["classes"] = classes;
  auto& b = j["blocks"] = nlohmann::ordered_json::array();
  for (const auto& blk : blocks) b.push_back({{"channels", blk.out_channels}, {"stride", blk.stride}});
  j["k_train"] = k_train;
  j["k_eval"] = k_eval;
  j["gain"] = gain;
  return j;
}

LipNetConfig LipNetConfig::from_json(const nlohmann::json& j) {
  LipNetConfig c = tiny();
  c.input_channels = j.value("input_channels", c.input_channels);
  c.input_size = j.value("input_size", c.input_size);
  c.classes = j.value("classes", c.classes);
  if (j.contains("blocks")) {
    c.blocks.clear();
    for (const auto& b : j.at("blocks")) {
      c.blocks.push_back({b.at("channels").get<std::size_t>(), b.value("stride", 1)});
    }
  }
  c.k_train = j.value("k_train", c.k_train);
  c.k_eval = j.value("k_eval", c.k_eval);
  c.gain = j.value("gain", c.gain);
  c.validate();
  return c;
}

Certificate certify(const Tensor& logits, std::size_t label) {
  if (logits.rank() != 1 || logits.size() < 2 || label >= logits.size()) {
    throw std::invalid_argument("certify: need a logit vector of >= 2 classes and a label in range");
  }
  Certificate c;
  c.correct = label;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[c.predicted]) c.predicted = i;
  }
  double best_other = -INFINITY;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (i != label) best_other = std::max(best_other, logits[i]);
  }
  c.margin = std::max(0.0, logits[label] - best_other);
  if (c.predicted != label) c.margin = 0.0;
  c.radius = c.margin / std::sqrt(2.0);
  return c;
}

LipNetGradients& LipNetGradients::operator+=(const LipNetGradients& other) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i] += other.params[i];
  for (std::size_t i = 0; i < biases.size(); ++i) biases[i] += other.biases[i];
  head_weight += other.head_weight;
  head_bias += other.head_bias;
  return *this;
}

LipNetGradients& LipNetGradients::operator*=(double scale) {
  for (auto& p : params) p *= scale;
  for (auto& b : biases) b *= scale;
  head_weight *= scale;
  head_bias *= scale;
  return *this;
}

LipNet::LipNet(LipNetConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  std::size_t channels = config_.input_channels;
  for (const auto& blk : config_.blocks) {
    SocConfig sc;
    sc.c_in = channels;
    sc.c_out = blk.out_channels;
    sc.stride = blk.stride;
    sc.k_train = config_.k_train;
    sc.k_eval = config_.k_eval;
    sc.gain = config_.gain;
    const double scale = 1.0 / std::sqrt(9.0 * static_cast<double>(sc.channels()));
    layers_.push_back(SocLayer::random(sc, rng, scale));
    biases_.push_back(Tensor::zeros({blk.out_channels}));
    channels = blk.out_channels;
  }
  const std::size_t features = config_.feature_count();
  head_weight_ = Tensor::randn({config_.classes, features}, rng, 1.0 / std::sqrt(static_cast<double>(features)));
  head_bias_ = Tensor::zeros({config_.classes});
  head_right_ = head_start(features);
  refresh_normalization(kDefaultPowerIterations);
}

LipNet::LipNet(LipNetConfig config, std::vector<SocLayer> layers, std::vector<Tensor> biases, Tensor head_weight,
               Tensor head_bias, Vector<double> head_right)
    : config_(std::move(config)),
      layers_(std::move(layers)),
      biases_(std::move(biases)),
      head_weight_(std::move(head_weight)),
      head_bias_(std::move(head_bias)),
      head_right_(std::move(head_right)) {
  config_.validate();
  validate();
}

void LipNet::validate() const {
  if (layers_.size() != config_.blocks.size() || biases_.size() != layers_.size()) {
    throw std::invalid_argument("lipnet: layer count does not match the config");
  }
  std::size_t channels = config_.input_channels;
  for (std::size_t b = 0; b < layers_.size(); ++b) {
    const auto& c = layers_[b].config();
    if (c.c_in != channels || c.c_out != config_.blocks[b].out_channels || c.stride != config_.blocks[b].stride) {
      throw std::invalid_argument("lipnet: layer " + std::to_string(b) + " does not match its block spec");
    }
    if (biases_[b].dims() != Shape{c.c_out}) throw std::invalid_argument("lipnet: bias shape mismatch");
    channels = c.c_out;
  }
  const Shape head{config_.classes, config_.feature_count()};
  if (head_weight_.dims() != head) {
    throw std::invalid_argument("lipnet: head weight must be " + shape_to_string(head) + ", got " +
                                shape_to_string(head_weight_.dims()));
  }
  if (head_bias_.dims() != Shape{config_.classes}) throw std::invalid_argument("lipnet: head bias shape mismatch");
  if (head_right_.size() != static_cast<Eigen::Index>(config_.feature_count())) {
    throw std::invalid_argument("lipnet: head normalization vector has the wrong length");
  }
}

void LipNet::refresh_normalization(int iters, double tol) {
  for (auto& layer : layers_) layer.refresh_normalization(iters, tol);
  const Matrix<double> w = as_matrix(head_weight_).transpose();
  head_right_ = power_iteration<double>(w, head_right_, iters, tol).right;
}

void LipNet::prepare_for_evaluation() {
  for (auto& layer : layers_) layer.refresh_normalization(kEvalPowerIterations, 0.0);
  const Matrix<double> w = as_matrix(head_weight_).transpose();
  if (w.norm() > 0.0) {
    Eigen::JacobiSVD<Matrix<double>> svd(w, Eigen::ComputeThinV);
    head_right_ = svd.matrixV().col(0);
  }
}

double LipNet::head_sigma() const { return (as_matrix(head_weight_).transpose() * head_right_).norm(); }

std::vector<std::size_t> LipNet::spatial_sizes() const {
  std::vector<std::size_t> sizes{config_.input_size};
  for (const auto& b : config_.blocks) sizes.push_back(sizes.back() / static_cast<std::size_t>(b.stride));
  return sizes;
}

Tensor LipNet::forward(const Tensor& x, int k, LipNetTrace* trace) const {
  const Shape expected{config_.input_channels, config_.input_size, config_.input_size};
  if (x.dims() != expected) {
    throw std::invalid_argument("lipnet: input must be " + shape_to_string(expected) + ", got " +
                                shape_to_string(x.dims()));
  }
  if (trace) {
    *trace = LipNetTrace{};
    trace->input = x;
  }
  Tensor h = x;
  for (std::size_t b = 0; b < layers_.size(); ++b) {
    Tensor y;
    if (trace) {
      auto [out, tape] = soc_forward(layers_[b], h, k);
      y = std::move(out);
      trace->tapes.push_back(std::move(tape));
    } else {
      y = soc_apply(layers_[b], h, k);
    }
    const std::size_t plane = y.dim(1) * y.dim(2);
    for (std::size_t c = 0; c < y.dim(0); ++c)
      for (std::size_t p = 0; p < plane; ++p) y[c * plane + p] += biases_[b][c];
    h = maxmin(y);
    if (trace) trace->pre_activations.push_back(std::move(y));
  }

  const Tensor features = h.reshaped({h.size()});
  const Matrix<double> w = as_matrix(head_weight_).transpose();
  const Vector<double> wv = w * head_right_;
  const double sigma = wv.norm();
  Tensor logits = head_bias_;
  if (sigma > 0.0) {
    const Vector<double> z = w * Eigen::Map<const Vector<double>>(features.data().data(), static_cast<Eigen::Index>(features.size()));
    for (std::size_t c = 0; c < logits.size(); ++c) logits[c] += z(static_cast<Eigen::Index>(c)) / sigma;
  }
  if (trace) {
    trace->features = features;
    trace->head_sigma = sigma;
    trace->head_right = head_right_;
    trace->head_left = sigma > 0.0 ? Vector<double>(wv / sigma) : Vector<double>::Zero(wv.size());
    trace->logits = logits;
  }
  return logits;
}

LipNetGradients LipNet::backward(const LipNetTrace& trace, const Tensor& grad_logits) const {
  if (trace.tapes.size() != layers_.size()) throw std::invalid_argument("lipnet backward: trace/net mismatch");
  if (grad_logits.dims() != Shape{config_.classes}) throw std::invalid_argument("lipnet backward: bad logit gradient");

  LipNetGradients out;
  const Matrix<double> w = as_matrix(head_weight_).transpose();
  const auto g = Eigen::Map<const Vector<double>>(grad_logits.data().data(), static_cast<Eigen::Index>(grad_logits.size()));
  const auto f = Eigen::Map<const Vector<double>>(trace.features.data().data(), static_cast<Eigen::Index>(trace.features.size()));
  const double sigma = trace.head_sigma;

  out.head_bias = grad_logits;
  out.head_weight = Tensor::zeros(head_weight_.dims());
  Tensor grad = Tensor::zeros(trace.features.dims());
  if (sigma > 0.0) {
    // logits = W f / sigma with sigma = ||W v||, v frozen.
    const Matrix<double> g_hat = g * f.transpose();
    const double inner = (g_hat.array() * w.array()).sum();
    const Matrix<double> g_w = g_hat / sigma - (inner / (sigma * sigma)) * trace.head_left * trace.head_right.transpose();
    for (Eigen::Index r = 0; r < g_w.rows(); ++r)
      for (Eigen::Index c = 0; c < g_w.cols(); ++c)
        out.head_weight[static_cast<std::size_t>(r * g_w.cols() + c)] = g_w(r, c);
    const Vector<double> g_f = w.transpose() * g / sigma;
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = g_f(static_cast<Eigen::Index>(i));
  }

  const std::size_t depth = layers_.size();
  out.params.resize(depth);
  out.biases.resize(depth);
  out.block_norm_ratios.assign(depth, 0.0);
  grad = grad.reshaped(trace.pre_activations.back().dims());
  for (std::size_t b = depth; b-- > 0;) {
    const double out_norm = grad.norm();
    grad = maxmin_backward(trace.pre_activations[b], grad);
    Tensor gb = Tensor::zeros({grad.dim(0)});
    const std::size_t plane = grad.dim(1) * grad.dim(2);
    for (std::size_t c = 0; c < grad.dim(0); ++c)
      for (std::size_t p = 0; p < plane; ++p) gb[c] += grad[c * plane + p];
    out.biases[b] = std::move(gb);
    SocGradients sg = soc_backward(layers_[b], trace.tapes[b], grad);
    out.params[b] = std::move(sg.params);
    grad = std::move(sg.input);
    out.block_norm_ratios[b] = out_norm > 0.0 ? grad.norm() / out_norm : 1.0;
  }
  out.input = std::move(grad);
  return out;
}

double cross_entropy(const Tensor& logits, std::size_t label, Tensor* grad) {
  if (label >= logits.size()) throw std::invalid_argument("cross_entropy: label out of range");
  double top = logits[0];
  for (std::size_t i = 1; i < logits.size(); ++i) top = std::max(top, logits[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += std::exp(logits[i] - top);
  const double lse = top + std::log(z);
  if (grad) {
    *grad = Tensor(logits.dims());
    for (std::size_t i = 0; i < logits.size(); ++i) (*grad)[i] = std::exp(logits[i] - lse);
    (*grad)[label] -= 1.0;
  }
  return lse - logits[label];
}

EvalResult evaluate(const LipNet& net, const Dataset& data, double radius, int k) {
  data.validate();
  EvalResult r;
  if (data.empty()) return r;
  r.certificates.resize(data.size());
  std::vector<double> losses(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    const Tensor logits = net.forward(data.inputs[i], k);
    losses[i] = cross_entropy(logits, data.labels[i]);
    r.certificates[i] = certify(logits, data.labels[i]);
  });
  std::size_t correct = 0, certified = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    correct += r.certificates[i].correct_prediction() ? 1 : 0;
    certified += r.certificates[i].certified_at(radius) ? 1 : 0;
    r.loss += losses[i];
  }
  const double n = static_cast<double>(data.size());
  r.accuracy = static_cast<double>(correct) / n;
  r.certified_accuracy = static_cast<double>(certified) / n;
  r.loss /= n;
  return r;
}

nlohmann::ordered_json TrainConfig::to_json() const {
  return {{"epochs", epochs},         {"batch_size", batch_size},
          {"lr", lr},                 {"momentum", momentum},
          {"weight_decay", weight_decay}, {"lr_drop_epochs", lr_drop_epochs},
          {"lr_drop", lr_drop},       {"radius", radius},
          {"seed", seed},             {"power_iterations", power_iterations},
          {"evaluate_every", evaluate_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.lr_drop_epochs = j.value("lr_drop_epochs", c.lr_drop_epochs);
  c.lr_drop = j.value("lr_drop", c.lr_drop);
  c.radius = j.value("radius", c.radius);
  c.seed = j.value("seed", c.seed);
  c.power_iterations = j.value("power_iterations", c.power_iterations);
  c.evaluate_every = j.value("evaluate_every", c.evaluate_every);
  if (c.epochs < 0) throw std::invalid_argument("train config: epochs must be >= 0");
  if (c.batch_size == 0) throw std::invalid_argument("train config: batch_size must be positive");
  if (c.power_iterations < 1) throw std::invalid_argument("train config: power_iterations must be >= 1");
  return c;
}

nlohmann::ordered_json EpochMetrics::to_json() const {
  nlohmann::ordered_json j{{"epoch", epoch}, {"lr", lr}, {"train_loss", train_loss}, {"train_accuracy", train_accuracy}};
  if (evaluated) {
    j["accuracy"] = accuracy;
    j["certified_accuracy"] = certified_accuracy;
  }
  return j;
}

namespace {

void sgd_step(Tensor& param, Tensor& velocity, const Tensor& grad, double lr, double momentum, double decay) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + decay * param[i];
    velocity[i] = momentum * velocity[i] + g;
    param[i] -= lr * velocity[i];
  }
}

}  // namespace

TrainResult train(LipNet& net, const Dataset& data, const TrainConfig& config,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
  if (data.empty()) throw std::invalid_argument("train: dataset is empty");
  data.validate();
  if (data.classes != net.config().classes) {
    throw std::invalid_argument("train: dataset has " + std::to_string(data.classes) + " classes, network " +
                                std::to_string(net.config().classes));
  }
  if (config.batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  TrainResult result;
  if (config.epochs <= 0) return result;

  std::vector<int> drops = config.lr_drop_epochs;
  if (drops.empty()) drops = {config.epochs / 4, 3 * config.epochs / 4};

  const std::size_t depth = net.depth();
  std::vector<Tensor> vel_params, vel_bias;
  for (std::size_t b = 0; b < depth; ++b) {
    vel_params.push_back(Tensor::zeros(net.layers()[b].params().tensor().dims()));
    vel_bias.push_back(Tensor::zeros(net.biases()[b].dims()));
  }
  Tensor vel_head = Tensor::zeros(net.head_weight().dims());
  Tensor vel_head_bias = Tensor::zeros(net.head_bias().dims());

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double lr = config.lr;
  const int k = net.config().k_train;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (int d : drops) lr *= d == epoch && epoch > 0 ? config.lr_drop : 1.0;
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      net.refresh_normalization(config.power_iterations);
      std::vector<LipNetGradients> grads(count);
      std::vector<double> losses(count);
      std::vector<char> hits(count);
      parallel_for(count, [&](std::size_t i) {
        const std::size_t idx = order[start + i];
        LipNetTrace trace;
        const Tensor logits = net.forward(data.inputs[idx], k, &trace);
        Tensor g;
        losses[i] = cross_entropy(logits, data.labels[idx], &g);
        hits[i] = certify(logits, data.labels[idx]).correct_prediction() ? 1 : 0;
        grads[i] = net.backward(trace, g);
      });
      for (std::size_t i = 0; i < count; ++i) {
        if (!std::isfinite(losses[i])) {
          throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                               std::to_string(order[start + i]));
        }
        loss_sum += losses[i];
        correct += static_cast<std::size_t>(hits[i]);
      }
      LipNetGradients total = std::move(grads[0]);
      for (std::size_t i = 1; i < count; ++i) total += grads[i];
      total *= 1.0 / static_cast<double>(count);

      for (std::size_t b = 0; b < depth; ++b) {
        Filter p = net.layers()[b].params();
        sgd_step(p.tensor(), vel_params[b], total.params[b].tensor(), lr, config.momentum, config.weight_decay);
        net.layers()[b].set_params(std::move(p));
        sgd_step(net.biases()[b], vel_bias[b], total.biases[b], lr, config.momentum, 0.0);
      }
      sgd_step(net.head_weight(), vel_head, total.head_weight, lr, config.momentum, 0.0);
      sgd_step(net.head_bias(), vel_head_bias, total.head_bias, lr, config.momentum, 0.0);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(data.size());
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    if (!std::isfinite(m.train_loss)) throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch));
    const bool last = epoch + 1 == config.epochs;
    if (last || (config.evaluate_every > 0 && (epoch + 1) % config.evaluate_every == 0)) {
      LipNet snapshot = net;
      snapshot.prepare_for_evaluation();
      const EvalResult ev = evaluate(snapshot, data, config.radius, net.config().k_eval);
      m.evaluated = true;
      m.accuracy = ev.accuracy;
      m.certified_accuracy = ev.certified_accuracy;
    }
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  net.prepare_for_evaluation();
  return result;
}

AttackResult pgd_search(const LipNet& net, const Tensor& x, std::size_t target, double epsilon,
                        const AttackConfig& config) {
  if (target >= net.config().classes) throw std::invalid_argument("pgd_search: target class out of range");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("pgd_search: epsilon must be >= 0");
  const int k = config.k > 0 ? config.k : net.config().k_eval;
  std::mt19937_64 rng(config.seed);
  AttackResult result;
  result.best_gap = -INFINITY;
  result.adversarial = x;

  // Returns the gap max_{j != t} y_j - y_t and the maximizing j.
  auto gap_of = [&](const Tensor& logits) {
    std::size_t best = target == 0 ? 1 : 0;
    for (std::size_t j = 0; j < logits.size(); ++j)
      if (j != target && logits[j] > logits[best]) best = j;
    return std::pair{logits[best] - logits[target], best};
  };
  auto record = [&](const Tensor& z, const Tensor& logits) {
    const double gap = gap_of(logits).first;
    if (gap > result.best_gap) {
      result.best_gap = gap;
      result.adversarial = z;
    }
    if (certify(logits, target).predicted != target) result.violated = true;
  };

  const double step = config.steps > 0 ? 2.5 * epsilon / config.steps : 0.0;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int r = 0; r < config.restarts; ++r) {
    Tensor delta = Tensor::randn(x.dims(), rng);
    const double len = delta.norm();
    if (len > 0.0) delta *= epsilon * unit(rng) / len;
    for (int s = 0; s < config.steps; ++s) {
      const Tensor z = x + delta;
      LipNetTrace trace;
      const Tensor logits = net.forward(z, k, &trace);
      record(z, logits);
      const auto [gap, j] = gap_of(logits);
      Tensor g = Tensor::zeros(logits.dims());
      g[j] = 1.0;
      g[target] = -1.0;
      const Tensor direction = net.backward(trace, g).input;
      const double dn = direction.norm();
      if (dn == 0.0) break;
      delta.axpy(step / dn, direction);
      const double dl = delta.norm();
      if (dl > epsilon) delta *= epsilon / dl;
    }
    const Tensor z = x + delta;
    record(z, net.forward(z, k));
  }
  return result;
}

namespace {

const char* const kReshapeNames[4] = {"r", "s", "t", "u"};

Tensor vector_tensor(const Vector<double>& v) {
  return Tensor({static_cast<std::size_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size()));
}

Vector<double> tensor_vector(const Tensor& t) {
  Vector<double> v(static_cast<Eigen::Index>(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) v(static_cast<Eigen::Index>(i)) = t[i];
  return v;
}

}  // namespace

void save_checkpoint(const LipNet& net, const fs::path& dir, const nlohmann::ordered_json& extra) {
  fs::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = "soc-lipnet";
  manifest["version"] = 1;
  manifest["config"] = net.config().to_json();
  auto& layers = manifest["layers"] = nlohmann::ordered_json::array();
  for (std::size_t b = 0; b < net.depth(); ++b) {
    const std::string stem = "layer" + std::to_string(b);
    const SocLayer& layer = net.layers()[b];
    save_tensor(dir / (stem + "_params.soct"), layer.params().tensor());
    save_tensor(dir / (stem + "_bias.soct"), net.biases()[b]);
    nlohmann::ordered_json entry{{"params", stem + "_params.soct"}, {"bias", stem + "_bias.soct"}};
    auto& norms = entry["normalization"] = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < 4; ++r) {
      const std::string name = stem + "_norm_" + kReshapeNames[r] + ".soct";
      save_tensor(dir / name, vector_tensor(layer.normalization().right[r]));
      norms.push_back(name);
    }
    layers.push_back(entry);
  }
  save_tensor(dir / "head_weight.soct", net.head_weight());
  save_tensor(dir / "head_bias.soct", net.head_bias());
  save_tensor(dir / "head_norm.soct", vector_tensor(net.head_right()));
  manifest["head"] = {{"weight", "head_weight.soct"}, {"bias", "head_bias.soct"}, {"normalization", "head_norm.soct"}};
  for (const auto& [key, value] : extra.items()) manifest[key] = value;

  std::ofstream out(dir / "manifest.json");
  if (!out) throw FormatError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

LipNet load_checkpoint(const fs::path& dir, nlohmann::json* manifest_out) {
  const fs::path path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open checkpoint manifest " + path.string());
  try {
    const nlohmann::json manifest = nlohmann::json::parse(in);
    if (manifest.value("format", "") != "soc-lipnet") throw FormatError(path.string() + " is not a LipNet checkpoint");
    const LipNetConfig config = LipNetConfig::from_json(manifest.at("config"));

    std::vector<SocLayer> layers;
    std::vector<Tensor> biases;
    std::size_t channels = config.input_channels;
    const auto& entries = manifest.at("layers");
    if (entries.size() != config.blocks.size()) throw FormatError("checkpoint layer count does not match its config");
    for (std::size_t b = 0; b < entries.size(); ++b) {
      const auto& e = entries[b];
      SocConfig sc;
      sc.c_in = channels;
      sc.c_out = config.blocks[b].out_channels;
      sc.stride = config.blocks[b].stride;
      sc.k_train = config.k_train;
      sc.k_eval = config.k_eval;
      sc.gain = config.gain;
      SocLayer layer(sc, Filter(load_real_tensor(dir / e.at("params").get<std::string>())));
      const auto& norms = e.at("normalization");
      if (norms.size() != 4) throw FormatError("checkpoint layer " + std::to_string(b) + " needs 4 normalization vectors");
      for (std::size_t r = 0; r < 4; ++r) {
        const Vector<double> v = tensor_vector(load_real_tensor(dir / norms[r].get<std::string>()));
        if (v.size() != layer.normalization().right[r].size()) {
          throw FormatError("checkpoint layer " + std::to_string(b) + " has a malformed normalization vector");
        }
        layer.normalization().right[r] = v;
      }
      layers.push_back(std::move(layer));
      biases.push_back(load_real_tensor(dir / e.at("bias").get<std::string>()));
      channels = sc.c_out;
    }
    const auto& head = manifest.at("head");
    LipNet net(config, std::move(layers), std::move(biases),
               load_real_tensor(dir / head.at("weight").get<std::string>()),
               load_real_tensor(dir / head.at("bias").get<std::string>()),
               tensor_vector(load_real_tensor(dir / head.at("normalization").get<std::string>())));
    if (manifest_out) *manifest_out = manifest;
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed checkpoint manifest " + path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError("inconsistent checkpoint " + dir.string() + ": " + e.what());
  }
}

}  // namespace soc
