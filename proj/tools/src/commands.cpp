#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "soc/dataset.hpp"
#include "soc/io.hpp"
#include "soc/lipnet.hpp"
#include "soc/verify.hpp"

namespace soc::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Refuses to touch an existing file or non-empty directory unless forced.
void claim_output(const fs::path& path, bool force) {
  if (!fs::exists(path) || force) return;
  if (fs::is_directory(path) && fs::is_empty(path)) return;
  throw UsageError("refusing to overwrite " + path.string() + " (pass --force)");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

SyntheticConfig synthetic_from_json(const nlohmann::json& j) {
  SyntheticConfig s;
  s.samples = j.value("samples", s.samples);
  s.channels = j.value("channels", s.channels);
  s.size = j.value("size", s.size);
  s.amplitude = j.value("amplitude", s.amplitude);
  s.noise = j.value("noise", s.noise);
  s.seed = j.value("seed", s.seed);
  return s;
}

ojson synthetic_to_json(const SyntheticConfig& s) {
  return {{"samples", s.samples}, {"channels", s.channels}, {"size", s.size},
          {"amplitude", s.amplitude}, {"noise", s.noise}, {"seed", s.seed}};
}

// ---------------------------------------------------------------- verify

struct VerifyOptions {
  std::string suite = "all";
  std::uint64_t seed = 0;
  std::size_t trials = 10;
  std::string out;
  bool json = false;
  bool force = false;
};

int cmd_verify(const VerifyOptions& o, std::ostream& out) {
  if (!o.out.empty()) claim_output(o.out, o.force);
  VerifyReport report;
  try {
    report = run_suite(o.suite, o.seed, o.trials);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const std::string json = report.to_json().dump(2) + "\n";
  const std::string text = report.to_text();
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    write_text(fs::path(o.out) / "report.json", json);
    write_text(fs::path(o.out) / "report.txt", text);
  }
  out << (o.json ? json : text);
  return report.passed() ? kOk : kNumericalFailure;
}

// ---------------------------------------------------------------- dataset

struct DatasetOptions {
  SyntheticConfig synthetic;
  std::string out;
  bool force = false;
};

int cmd_dataset(const DatasetOptions& o, std::ostream& out) {
  claim_output(o.out, o.force);
  const Dataset data = make_synthetic(o.synthetic);
  save_dataset(data, o.out);
  out << "wrote " << data.size() << " samples of shape " << shape_to_string(data.inputs.front().dims()) << " to "
      << o.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  std::string config;
  std::string out;
  std::string data;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int epochs = -1;
  bool force = false;
};

int cmd_train(const TrainOptions& o, std::ostream& out) {
  claim_output(o.out, o.force);
  nlohmann::json cfg = o.config.empty() ? nlohmann::json::object() : read_json(o.config);
  LipNetConfig net_cfg;
  TrainConfig train_cfg;
  SyntheticConfig synthetic;
  std::uint64_t init_seed = 0;
  try {
    net_cfg = cfg.contains("net") ? LipNetConfig::from_json(cfg.at("net")) : LipNetConfig::tiny();
    train_cfg = TrainConfig::from_json(cfg.value("train", nlohmann::json::object()));
    synthetic = synthetic_from_json(cfg.value("synthetic", nlohmann::json::object()));
    init_seed = cfg.value("init_seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad train config: ") + e.what());
  }
  if (o.seed_set) {
    train_cfg.seed = o.seed;
    init_seed = o.seed;
  }
  if (o.epochs >= 0) train_cfg.epochs = o.epochs;

  ojson data_desc;
  Dataset data;
  if (o.data.empty()) {
    synthetic.channels = net_cfg.input_channels;
    synthetic.size = net_cfg.input_size;
    data = make_synthetic(synthetic);
    data_desc = {{"synthetic", synthetic_to_json(synthetic)}};
  } else {
    data = load_dataset(o.data);
    data_desc = {{"path", o.data}};
  }

  LipNet net(net_cfg, init_seed);
  const auto result = train(net, data, train_cfg, [&](const EpochMetrics& m) {
    out << "epoch " << std::setw(3) << m.epoch << "  lr " << m.lr << "  loss " << std::fixed << std::setprecision(4)
        << m.train_loss << "  train_acc " << m.train_accuracy;
    if (m.evaluated) out << "  acc " << m.accuracy << "  cert_acc " << m.certified_accuracy;
    out << std::defaultfloat << std::setprecision(6) << "\n";
  });

  ojson history = ojson::array();
  for (const auto& m : result.history) history.push_back(m.to_json());
  ojson extra{{"epoch", train_cfg.epochs}, {"init_seed", init_seed}, {"train", train_cfg.to_json()},
              {"data", data_desc}, {"metrics", history}};
  save_checkpoint(net, o.out, extra);
  out << "checkpoint written to " << o.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------- certify

struct CertifyOptions {
  std::string checkpoint;
  std::string data;
  double radius = 36.0 / 255.0;
  int k = 0;
  std::size_t falsify = 0;
  int restarts = 50;
  int steps = 10;
  std::uint64_t seed = 0;
  std::string out;
  bool force = false;
};

int cmd_certify(const CertifyOptions& o, std::ostream& out) {
  if (!o.out.empty()) claim_output(o.out, o.force);
  if (!(o.radius >= 0.0)) throw UsageError("--radius must be >= 0");
  nlohmann::json manifest;
  LipNet net = load_checkpoint(o.checkpoint, &manifest);
  Dataset data;
  if (!o.data.empty()) {
    data = load_dataset(o.data);
  } else if (manifest.contains("data") && manifest["data"].contains("synthetic")) {
    data = make_synthetic(synthetic_from_json(manifest["data"]["synthetic"]));
  } else {
    throw UsageError("checkpoint does not record its data; pass --data");
  }
  const int k = o.k > 0 ? o.k : net.config().k_eval;
  const EvalResult ev = evaluate(net, data, o.radius, k);

  ojson report{{"checkpoint", o.checkpoint}, {"samples", data.size()}, {"radius", o.radius}, {"k", k},
               {"standard_accuracy", ev.accuracy}, {"certified_accuracy", ev.certified_accuracy}};
  int code = kOk;
  if (o.falsify > 0) {
    std::size_t tried = 0, violations = 0;
    for (std::size_t i = 0; i < data.size() && tried < o.falsify; ++i) {
      const Certificate& c = ev.certificates[i];
      if (!c.correct_prediction() || c.radius <= 0.0) continue;
      AttackConfig ac;
      ac.restarts = o.restarts;
      ac.steps = o.steps;
      ac.seed = o.seed + i;
      ac.k = k;
      const AttackResult ar = pgd_search(net, data.inputs[i], c.predicted, 0.99 * c.radius, ac);
      violations += ar.violated ? 1 : 0;
      ++tried;
    }
    report["falsification"] = {{"inputs", tried}, {"restarts", o.restarts}, {"steps", o.steps},
                               {"violations", violations}};
    if (violations > 0) code = kNumericalFailure;
  }
  const std::string text = report.dump(2) + "\n";
  if (!o.out.empty()) write_text(o.out, text);
  out << text;
  return code;
}

// ---------------------------------------------------------------- bench

struct BenchOptions {
  std::vector<int> ks{1, 6, 12};
  std::vector<std::size_t> channels{4, 16};
  std::vector<std::size_t> sizes{8, 16};
  int repeats = 5;
  std::uint64_t seed = 0;
  std::string out;
  bool force = false;
};

int cmd_bench(const BenchOptions& o, std::ostream& out) {
  if (!o.out.empty()) claim_output(o.out, o.force);
  if (o.repeats < 1) throw UsageError("--repeats must be >= 1");
  std::mt19937_64 rng(o.seed);
  ojson rows = ojson::array();
  out << std::left << std::setw(10) << "channels" << std::setw(6) << "n" << std::setw(5) << "k" << "ms/forward\n";
  for (std::size_t c : o.channels) {
    for (std::size_t n : o.sizes) {
      SocConfig cfg;
      cfg.c_in = cfg.c_out = c;
      const SocLayer layer = SocLayer::random(cfg, rng);
      const Tensor x = Tensor::randn({c, n, n}, rng);
      for (int k : o.ks) {
        if (k < 1) throw UsageError("--k values must be >= 1");
        double best = INFINITY;
        for (int r = 0; r < o.repeats; ++r) {
          const auto t0 = std::chrono::steady_clock::now();
          const auto result = soc_forward(layer, x, k);
          const auto t1 = std::chrono::steady_clock::now();
          if (!std::isfinite(result.first.norm())) throw NumericalError("bench: non-finite output");
          best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        out << std::setw(10) << c << std::setw(6) << n << std::setw(5) << k << std::fixed << std::setprecision(4)
            << best << std::defaultfloat << "\n";
        rows.push_back({{"channels", c}, {"n", n}, {"k", k}, {"ms", best}});
      }
    }
  }
  if (!o.out.empty()) write_text(o.out, ojson{{"repeats", o.repeats}, {"rows", rows}}.dump(2) + "\n");
  return kOk;
}

// ---------------------------------------------------------------- inspect

template <Scalar T>
void describe(const BasicTensor<T>& t, std::ostream& out) {
  out << "dtype  " << (is_complex_v<T> ? "complex-f64" : "f64") << "\n"
      << "shape  " << shape_to_string(t.dims()) << "\n"
      << "count  " << t.size() << "\n"
      << "norm   " << t.norm() << "\n"
      << "maxabs " << t.max_abs() << "\n";
  if constexpr (!is_complex_v<T>) {
    if (!t.empty()) {
      const auto [lo, hi] = std::minmax_element(t.data().begin(), t.data().end());
      double sum = 0.0;
      for (double v : t.data()) sum += v;
      out << "min    " << *lo << "\n"
          << "max    " << *hi << "\n"
          << "mean   " << sum / static_cast<double>(t.size()) << "\n";
    }
  }
}

int cmd_inspect(const std::string& path, std::ostream& out) {
  const fs::path p(path);
  if (!fs::exists(p)) throw FormatError("no such file or directory: " + path);
  if (fs::is_directory(p)) {
    if (fs::exists(p / "manifest.json")) {
      nlohmann::json manifest;
      const LipNet net = load_checkpoint(p, &manifest);
      out << "checkpoint " << path << "\n"
          << "config     " << net.config().to_json().dump() << "\n"
          << "layers     " << net.depth() << "\n"
          << "head sigma " << net.head_sigma() << "\n";
      if (manifest.contains("metrics") && !manifest["metrics"].empty()) {
        out << "last epoch " << manifest["metrics"].back().dump() << "\n";
      }
      return kOk;
    }
    if (fs::exists(p / "labels.json")) {
      const Dataset data = load_dataset(p);
      std::vector<std::size_t> counts(data.classes, 0);
      for (auto l : data.labels) ++counts[l];
      out << "dataset " << path << "\n"
          << "samples " << data.size() << "\n"
          << "shape   " << (data.empty() ? "-" : shape_to_string(data.inputs.front().dims())) << "\n"
          << "classes " << data.classes << " (";
      for (std::size_t c = 0; c < counts.size(); ++c) out << (c ? ", " : "") << counts[c];
      out << ")\n";
      return kOk;
    }
    throw FormatError(path + " is neither a checkpoint nor a dataset directory");
  }
  std::visit([&](const auto& t) { describe(t, out); }, load_tensor(p));
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Skew orthogonal convolutions: verification, training and certification", "soc"};
  app.require_subcommand(1);

  VerifyOptions vo;
  auto* verify = app.add_subcommand("verify", "Run randomized oracle checks");
  verify->add_option("--suite", vo.suite, "all, thm1..thm5 or soc")->capture_default_str();
  verify->add_option("--seed", vo.seed, "Base seed")->capture_default_str();
  verify->add_option("--trials", vo.trials, "Trials per suite")->capture_default_str();
  verify->add_option("--out", vo.out, "Directory for report.json and report.txt");
  verify->add_flag("--json", vo.json, "Print the JSON report instead of text");
  verify->add_flag("--force", vo.force, "Overwrite existing output");

  DatasetOptions dso;
  auto* dataset = app.add_subcommand("dataset", "Write the seeded two-Gaussian synthetic dataset");
  dataset->add_option("--out", dso.out, "Output directory")->required();
  dataset->add_option("--samples", dso.synthetic.samples)->capture_default_str();
  dataset->add_option("--channels", dso.synthetic.channels)->capture_default_str();
  dataset->add_option("--size", dso.synthetic.size)->capture_default_str();
  dataset->add_option("--amplitude", dso.synthetic.amplitude)->capture_default_str();
  dataset->add_option("--noise", dso.synthetic.noise)->capture_default_str();
  dataset->add_option("--seed", dso.synthetic.seed)->capture_default_str();
  dataset->add_flag("--force", dso.force, "Overwrite existing output");

  TrainOptions to;
  auto* train_cmd = app.add_subcommand("train", "Train a LipNet and write a checkpoint");
  train_cmd->add_option("--config", to.config, "JSON config with optional net, train, synthetic sections");
  train_cmd->add_option("--out", to.out, "Checkpoint directory")->required();
  train_cmd->add_option("--data", to.data, "Dataset directory (default: synthetic task)");
  auto* seed_opt = train_cmd->add_option("--seed", to.seed, "Overrides init and shuffle seeds");
  train_cmd->add_option("--epochs", to.epochs, "Overrides train.epochs");
  train_cmd->add_flag("--force", to.force, "Overwrite existing output");

  CertifyOptions co;
  auto* certify_cmd = app.add_subcommand("certify", "Standard and certified accuracy of a checkpoint");
  certify_cmd->add_option("--checkpoint", co.checkpoint, "Checkpoint directory")->required();
  certify_cmd->add_option("--data", co.data, "Dataset directory (default: the checkpoint's synthetic task)");
  certify_cmd->add_option("--radius", co.radius, "l2 radius")->capture_default_str();
  certify_cmd->add_option("--k", co.k, "Series terms (default: k_eval)");
  certify_cmd->add_option("--falsify", co.falsify, "Attack this many certified inputs with PGD");
  certify_cmd->add_option("--restarts", co.restarts)->capture_default_str();
  certify_cmd->add_option("--steps", co.steps)->capture_default_str();
  certify_cmd->add_option("--seed", co.seed)->capture_default_str();
  certify_cmd->add_option("--out", co.out, "Report file");
  certify_cmd->add_flag("--force", co.force, "Overwrite existing output");

  BenchOptions bo;
  auto* bench = app.add_subcommand("bench", "Time soc_forward across shapes and term counts");
  bench->add_option("--k", bo.ks, "Term counts")->delimiter(',')->capture_default_str();
  bench->add_option("--channels", bo.channels)->delimiter(',')->capture_default_str();
  bench->add_option("--size", bo.sizes)->delimiter(',')->capture_default_str();
  bench->add_option("--repeats", bo.repeats)->capture_default_str();
  bench->add_option("--seed", bo.seed)->capture_default_str();
  bench->add_option("--out", bo.out, "JSON timing file");
  bench->add_flag("--force", bo.force, "Overwrite existing output");

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "Describe a SOCT tensor, checkpoint or dataset");
  inspect->add_option("path", inspect_path)->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }
  to.seed_set = seed_opt->count() > 0;

  try {
    if (*verify) return cmd_verify(vo, out);
    if (*dataset) return cmd_dataset(dso, out);
    if (*train_cmd) return cmd_train(to, out);
    if (*certify_cmd) return cmd_certify(co, out);
    if (*bench) return cmd_bench(bo, out);
    if (*inspect) return cmd_inspect(inspect_path, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumericalFailure;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << "\n";
    return kNumericalFailure;
  }
  return kUsageError;
}

}  // namespace soc::cli
