// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>

#include "soc/lipnet.hpp"
#include "soc/oracle.hpp"
#include "soc/verify.hpp"

#ifdef SOC_HAVE_CLI
#include "commands.hpp"
#endif

namespace {

using namespace soc;
using Rng = std::mt19937_64;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

// Worst max_error / bound across rows whose name starts with `prefix`.
std::pair<std::size_t, double> summarize(const VerifyReport& r, const std::string& prefix = "") {
  std::size_t count = 0;
  double worst = 0.0;
  for (const auto& row : r.rows) {
    if (row.check.rfind(prefix, 0) != 0) continue;
    ++count;
    const double ratio = row.bound > 0.0 ? row.max_error / row.bound : (row.max_error > 0.0 ? INFINITY : 0.0);
    worst = std::max(worst, ratio);
  }
  return {count, worst};
}

Outcome suite_outcome(const std::string& suite, std::size_t trials) {
  const VerifyReport r = run_suite(suite, 2024, trials);
  const auto [count, worst] = summarize(r);
  return {r.passed(), fmt("%s: %zu trials, %zu/%zu checks, worst error/bound %.3e", suite.c_str(), trials,
                          count - r.failures(), count, worst)};
}

Outcome criterion1() {
  const double v = error_bound(1.8, 12);
  const bool pass = std::stod(fmt("%.3e", v)) == 2.415e-6;
  return {pass, fmt("error_bound(1.8, 12) = %.6e", v)};
}

Outcome criterion4() {
  Outcome o = suite_outcome("thm5", 50);
  // Gain 0.7 on 3x3 filters: exact norm after normalization must sit under 2.1.
  Rng rng(trial_seed(2024, "acceptance.norm21", 0));
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + static_cast<std::size_t>(trial % 3);
    const SkewFilter sf = normalize(make_skew(Filter(Tensor::randn({m, m, 3, 3}, rng))), 1000);
    worst = std::max(worst, spectral_norm<double>(materialize_jacobian(sf.skew, 6).matrix));
  }
  o.pass = o.pass && worst <= 2.1 + 1e-9;
  o.detail += fmt("; 3x3 gain 0.7: max exact sigma %.12f", worst);
  return o;
}

Tensor central_difference(const std::function<double(const Tensor&)>& f, const Tensor& at) {
  constexpr double eps = 1e-5;
  Tensor g(at.dims());
  Tensor probe = at;
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double up = f(probe);
    probe[i] = saved - eps;
    const double down = f(probe);
    probe[i] = saved;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

double relative(const Tensor& got, const Tensor& want) { return (got - want).norm() / std::max(want.norm(), 1e-300); }

Outcome criterion7() {
  Rng rng(trial_seed(2024, "acceptance.gradients", 0));
  double worst_input = 0.0, worst_filter = 0.0, worst_adjoint = 0.0;
  int configs = 0;
  for (int trial = 0; trial < 24; ++trial) {
    SocConfig cfg;
    cfg.c_in = 1 + static_cast<std::size_t>(trial % 2);
    cfg.c_out = 1 + static_cast<std::size_t>((trial / 2) % 2);
    cfg.stride = trial % 6 == 5 ? 2 : 1;
    const std::size_t n = cfg.stride == 2 ? 6 : 4 + static_cast<std::size_t>(trial % 2);
    const int k = 2 + trial % 5;
    SocLayer layer = SocLayer::random(cfg, rng, 1.0);
    // Skew filters tie the R/S and T/U reshape norms; converged vectors keep the
    // frozen min smooth within the difference step.
    layer.refresh_normalization(1000, 0.0);
    const Tensor x = Tensor::randn({cfg.c_in, n, n}, rng);
    const auto [y, tape] = soc_forward(layer, x, k);
    const Tensor v = Tensor::randn(y.dims(), rng);

    const Tensor gi = soc_backward_input(layer, tape, v);
    worst_input = std::max(
        worst_input, relative(gi, central_difference([&](const Tensor& u) { return dot(v, soc_apply(layer, u, k)); }, x)));

    SocLayer probe = layer;
    const Tensor fd = central_difference(
        [&](const Tensor& m) {
          probe.set_params(Filter(m));
          return dot(v, soc_apply(probe, x, k));
        },
        layer.params().tensor());
    worst_filter = std::max(worst_filter, relative(soc_backward_filter(layer, tape, v).tensor(), fd));

    const double lhs = dot(v, y), rhs = dot(gi, x);
    worst_adjoint = std::max(worst_adjoint, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
    ++configs;
  }
  const bool pass = configs >= 20 && worst_input <= 1e-6 && worst_filter <= 1e-6 && worst_adjoint <= 1e-10;
  return {pass, fmt("%d configs: input rel %.2e, filter rel %.2e, adjoint %.2e", configs, worst_input, worst_filter,
                    worst_adjoint)};
}

Outcome criterion8() {
  Rng rng(trial_seed(2024, "acceptance.gnp", 0));
  LipNetConfig cfg;
  cfg.input_channels = 4;
  cfg.input_size = 8;
  cfg.blocks.assign(5, BlockSpec{4, 1});
  LipNet net(cfg, 8);
  for (auto& layer : net.layers()) layer.set_params(Filter(Tensor::randn({4, 4, 3, 3}, rng, 0.3)));
  for (auto& b : net.biases()) b = Tensor::randn(b.dims(), rng, 0.1);
  net.prepare_for_evaluation();
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    LipNetTrace trace;
    const Tensor logits = net.forward(Tensor::randn({4, 8, 8}, rng), cfg.k_eval, &trace);
    const LipNetGradients g = net.backward(trace, Tensor::randn(logits.dims(), rng));
    for (double r : g.block_norm_ratios) worst = std::max(worst, std::abs(r - 1.0));
  }
  return {worst <= 1e-3, fmt("5 blocks x 20 inputs: max |ratio - 1| = %.3e", worst)};
}

Outcome criterion9() {
  const Dataset data = make_synthetic(SyntheticConfig{});
  LipNet net(LipNetConfig::tiny(), 0);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.evaluate_every = 0;
  double best_train = 0.0;
  train(net, data, cfg, [&](const EpochMetrics& m) { best_train = std::max(best_train, m.train_accuracy); });
  const double radius = 36.0 / 255.0;
  const EvalResult ev = evaluate(net, data, radius, net.config().k_eval);

  std::size_t attacked = 0, violations = 0;
  for (std::size_t i = 0; i < data.size() && attacked < 20; ++i) {
    const Certificate& c = ev.certificates[i];
    if (!c.correct_prediction() || c.radius <= 0.0) continue;
    AttackConfig ac;
    ac.restarts = 50;
    ac.steps = 10;
    ac.seed = trial_seed(2024, "acceptance.pgd", i);
    violations += pgd_search(net, data.inputs[i], c.predicted, 0.99 * c.radius, ac).violated ? 1 : 0;
    ++attacked;
  }
  const bool pass = std::max(best_train, ev.accuracy) >= 0.95 && ev.certified_accuracy > 0.0 && attacked == 20 &&
                    violations == 0;
  return {pass, fmt("train acc %.4f, eval acc %.4f, certified@36/255 %.4f, pgd %zu inputs x 50 restarts: %zu "
                    "violations",
                    best_train, ev.accuracy, ev.certified_accuracy, attacked, violations)};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome criterion10() {
#ifdef SOC_HAVE_CLI
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "soc_acceptance_determinism";
  fs::remove_all(root);
  std::string reports[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = root / std::to_string(run);
    std::ostringstream out, err;
    const int code = cli::run({"verify", "--suite", "all", "--seed", "7", "--out", dir.string()}, out, err);
    if (code != cli::kOk) return {false, "soc verify exited " + std::to_string(code) + ": " + err.str()};
    reports[run] = slurp(dir / "report.json");
  }
  fs::remove_all(root);
  const bool same = !reports[0].empty() && reports[0] == reports[1];
  return {same, fmt("soc verify --suite all --seed 7 twice: %zu-byte report.json, %s", reports[0].size(),
                    same ? "identical" : "different")};
#else
  const std::string a = run_suite("all", 7, 10).to_json().dump(2), b = run_suite("all", 7, 10).to_json().dump(2);
  return {a == b, fmt("run_suite(all, seed 7) twice (CLI not built): %zu bytes, %s", a.size(),
                      a == b ? "identical" : "different")};
#endif
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {1, "error-bound constant", 1, criterion1},
      {2, "skew filter construction both directions", 30, [] { return suite_outcome("thm2", 200); }},
      {3, "truncated series error bound", 30, [] { return suite_outcome("thm3", 100); }},
      {4, "reshape spectral bound and normalization", 60, criterion4},
      {5, "norm reduction of skew matrices", 60, [] { return suite_outcome("thm4", 50); }},
      {6, "SOC orthogonality", 60, [] { return suite_outcome("soc", 100); }},
      {7, "gradients", 60, criterion7},
      {8, "gradient norm preservation", 30, criterion8},
      {9, "end-to-end training and certification", 300, criterion9},
      {10, "determinism", 120, criterion10},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = secs <= c.budget_s;
    const bool pass = o.pass && in_budget;
    failures += pass ? 0 : 1;
    std::printf("%s criterion %2d %s: %s [%.2fs, budget %.0fs%s]\n", pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs, c.budget_s, in_budget ? "" : ", over budget");
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failures, std::size(criteria));
  return failures == 0 ? 0 : 1;
}
