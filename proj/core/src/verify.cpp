#include "soc/verify.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "soc/parallel.hpp"
#include "soc/soc_layer.hpp"

namespace soc {

namespace {

using Rng = std::mt19937_64;

constexpr double kStructureTol = 1e-13;
constexpr double kRoundTripTol = 1e-12;
constexpr double kTransposeTol = 1e-12;
constexpr int kExactPowerIterations = 1000;
constexpr double kPowerSlack = 1e-9;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::string indexed(const std::string& name, std::size_t trial) { return name + "[" + std::to_string(trial) + "]"; }

template <Scalar T>
BasicFilter<T> random_filter(Rng& rng, Shape dims) {
  return BasicFilter<T>(BasicTensor<T>::randn(std::move(dims), rng));
}

Matrix<double> random_skew_matrix(Rng& rng, std::size_t dim, double target_norm) {
  Matrix<double> g(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  std::normal_distribution<double> normal;
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = normal(rng);
  Matrix<double> a = g - g.transpose();
  return a * (target_norm / spectral_norm<double>(a));
}

Matrix<Complex> random_skew_hermitian(Rng& rng, std::size_t dim, double target_norm) {
  Matrix<Complex> g(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  std::normal_distribution<double> normal;
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = Complex(normal(rng), normal(rng));
  Matrix<Complex> a = g - g.adjoint();
  return a * Complex(target_norm / spectral_norm<Complex>(a));
}

using TrialRows = std::vector<CheckRow>;
using TrialObservations = std::vector<Observation>;

template <Scalar T>
double transpose_gap(const BasicFilter<T>& l, std::size_t n) {
  const BasicFilter<T> t = l.is_3d() ? conv3d_transpose(l) : conv_transpose(l);
  const Matrix<T> j = materialize_jacobian(l, n).matrix;
  const Matrix<T> jt = materialize_jacobian(t, n).matrix;
  return max_abs<T>(jt - j.adjoint());
}

void thm1_trial(Rng& rng, std::size_t trial, TrialRows& rows, TrialObservations&) {
  const std::size_t co = pick(rng, 1, 3), ci = pick(rng, 1, 3), n = pick(rng, 3, 5);
  const Filter real = random_filter<double>(rng, {co, ci, 3, 3});
  rows.push_back(make_row(indexed("thm1.real", trial), transpose_gap(real, n), kTransposeTol));
  const ComplexFilter complex = random_filter<Complex>(rng, {co, ci, 3, 3});
  rows.push_back(make_row(indexed("thm1.complex", trial), transpose_gap(complex, n), kTransposeTol));
  const ComplexFilter cube = random_filter<Complex>(rng, {2, 2, 3, 3, 3});
  rows.push_back(make_row(indexed("thm1.3d", trial), transpose_gap(cube, 3), kTransposeTol));
}

void thm2_trial(Rng& rng, std::size_t trial, TrialRows& rows, TrialObservations&) {
  const std::size_t m = pick(rng, 1, 3);
  const std::size_t side = std::array<std::size_t, 3>{1, 3, 5}[pick(rng, 0, 2)];
  const std::size_t n = std::max<std::size_t>(side, 4);
  const std::string tag = indexed("thm2", trial);
  std::vector<CheckRow> found;
  if (trial % 2 == 0) {
    found = verify_skew_construction(random_filter<double>(rng, {m, m, side, side}), n, tag + ".real");
  } else {
    found = verify_skew_construction(random_filter<Complex>(rng, {m, m, side, side}), n, tag + ".complex");
  }
  rows.insert(rows.end(), found.begin(), found.end());
  if (trial % 20 == 0) {
    const std::size_t c = pick(rng, 1, 2);
    const auto cube = verify_skew_construction(random_filter<Complex>(rng, {c, c, 3, 3, 3}), 3, tag + ".3d");
    rows.insert(rows.end(), cube.begin(), cube.end());
  }
}

void thm3_trial(Rng& rng, std::size_t trial, TrialRows& rows, TrialObservations&) {
  const std::size_t dim = pick(rng, 2, 32);
  const double norm = uniform(rng, 1.5, 4.0);
  const Matrix<double> j = random_skew_matrix(rng, dim, norm);
  const Matrix<double> exact = dense_expm<double>(j);

  std::vector<double> errors(17, 0.0);
  double worst_ratio = -1.0, worst_error = 0.0, worst_bound = 0.0;
  bool all_within = true;
  for (int k = 1; k <= 16; ++k) {
    const double err = spectral_norm<double>(exact - truncated_series<double>(j, k));
    const double bound = error_bound(norm, k);
    errors[static_cast<std::size_t>(k)] = err;
    all_within = all_within && err <= bound;
    if (err / bound > worst_ratio) {
      worst_ratio = err / bound;
      worst_error = err;
      worst_bound = bound;
    }
  }
  CheckRow bound_row = make_row(indexed("thm3.bound", trial), worst_error, worst_bound);
  bound_row.pass = all_within;
  rows.push_back(bound_row);

  // Once k exceeds ||J|| the measured error must be positive and shrink with k.
  double worst_step = 0.0;
  bool decreasing = true;
  for (int k = static_cast<int>(std::floor(norm)) + 1; k < 16; ++k) {
    const double now = errors[static_cast<std::size_t>(k)], next = errors[static_cast<std::size_t>(k + 1)];
    const double step = now > 0.0 ? next / now : INFINITY;
    worst_step = std::max(worst_step, step);
    decreasing = decreasing && now > 0.0 && next > 0.0 && next < now;
  }
  CheckRow monotone = make_row(indexed("thm3.decreasing", trial), worst_step, 1.0);
  monotone.pass = decreasing;
  rows.push_back(monotone);
}

void thm4_trial(Rng& rng, std::size_t trial, TrialRows& rows, TrialObservations& obs) {
  const std::size_t dim = pick(rng, 2, 16);
  const double norm = uniform(rng, 0.5, 20.0);
  if (trial % 2 == 0) {
    const Matrix<double> a = random_skew_matrix(rng, dim, norm);
    const Matrix<double> b = reduce_norm_skew(a);
    rows.push_back(make_row(indexed("thm4.expm", trial), max_abs<double>(dense_expm<double>(a) - dense_expm<double>(b)), 1e-8));
    rows.push_back(make_row(indexed("thm4.norm", trial), spectral_norm<double>(b), std::numbers::pi + 1e-9));
    rows.push_back(make_row(indexed("thm4.skew", trial), max_abs<double>(b + b.transpose()), 0.0));
  } else {
    const Matrix<Complex> a = random_skew_hermitian(rng, dim, norm);
    const Matrix<Complex> b = reduce_norm_skew_hermitian(a);
    rows.push_back(make_row(indexed("thm4.complex.expm", trial),
                            max_abs<Complex>(dense_expm<Complex>(a) - dense_expm<Complex>(b)), 1e-8));
    rows.push_back(make_row(indexed("thm4.complex.norm", trial), spectral_norm<Complex>(b), std::numbers::pi + 1e-9));
    rows.push_back(make_row(indexed("thm4.complex.skew", trial), max_abs<Complex>(b + b.adjoint()), 0.0));
  }

  // Whether the reduced matrix of a scaled-up convolution Jacobian is itself a
  // convolution Jacobian. Reported only.
  if (trial % 5 == 0) {
    const std::size_t n = 4;
    const Filter l = make_skew(random_filter<double>(rng, {1, 1, 3, 3})).skew;
    Matrix<double> j = materialize_jacobian(l, n).matrix;
    j *= 8.0 / spectral_norm<double>(j);
    const Matrix<double> b = reduce_norm_skew(j);
    const bool structured = has_convolution_structure(b, 1, n, 1e-9);
    obs.push_back({indexed("thm4.toeplitz", trial), structured ? 1.0 : 0.0,
                   structured ? "reduced matrix keeps convolution structure"
                              : "reduced matrix is not a convolution Jacobian"});
  }
}

void thm5_trial(Rng& rng, std::size_t trial, TrialRows& rows, TrialObservations&) {
  const std::size_t co = pick(rng, 1, 3), ci = pick(rng, 1, 3);
  const std::size_t side = std::array<std::size_t, 3>{1, 3, 5}[pick(rng, 0, 2)];
  const std::size_t n = side == 5 ? std::array<std::size_t, 2>{6, 8}[pick(rng, 0, 1)]
                                  : std::array<std::size_t, 3>{4, 6, 8}[pick(rng, 0, 2)];
  const Filter l = random_filter<double>(rng, {co, ci, side, side});
  const double exact = spectral_norm<double>(materialize_jacobian(l, n).matrix);
  // Power iteration approaches each reshape norm from below; the relative slack
  // covers its convergence tolerance (1x1 filters meet the bound with equality).
  const double bound = spectral_bound(l, kExactPowerIterations).bound * (1.0 + kPowerSlack);
  rows.push_back(make_row(indexed("thm5.sigma", trial), exact, bound));

  const std::size_t m = pick(rng, 1, 3);
  const SkewFilter sf = normalize(make_skew(random_filter<double>(rng, {m, m, 3, 3})), kExactPowerIterations);
  const double normalized = spectral_norm<double>(materialize_jacobian(sf.skew, n).matrix);
  rows.push_back(make_row(indexed("thm5.normalized", trial), normalized, sf.norm_bound + 1e-9));
}

void soc_trial(Rng& rng, std::size_t trial, TrialRows& rows, TrialObservations&) {
  const bool strided = trial % 4 == 3;
  SocConfig cfg;
  if (strided) {
    cfg.c_in = 1;
    cfg.c_out = 4;
    cfg.stride = 2;
  } else {
    cfg.c_in = cfg.c_out = pick(rng, 1, 3);
  }
  const std::size_t n = strided ? std::array<std::size_t, 2>{6, 8}[pick(rng, 0, 1)] : pick(rng, 3, 8);
  SocLayer layer = SocLayer::random(cfg, rng, 1.0);
  layer.refresh_normalization(kExactPowerIterations, 0.0);
  const Tensor x = Tensor::randn({cfg.c_in, n, n}, rng);
  const int k = kDefaultEvalTerms;
  const Tensor y = soc_apply(layer, x, k);

  const double ratio = y.norm() / x.norm();
  rows.push_back(make_row(indexed(strided ? "soc.isometry.stride2" : "soc.isometry", trial), std::abs(ratio - 1.0), 1e-4));

  const Tensor prepared = soc_prepare_input(layer, x);
  const Matrix<double> j = materialize_jacobian(layer.normalized_filter(), prepared.dim(1)).matrix;
  const Vector<double> expected = dense_expm<double>(j) * vectorize(prepared);
  const double distance = (vectorize(y) - expected).norm();
  rows.push_back(make_row(indexed("soc.oracle", trial), distance, error_bound(layer.norm_bound(), k) * x.norm()));
}

using TrialFn = void (*)(Rng&, std::size_t, TrialRows&, TrialObservations&);

TrialFn suite_fn(const std::string& name) {
  if (name == "thm1") return thm1_trial;
  if (name == "thm2") return thm2_trial;
  if (name == "thm3") return thm3_trial;
  if (name == "thm4") return thm4_trial;
  if (name == "thm5") return thm5_trial;
  if (name == "soc") return soc_trial;
  return nullptr;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

}  // namespace

bool VerifyReport::passed() const { return failures() == 0; }

std::size_t VerifyReport::failures() const {
  std::size_t f = 0;
  for (const auto& r : rows) f += r.pass ? 0 : 1;
  return f;
}

nlohmann::ordered_json VerifyReport::to_json() const {
  nlohmann::ordered_json j;
  j["suite"] = suite;
  j["seed"] = seed;
  j["trials"] = trials;
  j["passed"] = passed();
  j["failures"] = failures();
  auto& checks = j["checks"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    checks.push_back({{"check", r.check}, {"max_error", r.max_error}, {"bound", r.bound}, {"pass", r.pass}});
  }
  auto& notes = j["observations"] = nlohmann::ordered_json::array();
  for (const auto& o : observations) notes.push_back({{"name", o.name}, {"value", o.value}, {"note", o.note}});
  return j;
}

std::string VerifyReport::to_text() const {
  std::ostringstream out;
  for (const auto& r : rows) {
    out << (r.pass ? "PASS " : "FAIL ") << r.check << " max_error=" << format_double(r.max_error)
        << " bound=" << format_double(r.bound) << '\n';
  }
  for (const auto& o : observations) out << "NOTE " << o.name << " value=" << o.value << " " << o.note << '\n';
  out << suite << ": " << rows.size() - failures() << "/" << rows.size() << " checks passed (seed " << seed
      << ", trials " << trials << ")\n";
  return out.str();
}

CheckRow make_row(std::string check, double max_error, double bound) {
  return CheckRow{std::move(check), max_error, bound, max_error <= bound};
}

std::uint64_t trial_seed(std::uint64_t seed, const std::string& tag, std::size_t trial) {
  return splitmix(splitmix(seed ^ fnv1a(tag)) + static_cast<std::uint64_t>(trial));
}

template <Scalar T>
std::vector<CheckRow> verify_skew_construction(const BasicFilter<T>& params, std::size_t n, const std::string& prefix) {
  const bool cube = params.is_3d();
  const BasicFilter<T> skew = cube ? make_skew_3d(params) : make_skew(params).skew;
  const Matrix<T> j = materialize_jacobian(skew, n).matrix;
  std::vector<CheckRow> rows;
  rows.push_back(make_row(prefix + ".jacobian_skew", max_abs<T>(j + j.adjoint()), kStructureTol));

  const BasicFilter<T> pre = cube ? skew_preimage_3d(skew) : skew_preimage(skew);
  const BasicFilter<T> rebuilt = cube ? make_skew_3d(pre) : make_skew(pre).skew;
  rows.push_back(make_row(prefix + ".preimage_roundtrip", max_abs_diff(rebuilt.tensor(), skew.tensor()), kRoundTripTol));
  return rows;
}

template std::vector<CheckRow> verify_skew_construction(const Filter&, std::size_t, const std::string&);
template std::vector<CheckRow> verify_skew_construction(const ComplexFilter&, std::size_t, const std::string&);

VerifyReport run_suite(const std::string& suite, std::uint64_t seed, std::size_t trials) {
  std::vector<std::string> selected;
  if (suite == "all") {
    selected = suite_names();
  } else if (suite_fn(suite) != nullptr) {
    selected = {suite};
  } else {
    throw std::invalid_argument("unknown suite '" + suite + "' (expected all, thm1..thm5 or soc)");
  }

  VerifyReport report;
  report.suite = suite;
  report.seed = seed;
  report.trials = trials;
  for (const auto& name : selected) {
    const TrialFn fn = suite_fn(name);
    std::vector<TrialRows> rows(trials);
    std::vector<TrialObservations> obs(trials);
    parallel_for(trials, [&](std::size_t t) {
      Rng rng(trial_seed(seed, name, t));
      fn(rng, t, rows[t], obs[t]);
    });
    for (std::size_t t = 0; t < trials; ++t) {
      report.rows.insert(report.rows.end(), rows[t].begin(), rows[t].end());
      report.observations.insert(report.observations.end(), obs[t].begin(), obs[t].end());
    }
  }
  return report;
}

}  // namespace soc
