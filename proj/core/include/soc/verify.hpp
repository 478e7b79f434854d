#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "soc/oracle.hpp"

namespace soc {

/// One oracle comparison. `pass` is max_error <= bound unless a check states otherwise.
struct CheckRow {
  std::string check;
  double max_error = 0.0;
  double bound = 0.0;
  bool pass = false;
};

/// Free-form measurement that is reported but not gated on.
struct Observation {
  std::string name;
  double value = 0.0;
  std::string note;
};

struct VerifyReport {
  std::string suite;
  std::uint64_t seed = 0;
  std::size_t trials = 0;
  std::vector<CheckRow> rows;
  std::vector<Observation> observations;

  bool passed() const;
  std::size_t failures() const;
  nlohmann::ordered_json to_json() const;
  /// One line per row: "PASS thm3.trial[4] max_error=... bound=...".
  std::string to_text() const;
};

CheckRow make_row(std::string check, double max_error, double bound);

/// Builds L from M, checks the Jacobian is skew (Hermitian) at spatial size n and
/// that the preimage recipe reproduces L. Handles 2D and 3D filters.
template <Scalar T>
std::vector<CheckRow> verify_skew_construction(const BasicFilter<T>& params, std::size_t n,
                                               const std::string& prefix = "skew");

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"thm1", "thm2", "thm3", "thm4", "thm5", "soc"};
  return names;
}

/// Runs `trials` randomized trials of a suite ("thm1".."thm5", "soc" or "all").
/// Each trial draws from its own generator seeded by (seed, suite, trial), so the
/// report does not depend on the thread count. Unknown names throw invalid_argument.
VerifyReport run_suite(const std::string& suite, std::uint64_t seed, std::size_t trials);

/// Generator for one trial, derived by mixing (seed, tag, trial).
std::uint64_t trial_seed(std::uint64_t seed, const std::string& tag, std::size_t trial);

}  // namespace soc
