#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sfm {

/// One verified property: a residual sweep or an exact identity.
struct CheckItem {
  std::string name;
  bool ok = false;
  std::string detail;  // worst residual, tolerance, trial count
};

struct CheckResult {
  std::string suite;
  std::vector<CheckItem> items;
  double seconds = 0.0;

  int n_failed() const;
  bool ok() const { return n_failed() == 0; }
};

struct CheckOptions {
  std::vector<std::string> suites;  // empty runs all of them in canonical order
  uint64_t seed = 0;
  int threads = 0;           // 0 = auto, forwarded to the parallel kernels
  std::string inject_fault;  // suite to poison with one forced failure (test hook)
};

namespace checks {

/// Canonical suite order, one suite per library module.
const std::vector<std::string>& suite_names();

/// Runs the selected suites. Unknown suite names and a fault target outside
/// the selection raise Config before any sweep starts.
std::vector<CheckResult> run_checks(const CheckOptions& opt);

bool all_ok(const std::vector<CheckResult>& results);

/// One line per item under a per-suite header, plus a final summary line
/// that names every failing suite.
std::string render_results(const std::vector<CheckResult>& results);

}  // namespace checks
}  // namespace sfm
