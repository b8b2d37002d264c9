#pragma once

#include <string>
#include <vector>

namespace dpi {

struct SuiteResult {
  std::string name;
  bool passed = false;
  /// On failure, names the violated invariant and the offending value.
  std::string detail;
  double seconds = 0.0;
};

struct SelftestOptions {
  /// Suite names to run; empty runs all.
  std::vector<std::string> only;
  /// Relative error injected into the x_t posterior-mean coefficient while
  /// the suites run (0 = none). Used to show the harness catches it.
  double inject_mean_coef_fault = 0.0;
};

std::vector<std::string> selftest_suites();
std::vector<SuiteResult> run_selftest(const SelftestOptions& opts = {});

}  // namespace dpi
