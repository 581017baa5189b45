#pragma once

// Property suites shared by `hyperada selftest` and the acceptance tests.

#include <cstdint>
#include <string>
#include <vector>

#include "hyperada/geometry.hpp"

namespace hyperada::cli {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SuiteReport {
  std::string name;
  std::vector<CheckResult> checks;
  double seconds = 0.0;

  bool passed() const;
};

struct GeometrySuiteOptions {
  int instances = 1000;
  std::uint64_t seed = 7;
  /// Guard applied by the operations under test. The containment check
  /// always compares against the production guard, so a zero here is a
  /// fault the suite must detect.
  double ball_epsilon = 1e-5;
};

SuiteReport geometry_suite(const GeometrySuiteOptions& opts = {});

/// Fixed Euler and RK4 convergence orders and the Euler closed form.
SuiteReport solver_suite();

/// Focal loss and MLR-head gradients against finite differences.
SuiteReport loss_suite(std::uint64_t seed = 11);

}  // namespace hyperada::cli
