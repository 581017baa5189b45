#pragma once

#include <functional>
#include <string>

#include <Eigen/Dense>

namespace hyperada::distributions {

enum class OdeMode { kAdaptiveRk4, kFixedEuler, kFixedRk4 };

std::string to_string(OdeMode mode);
OdeMode ode_mode_from_string(const std::string& name);

struct OdeSolverConfig {
  OdeMode mode = OdeMode::kAdaptiveRk4;
  // Step size for the fixed modes; initial trial step for the adaptive mode.
  double dt = 0.25;
  int steps = 4;
  double rel_tol = 1e-5;
  double abs_tol = 1e-8;
  double dt_min = 1e-10;
  double t_end = 1.0;

  /// Image pipeline: adaptive RK4 over [0, 1].
  static OdeSolverConfig rgb_default();
  /// Point-cloud pipeline: fixed Euler, dt = 0.5, two steps.
  static OdeSolverConfig lidar_default();
};

using VectorField = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct IntegrationStats {
  int accepted_steps = 0;
  int rejected_steps = 0;
  int evaluations = 0;
};

/// Integrates the autonomous system d(theta)/dt = f(theta).
///
/// Fixed modes take `steps` steps of size `dt`. The adaptive mode integrates
/// over [0, t_end] with step-doubling error control and throws NumericalError
/// if the step size falls below dt_min.
Eigen::VectorXd integrate(const VectorField& f, const Eigen::VectorXd& theta0,
                          const OdeSolverConfig& config, IntegrationStats* stats = nullptr);

}  // namespace hyperada::distributions
