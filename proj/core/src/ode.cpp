#include "hyperada/ode.hpp"

#include <algorithm>
#include <cmath>

#include "hyperada/errors.hpp"

namespace hyperada::distributions {

std::string to_string(OdeMode mode) {
  switch (mode) {
    case OdeMode::kAdaptiveRk4: return "adaptive_rk4";
    case OdeMode::kFixedEuler: return "fixed_euler";
    case OdeMode::kFixedRk4: return "fixed_rk4";
  }
  return "unknown";
}

OdeMode ode_mode_from_string(const std::string& name) {
  if (name == "adaptive_rk4") return OdeMode::kAdaptiveRk4;
  if (name == "fixed_euler") return OdeMode::kFixedEuler;
  if (name == "fixed_rk4") return OdeMode::kFixedRk4;
  throw InvalidArgument("unknown ODE solver mode '" + name + "'");
}

OdeSolverConfig OdeSolverConfig::rgb_default() { return OdeSolverConfig{}; }

OdeSolverConfig OdeSolverConfig::lidar_default() {
  OdeSolverConfig cfg;
  cfg.mode = OdeMode::kFixedEuler;
  cfg.dt = 0.5;
  cfg.steps = 2;
  return cfg;
}

namespace {

using Eigen::VectorXd;

VectorXd rk4_step(const VectorField& f, const VectorXd& y, double h, int& evals) {
  const VectorXd k1 = f(y);
  const VectorXd k2 = f(y + 0.5 * h * k1);
  const VectorXd k3 = f(y + 0.5 * h * k2);
  const VectorXd k4 = f(y + h * k3);
  evals += 4;
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

VectorXd integrate(const VectorField& f, const VectorXd& theta0, const OdeSolverConfig& config,
                   IntegrationStats* stats) {
  IntegrationStats local;
  IntegrationStats& s = stats ? *stats : local;
  s = IntegrationStats{};

  if (!(config.dt > 0.0) || !std::isfinite(config.dt)) {
    throw InvalidArgument("ODE step size must be positive");
  }

  VectorXd y = theta0;
  switch (config.mode) {
    case OdeMode::kFixedEuler:
      for (int i = 0; i < config.steps; ++i) {
        y += config.dt * f(y);
        ++s.evaluations;
        ++s.accepted_steps;
      }
      return y;
    case OdeMode::kFixedRk4:
      for (int i = 0; i < config.steps; ++i) {
        y = rk4_step(f, y, config.dt, s.evaluations);
        ++s.accepted_steps;
      }
      return y;
    case OdeMode::kAdaptiveRk4:
      break;
  }

  // Step doubling: compare one step of size h against two of size h/2. The
  // difference estimates the local error of the two-step result, which is
  // then improved by Richardson extrapolation.
  double t = 0.0;
  double h = std::min(config.dt, config.t_end);
  while (config.t_end - t > 1e-14 * std::max(1.0, config.t_end)) {
    if (h < config.dt_min) {
      throw NumericalError("adaptive RK4 step size underflow at t = " + std::to_string(t));
    }
    const double step = std::min(h, config.t_end - t);
    const VectorXd big = rk4_step(f, y, step, s.evaluations);
    const VectorXd half = rk4_step(f, y, 0.5 * step, s.evaluations);
    const VectorXd two = rk4_step(f, half, 0.5 * step, s.evaluations);
    const VectorXd diff = (two - big) / 15.0;

    double err = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double scale =
          config.abs_tol + config.rel_tol * std::max(std::abs(y[i]), std::abs(two[i]));
      const double e = std::abs(diff[i]) / scale;
      if (std::isnan(e) || e > err) err = e;  // std::max would drop a NaN
    }
    // Error per unit step: the accepted local errors then sum to at most
    // the tolerance over the whole interval.
    err *= config.t_end / step;
    if (!std::isfinite(err)) {
      h = 0.25 * step;
      ++s.rejected_steps;
      continue;
    }
    if (err <= 1.0) {
      t += step;
      y = two + diff;
      ++s.accepted_steps;
    } else {
      ++s.rejected_steps;
    }
    const double factor = err == 0.0 ? 2.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 2.0);
    h = step * factor;
  }
  return y;
}

}  // namespace hyperada::distributions
