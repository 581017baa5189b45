#include "selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hyperada/augmentation.hpp"
#include "hyperada/geometry_grad.hpp"
#include "hyperada/ode.hpp"
#include "hyperada/random.hpp"

namespace hyperada::cli {

namespace kern = geometry::kernel;
using geometry::Curvature;
using geometry::Matrix;
using geometry::Vector;

bool SuiteReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

namespace {

using Clock = std::chrono::steady_clock;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

Vector random_direction(Eigen::Index dim, Rng& rng) {
  Vector v(dim);
  for (auto& x : v) x = rng.normal();
  const double n = v.norm();
  return n > 0.0 ? Vector(v / n) : Vector(Vector::Unit(dim, 0));
}

/// Point with c*|x|^2 up to (1 - 1e-6)^2, biased towards the boundary.
Vector near_boundary(Eigen::Index dim, const Curvature& k, Rng& rng) {
  const double u = rng.uniform();
  const double frac = rng.coin() ? 1.0 - 1e-6 * (1.0 + 1e3 * u) : 1.0 - std::pow(u, 2.0);
  return random_direction(dim, rng) * (std::max(frac, 0.0) / k.sqrt_c());
}

Vector inside(Eigen::Index dim, const Curvature& k, double max_frac, Rng& rng) {
  return random_direction(dim, rng) * (max_frac * rng.uniform() / k.sqrt_c());
}

struct Worst {
  double value = 0.0;
  void add(double v) { value = std::max(value, std::isfinite(v) ? v : INFINITY); }
};

CheckResult bound_check(std::string name, const Worst& w, double tol) {
  return {std::move(name), w.value <= tol, "max " + fmt(w.value) + " (tol " + fmt(tol) + ")"};
}

}  // namespace

SuiteReport geometry_suite(const GeometrySuiteOptions& opts) {
  const auto t0 = Clock::now();
  SuiteReport report{"geometry", {}, 0.0};
  Rng rng(opts.seed);
  const double production_limit = 1.0 - geometry::kDefaultBallEpsilon;

  // Ball containment under boundary fuzzing, measured against the production guard.
  {
    Rng r = rng.fork("containment");
    std::size_t violations = 0;
    double worst = 0.0;
    for (int i = 0; i < opts.instances; ++i) {
      const double kappa = -std::exp(r.uniform(std::log(0.25), std::log(4.0)));
      const Curvature k(kappa, opts.ball_epsilon);
      const Eigen::Index dim = 2 + static_cast<Eigen::Index>(r.index(7));
      const Vector x = near_boundary(dim, k, r);
      const Vector y = near_boundary(dim, k, r);
      const Vector v = random_direction(dim, r) * r.uniform(0.0, 20.0);
      std::vector<Vector> outs;
      outs.push_back(kern::project(x, k));
      outs.push_back(kern::mobius_add(x, y, k));
      outs.push_back(kern::mobius_scalar_mul(r.uniform(0.5, 8.0), x, k));
      outs.push_back(kern::exp_map(v, x, k));
      outs.push_back(kern::exp_map0(v, k));
      const std::vector<Vector> pts{x, y};
      const std::vector<double> w{r.uniform(0.1, 1.0), r.uniform(0.1, 1.0)};
      outs.push_back(kern::gyromidpoint(pts, w, k));
      for (const auto& o : outs) {
        const double n2 = k.c() * o.squaredNorm();
        worst = std::max(worst, n2);
        if (!(n2 <= production_limit)) ++violations;
      }
    }
    report.checks.push_back({"ball containment (boundary fuzz)", violations == 0,
                             std::to_string(violations) + " violations, max c|x|^2 = " +
                                 std::to_string(worst)});
  }

  const Curvature unit(-1.0, opts.ball_epsilon);

  // Gyromidpoint permutation and weight-scale invariance.
  {
    Rng r = rng.fork("midpoint-invariance");
    Worst perm;
    Worst scale;
    for (int i = 0; i < opts.instances; ++i) {
      const Eigen::Index dim = 2 + static_cast<Eigen::Index>(r.index(5));
      const int n = 2 + static_cast<int>(r.index(5));
      std::vector<Vector> pts;
      std::vector<double> w;
      for (int j = 0; j < n; ++j) {
        pts.push_back(inside(dim, unit, 0.95, r));
        w.push_back(r.uniform(0.05, 1.0));
      }
      const Vector m = kern::gyromidpoint(pts, w, unit);

      std::vector<int> order(n);
      std::iota(order.begin(), order.end(), 0);
      r.shuffle(order);
      std::vector<Vector> p2;
      std::vector<double> w2;
      for (int j : order) {
        p2.push_back(pts[j]);
        w2.push_back(w[j]);
      }
      perm.add((kern::gyromidpoint(p2, w2, unit) - m).norm());

      const double s = std::exp(r.uniform(std::log(1e-3), std::log(1e3)));
      std::vector<double> ws(w);
      for (auto& x : ws) x *= s;
      scale.add((kern::gyromidpoint(pts, ws, unit) - m).norm());
    }
    report.checks.push_back(bound_check("gyromidpoint permutation invariance", perm, 1e-9));
    report.checks.push_back(bound_check("gyromidpoint weight-scale invariance", scale, 1e-9));
  }

  // exp/log inversion with |v| <= 2.
  {
    Rng r = rng.fork("exp-log");
    Worst err;
    for (int i = 0; i < opts.instances; ++i) {
      const Eigen::Index dim = 2 + static_cast<Eigen::Index>(r.index(7));
      const Vector base = inside(dim, unit, 0.5, r);
      const Vector v = random_direction(dim, r) * r.uniform(0.0, 2.0);
      const Vector back = kern::log_map(kern::exp_map(v, base, unit), base, unit);
      err.add((back - v).norm());
    }
    report.checks.push_back(bound_check("exp/log roundtrip", err, 1e-9));
  }

  // Equal-weight two-point midpoint is equidistant.
  {
    Rng r = rng.fork("equidistance");
    Worst err;
    const std::vector<double> w{1.0, 1.0};
    for (int i = 0; i < opts.instances; ++i) {
      const Eigen::Index dim = 2 + static_cast<Eigen::Index>(r.index(7));
      const std::vector<Vector> pts{inside(dim, unit, 0.95, r), inside(dim, unit, 0.95, r)};
      const Vector m = kern::gyromidpoint(pts, w, unit);
      err.add(std::abs(kern::distance(pts[0], m, unit) - kern::distance(m, pts[1], unit)));
    }
    report.checks.push_back(bound_check("two-point midpoint equidistance", err, 1e-7));
  }

  // Euclidean limit: error against the weighted mean shrinks with |kappa|.
  {
    Rng r = rng.fork("euclidean-limit");
    const double kappas[] = {-1.0, -1e-1, -1e-2, -1e-3, -1e-4, -1e-6};
    std::size_t violations = 0;
    double last_err = 0.0;
    for (int i = 0; i < opts.instances; ++i) {
      const Eigen::Index dim = 2 + static_cast<Eigen::Index>(r.index(5));
      const int n = 2 + static_cast<int>(r.index(4));
      std::vector<Vector> pts;
      std::vector<double> w;
      Vector mean = Vector::Zero(dim);
      double wsum = 0.0;
      for (int j = 0; j < n; ++j) {
        pts.push_back(inside(dim, unit, 0.9, r));
        w.push_back(r.uniform(0.05, 1.0));
        mean += w.back() * pts.back();
        wsum += w.back();
      }
      mean /= wsum;
      double prev = INFINITY;
      for (double kappa : kappas) {
        const Curvature k(kappa, opts.ball_epsilon);
        const double e = (kern::gyromidpoint(pts, w, k) - mean).norm();
        if (!(e < prev)) ++violations;
        prev = e;
      }
      last_err = std::max(last_err, prev);
    }
    report.checks.push_back({"euclidean limit monotone in |kappa|", violations == 0,
                             std::to_string(violations) + " non-monotone steps, max error at -1e-6 " +
                                 fmt(last_err)});
  }

  report.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return report;
}

SuiteReport solver_suite() {
  const auto t0 = Clock::now();
  SuiteReport report{"solver", {}, 0.0};
  using namespace distributions;
  const VectorField grow = [](const Eigen::VectorXd& y) { return y; };
  const Eigen::VectorXd one = Eigen::VectorXd::Constant(1, 1.0);
  const double e = std::exp(1.0);

  {
    OdeSolverConfig cfg = OdeSolverConfig::lidar_default();
    const double y = integrate(grow, one, cfg)(0);
    report.checks.push_back({"fixed Euler dt=0.5 x2 on dy/dt=y", y == 2.25, "got " + std::to_string(y)});
  }

  auto order_check = [&](OdeMode mode, int first_steps, double lo, double hi, const char* name) {
    std::vector<double> errs;
    for (int s = first_steps, i = 0; i < 4; ++i, s *= 2) {
      OdeSolverConfig cfg;
      cfg.mode = mode;
      cfg.steps = s;
      cfg.dt = 1.0 / s;
      errs.push_back(std::abs(integrate(grow, one, cfg)(0) - e));
    }
    bool ok = true;
    std::string detail = "ratios";
    for (std::size_t i = 1; i < errs.size(); ++i) {
      const double ratio = errs[i - 1] / errs[i];
      ok = ok && ratio >= lo && ratio <= hi;
      detail += " " + std::to_string(ratio).substr(0, 6);
    }
    report.checks.push_back({name, ok, detail});
  };
  order_check(OdeMode::kFixedEuler, 8, 1.7, 2.3, "fixed Euler first order");
  order_check(OdeMode::kFixedRk4, 2, 12.0, 20.0, "fixed RK4 fourth order");

  {
    const double y = integrate(grow, one, OdeSolverConfig::rgb_default())(0);
    const double err = std::abs(y - e) / e;
    report.checks.push_back({"adaptive RK4 reaches e", err <= 1e-6, "relative error " + fmt(err)});
  }
  {
    const VectorField still = [](const Eigen::VectorXd& y) { return Eigen::VectorXd::Zero(y.size()); };
    const Eigen::VectorXd y0 = Eigen::VectorXd::LinSpaced(3, -1.0, 1.0);
    const bool ok = integrate(still, y0, OdeSolverConfig::rgb_default()) == y0 &&
                    integrate(still, y0, OdeSolverConfig::lidar_default()) == y0;
    report.checks.push_back({"stationary field", ok, ok ? "unchanged" : "drifted"});
  }

  report.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return report;
}

namespace {

double rel_err(const Matrix& a, const Matrix& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

/// Central differences of a scalar function of a matrix.
template <typename F>
Matrix numeric_grad(Matrix x, F&& f, double h = 1e-6) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x(i);
    x(i) = keep + h;
    const double up = f(x);
    x(i) = keep - h;
    const double down = f(x);
    x(i) = keep;
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace

SuiteReport loss_suite(std::uint64_t seed) {
  const auto t0 = Clock::now();
  SuiteReport report{"loss", {}, 0.0};
  Rng rng(seed);
  const Curvature k;
  const int d = 4;
  const int classes = 3;
  const int n = 6;

  Matrix points(d, n);
  for (int j = 0; j < n; ++j) points.col(j) = inside(d, k, 0.8, rng);
  Matrix offsets(d, classes);
  Matrix normals(d, classes);
  for (int c = 0; c < classes; ++c) {
    offsets.col(c) = inside(d, k, 0.5, rng);
    normals.col(c) = random_direction(d, rng) * rng.uniform(0.5, 1.5);
  }
  std::vector<int> targets(n);
  for (int j = 0; j < n; ++j) targets[j] = static_cast<int>(rng.index(classes));
  targets[1] = kUnlabeled;

  for (double gamma : {0.0, 2.0}) {
    auto loss_of_logits = [&](const Matrix& z) {
      return augmentation::focal_loss(augmentation::softmax_columns(z), targets, gamma);
    };
    const Matrix logits = geometry::grad::mlr_forward(points, offsets, normals, k);
    const Matrix analytic =
        augmentation::focal_loss_logit_grad(augmentation::softmax_columns(logits), targets, gamma);
    const double err = rel_err(analytic, numeric_grad(logits, loss_of_logits));
    report.checks.push_back({"focal loss logit gradient (gamma=" + std::to_string(int(gamma)) + ")",
                             err <= 1e-4, "relative error " + fmt(err)});
  }

  // MLR head under cross-entropy.
  {
    auto loss = [&](const Matrix& p, const Matrix& o, const Matrix& a) {
      const Matrix z = geometry::grad::mlr_forward(p, o, a, k);
      return augmentation::focal_loss(augmentation::softmax_columns(z), targets, 0.0);
    };
    const Matrix z = geometry::grad::mlr_forward(points, offsets, normals, k);
    const Matrix dz =
        augmentation::focal_loss_logit_grad(augmentation::softmax_columns(z), targets, 0.0);
    const auto g = geometry::grad::mlr_backward(points, offsets, normals, k, dz);

    const double e_pts = rel_err(
        g.d_points, numeric_grad(points, [&](const Matrix& p) { return loss(p, offsets, normals); }));
    const double e_off = rel_err(
        g.d_offsets, numeric_grad(offsets, [&](const Matrix& o) { return loss(points, o, normals); }));
    const double e_nrm = rel_err(
        g.d_normals, numeric_grad(normals, [&](const Matrix& a) { return loss(points, offsets, a); }));
    report.checks.push_back({"MLR gradient wrt embeddings", e_pts <= 1e-4, "relative error " + fmt(e_pts)});
    report.checks.push_back({"MLR gradient wrt offsets", e_off <= 1e-4, "relative error " + fmt(e_off)});
    report.checks.push_back({"MLR gradient wrt normals", e_nrm <= 1e-4, "relative error " + fmt(e_nrm)});
  }

  // exp_map0 chained into the head.
  {
    Matrix tangent(d, n);
    for (int j = 0; j < n; ++j) tangent.col(j) = random_direction(d, rng) * rng.uniform(0.1, 1.5);
    auto loss = [&](const Matrix& t) {
      const Matrix p = geometry::grad::exp_map0_forward(t, k);
      const Matrix z = geometry::grad::mlr_forward(p, offsets, normals, k);
      return augmentation::focal_loss(augmentation::softmax_columns(z), targets, 2.0);
    };
    const Matrix p = geometry::grad::exp_map0_forward(tangent, k);
    const Matrix z = geometry::grad::mlr_forward(p, offsets, normals, k);
    const Matrix dz =
        augmentation::focal_loss_logit_grad(augmentation::softmax_columns(z), targets, 2.0);
    const auto g = geometry::grad::mlr_backward(p, offsets, normals, k, dz);
    const Matrix dt = geometry::grad::exp_map0_backward(tangent, g.d_points, k);
    const double err = rel_err(dt, numeric_grad(tangent, loss));
    report.checks.push_back({"exp_map0 + MLR chain gradient", err <= 1e-4, "relative error " + fmt(err)});
  }

  report.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return report;
}

}  // namespace hyperada::cli
