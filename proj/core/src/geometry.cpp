#include "hyperada/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "hyperada/errors.hpp"

namespace hyperada::geometry {

namespace {

// artanh argument cap; keeps distances finite for points within ~1e-16 of the
// boundary.
constexpr double kArtanhCap = 1.0 - 1e-15;
constexpr double kTiny = 1e-15;

double safe_artanh(double u) { return std::atanh(std::clamp(u, -kArtanhCap, kArtanhCap)); }

void require_same(const BallPoint& x, const BallPoint& y) {
  if (x.dim() != y.dim()) {
    throw GeometryError("dimension mismatch: " + std::to_string(x.dim()) + " vs " +
                        std::to_string(y.dim()));
  }
  if (!(x.curvature == y.curvature)) {
    throw GeometryError("curvature mismatch");
  }
}

}  // namespace

Curvature::Curvature(double kappa, double ball_epsilon) : kappa_(kappa), epsilon_(ball_epsilon) {
  if (!std::isfinite(kappa) || kappa >= 0.0) {
    throw GeometryError("curvature must be finite and strictly negative, got " +
                        std::to_string(kappa));
  }
  if (!(ball_epsilon >= 0.0 && ball_epsilon < 1.0)) {
    throw GeometryError("ball epsilon must lie in [0, 1)");
  }
  sqrt_c_ = std::sqrt(-kappa);
  max_norm_ = std::sqrt((1.0 - epsilon_) / -kappa);
}

BallPoint::BallPoint(Vector coords_in, Curvature curvature_in)
    : coords(std::move(coords_in)), curvature(curvature_in) {
  if (!coords.allFinite()) {
    throw GeometryError("ball point has non-finite coordinates");
  }
  if (curvature.c() * coords.squaredNorm() >= 1.0) {
    throw GeometryError("point lies on or outside the ball boundary");
  }
}

BallPoint BallPoint::origin(Eigen::Index dim, Curvature curvature) {
  return BallPoint(Vector::Zero(dim), curvature);
}

namespace kernel {

double conformal_factor(const Vector& x, const Curvature& k) {
  return 2.0 / (1.0 - k.c() * x.squaredNorm());
}

Vector project(Vector x, const Curvature& k) {
  const double limit = 1.0 - k.ball_epsilon();
  double n2 = k.c() * x.squaredNorm();
  if (n2 <= limit) return x;
  x *= std::sqrt(limit / n2);
  // Rounding can leave the rescaled point one ulp beyond the guard.
  while (k.c() * x.squaredNorm() > limit) x *= 1.0 - 1e-15;
  return x;
}

Vector mobius_add(const Vector& x, const Vector& y, const Curvature& k) {
  const double c = k.c();
  const double xy = x.dot(y);
  const double x2 = x.squaredNorm();
  const double y2 = y.squaredNorm();
  const double num_x = 1.0 + 2.0 * c * xy + c * y2;
  const double num_y = 1.0 - c * x2;
  const double den = std::max(1.0 + 2.0 * c * xy + c * c * x2 * y2, kTiny);
  return project((num_x * x + num_y * y) / den, k);
}

Vector mobius_scalar_mul(double r, const Vector& x, const Curvature& k) {
  const double n = x.norm();
  if (n < kTiny) return Vector::Zero(x.size());
  const double sc = k.sqrt_c();
  const double scale = std::tanh(r * safe_artanh(sc * n)) / (sc * n);
  return project(scale * x, k);
}

Vector exp_map0(const Vector& v, const Curvature& k) {
  const double n = v.norm();
  if (n < kTiny) return Vector::Zero(v.size());
  const double u = k.sqrt_c() * n;
  return project((std::tanh(u) / u) * v, k);
}

Vector log_map0(const Vector& y, const Curvature& k) {
  const double n = y.norm();
  if (n < kTiny) return Vector::Zero(y.size());
  const double u = k.sqrt_c() * n;
  return (safe_artanh(u) / u) * y;
}

Vector exp_map(const Vector& v, const Vector& base, const Curvature& k) {
  const double n = v.norm();
  if (n < kTiny) return project(base, k);
  const double sc = k.sqrt_c();
  const double lam = conformal_factor(base, k);
  const Vector step = (std::tanh(sc * lam * n / 2.0) / (sc * n)) * v;
  return mobius_add(base, step, k);
}

Vector log_map(const Vector& y, const Vector& base, const Curvature& k) {
  const Vector diff = mobius_add(-base, y, k);
  const double n = diff.norm();
  if (n < kTiny) return Vector::Zero(y.size());
  const double sc = k.sqrt_c();
  const double lam = conformal_factor(base, k);
  return (2.0 / (sc * lam) * safe_artanh(sc * n) / n) * diff;
}

double distance(const Vector& x, const Vector& y, const Curvature& k) {
  // Unprojected difference: the guard would distort distances near the rim.
  const double c = k.c();
  const Vector u = -x;
  const double xy = u.dot(y);
  const double x2 = u.squaredNorm();
  const double y2 = y.squaredNorm();
  const double den = std::max(1.0 + 2.0 * c * xy + c * c * x2 * y2, kTiny);
  const Vector diff = ((1.0 + 2.0 * c * xy + c * y2) * u + (1.0 - c * x2) * y) / den;
  return 2.0 / k.sqrt_c() * safe_artanh(k.sqrt_c() * diff.norm());
}

double hyperbolic_radius(const Vector& x, const Curvature& k) {
  return 2.0 / k.sqrt_c() * safe_artanh(k.sqrt_c() * x.norm());
}

Vector transport_from_origin(const Vector& v, const Vector& base, const Curvature& k) {
  return (2.0 / conformal_factor(base, k)) * v;
}

Vector transport_to_origin(const Vector& v, const Vector& base, const Curvature& k) {
  return (conformal_factor(base, k) / 2.0) * v;
}

Vector gyromidpoint(std::span<const Vector> points, std::span<const double> weights,
                    const Curvature& k) {
  if (points.empty()) throw InvalidArgument("gyromidpoint of an empty point set");
  if (points.size() != weights.size()) {
    throw InvalidArgument("gyromidpoint: " + std::to_string(points.size()) + " points but " +
                          std::to_string(weights.size()) + " weights");
  }
  double weight_sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw InvalidArgument("gyromidpoint weights must be finite and non-negative");
    }
    weight_sum += w;
  }
  if (weight_sum <= 0.0) throw InvalidArgument("gyromidpoint weights are all zero");

  const Eigen::Index dim = points.front().size();
  Vector numer = Vector::Zero(dim);
  double denom = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].size() != dim) throw GeometryError("gyromidpoint: dimension mismatch");
    const double lam = conformal_factor(points[i], k);
    numer += (weights[i] * lam) * points[i];
    denom += weights[i] * (lam - 1.0);
  }
  return mobius_scalar_mul(0.5, numer / denom, k);
}

double mlr_logit(const Vector& x, const Vector& offset, const Vector& normal,
                 const Curvature& k) {
  const double a_norm = normal.norm();
  if (a_norm < kTiny) throw GeometryError("MLR hyperplane with a zero normal vector");
  const double c = k.c();
  const double sc = k.sqrt_c();
  // Unprojected -p (+) x: the logit must vanish exactly at x = p.
  const Vector u = -offset;
  const double ux = u.dot(x);
  const double u2 = u.squaredNorm();
  const double x2 = x.squaredNorm();
  const double den = std::max(1.0 + 2.0 * c * ux + c * c * u2 * x2, kTiny);
  const Vector z = ((1.0 + 2.0 * c * ux + c * x2) * u + (1.0 - c * u2) * x) / den;
  const double lam_p = conformal_factor(offset, k);
  const double d = std::max(1.0 - c * z.squaredNorm(), kTiny);
  const double arg = 2.0 * sc * z.dot(normal) / (d * a_norm);
  return lam_p * a_norm / sc * std::asinh(arg);
}

}  // namespace kernel

double conformal_factor(const BallPoint& x) {
  if (x.curvature.c() * x.coords.squaredNorm() >= 1.0) {
    throw GeometryError("conformal factor undefined on or outside the boundary");
  }
  return kernel::conformal_factor(x.coords, x.curvature);
}

BallPoint mobius_neg(const BallPoint& x) { return BallPoint(-x.coords, x.curvature); }

BallPoint mobius_add(const BallPoint& x, const BallPoint& y) {
  require_same(x, y);
  return BallPoint(kernel::mobius_add(x.coords, y.coords, x.curvature), x.curvature);
}

BallPoint mobius_scalar_mul(double r, const BallPoint& x) {
  if (!std::isfinite(r)) throw InvalidArgument("Mobius scalar must be finite");
  return BallPoint(kernel::mobius_scalar_mul(r, x.coords, x.curvature), x.curvature);
}

BallPoint exp_map(const Vector& v, const BallPoint& base) {
  if (v.size() != base.dim()) throw GeometryError("exp_map: dimension mismatch");
  if (!v.allFinite()) throw InvalidArgument("exp_map: non-finite tangent vector");
  return BallPoint(kernel::exp_map(v, base.coords, base.curvature), base.curvature);
}

Vector log_map(const BallPoint& y, const BallPoint& base) {
  require_same(y, base);
  return kernel::log_map(y.coords, base.coords, base.curvature);
}

double distance(const BallPoint& x, const BallPoint& y) {
  require_same(x, y);
  return kernel::distance(x.coords, y.coords, x.curvature);
}

double hyperbolic_radius(const BallPoint& x) {
  return kernel::hyperbolic_radius(x.coords, x.curvature);
}

BallPoint gyromidpoint(std::span<const BallPoint> points, std::span<const double> weights) {
  if (points.empty()) throw InvalidArgument("gyromidpoint of an empty point set");
  std::vector<Vector> coords;
  coords.reserve(points.size());
  for (const BallPoint& p : points) {
    require_same(points.front(), p);
    coords.push_back(p.coords);
  }
  const Curvature& k = points.front().curvature;
  return BallPoint(kernel::gyromidpoint(coords, weights, k), k);
}

Vector mlr_logits(const BallPoint& x, std::span<const MlrHyperplane> hyperplanes) {
  if (hyperplanes.size() < 2) throw InvalidArgument("MLR needs at least two classes");
  Vector logits(static_cast<Eigen::Index>(hyperplanes.size()));
  for (std::size_t c = 0; c < hyperplanes.size(); ++c) {
    const MlrHyperplane& h = hyperplanes[c];
    require_same(x, h.offset);
    if (h.normal.size() != x.dim()) throw GeometryError("MLR normal dimension mismatch");
    logits[static_cast<Eigen::Index>(c)] =
        kernel::mlr_logit(x.coords, h.offset.coords, h.normal, x.curvature);
  }
  return logits;
}

Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

}  // namespace hyperada::geometry
