#pragma once

// Poincare-ball geometry: Mobius algebra, exponential and logarithmic maps,
// geodesic distance, the weighted Mobius gyromidpoint and the hyperbolic
// multinomial logistic regression head.
//
// Curvature is stored as kappa < 0 and formulas use c = |kappa|. Every
// operation that returns a point re-projects it so that c * |x|^2 <= 1 - eps,
// where eps is the ball guard carried by the Curvature value.

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace hyperada::geometry {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kDefaultBallEpsilon = 1e-5;

class Curvature {
 public:
  /// Throws GeometryError unless kappa is finite and strictly negative.
  explicit Curvature(double kappa = -1.0, double ball_epsilon = kDefaultBallEpsilon);

  double kappa() const noexcept { return kappa_; }
  double c() const noexcept { return -kappa_; }
  double sqrt_c() const noexcept { return sqrt_c_; }
  double ball_epsilon() const noexcept { return epsilon_; }

  /// Largest Euclidean norm a guarded point may have.
  double max_norm() const noexcept { return max_norm_; }

  bool operator==(const Curvature& other) const noexcept {
    return kappa_ == other.kappa_ && epsilon_ == other.epsilon_;
  }

 private:
  double kappa_;
  double epsilon_;
  double sqrt_c_;
  double max_norm_;
};

struct BallPoint {
  Vector coords;
  Curvature curvature;

  BallPoint() = default;
  /// Validates that the point lies strictly inside the ball.
  BallPoint(Vector coords, Curvature curvature);

  static BallPoint origin(Eigen::Index dim, Curvature curvature = Curvature{});

  Eigen::Index dim() const noexcept { return coords.size(); }
};

struct MlrHyperplane {
  BallPoint offset;  // p_c
  Vector normal;     // a_c
};

// ---------------------------------------------------------------------------
// Vector-level kernels. These assume their inputs are inside the ball and
// skip the point-type bookkeeping; the BallPoint API below validates and
// forwards here.
namespace kernel {

double conformal_factor(const Vector& x, const Curvature& k);
/// Scales x back inside the guarded ball if needed.
Vector project(Vector x, const Curvature& k);
Vector mobius_add(const Vector& x, const Vector& y, const Curvature& k);
Vector mobius_scalar_mul(double r, const Vector& x, const Curvature& k);
Vector exp_map(const Vector& v, const Vector& base, const Curvature& k);
Vector log_map(const Vector& y, const Vector& base, const Curvature& k);
Vector exp_map0(const Vector& v, const Curvature& k);
Vector log_map0(const Vector& y, const Curvature& k);
double distance(const Vector& x, const Vector& y, const Curvature& k);
double hyperbolic_radius(const Vector& x, const Curvature& k);
/// Tangent vector at the origin carried to the tangent space at base.
Vector transport_from_origin(const Vector& v, const Vector& base, const Curvature& k);
Vector transport_to_origin(const Vector& v, const Vector& base, const Curvature& k);
Vector gyromidpoint(std::span<const Vector> points, std::span<const double> weights,
                    const Curvature& k);
double mlr_logit(const Vector& x, const Vector& offset, const Vector& normal,
                 const Curvature& k);

}  // namespace kernel

double conformal_factor(const BallPoint& x);
BallPoint mobius_neg(const BallPoint& x);
BallPoint mobius_add(const BallPoint& x, const BallPoint& y);
BallPoint mobius_scalar_mul(double r, const BallPoint& x);
BallPoint exp_map(const Vector& v, const BallPoint& base);
Vector log_map(const BallPoint& y, const BallPoint& base);
double distance(const BallPoint& x, const BallPoint& y);
double hyperbolic_radius(const BallPoint& x);

/// Weighted Mobius gyromidpoint
///   m(x_1..x_n; a_1..a_n) = 1/2 (x) ( sum_i a_i L_i x_i / sum_j a_j (L_j - 1) )
/// with L_i the conformal factor at x_i. Weights must be non-negative and not
/// all zero.
BallPoint gyromidpoint(std::span<const BallPoint> points, std::span<const double> weights);

/// Signed distance-to-gyroplane logits, one per hyperplane.
Vector mlr_logits(const BallPoint& x, std::span<const MlrHyperplane> hyperplanes);

/// Numerically stable softmax.
Vector softmax(const Vector& logits);

}  // namespace hyperada::geometry
