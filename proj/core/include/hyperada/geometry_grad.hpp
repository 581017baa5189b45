#pragma once

// Batched forward passes and vector-Jacobian products for the ball operations
// the training pipeline differentiates through. Embeddings are stored one per
// column (d x N).

#include <span>
#include <utility>
#include <vector>

#include "hyperada/geometry.hpp"

namespace hyperada::geometry::grad {

/// Column-wise exp map at the origin, followed by the ball guard.
Matrix exp_map0_forward(const Matrix& tangent, const Curvature& k);
/// d(loss)/d(tangent) given d(loss)/d(points), recomputing the forward pass.
Matrix exp_map0_backward(const Matrix& tangent, const Matrix& d_points, const Curvature& k);

/// Logits (C x N) for points (d x N) against offsets/normals (d x C).
Matrix mlr_forward(const Matrix& points, const Matrix& offsets, const Matrix& normals,
                   const Curvature& k);

struct MlrGrad {
  Matrix d_points;   // d x N
  Matrix d_offsets;  // d x C
  Matrix d_normals;  // d x C
};

MlrGrad mlr_backward(const Matrix& points, const Matrix& offsets, const Matrix& normals,
                     const Curvature& k, const Matrix& d_logits);

/// VJP of unprojected Mobius addition u (+) v.
std::pair<Vector, Vector> mobius_add_vjp(const Vector& u, const Vector& v, const Vector& d_out,
                                         const Curvature& k);

/// VJP of r (x) y with respect to y.
Vector mobius_scalar_mul_vjp(double r, const Vector& y, const Vector& d_out, const Curvature& k);

/// VJP of the weighted gyromidpoint with respect to every point (weights fixed).
std::vector<Vector> gyromidpoint_vjp(std::span<const Vector> points,
                                     std::span<const double> weights, const Vector& d_out,
                                     const Curvature& k);

/// Gradient of distance(x, y) with respect to y.
Vector distance_grad_y(const Vector& x, const Vector& y, const Curvature& k);

}  // namespace hyperada::geometry::grad
