#include "hyperada/geometry_grad.hpp"

#include <algorithm>
#include <cmath>

#include "hyperada/errors.hpp"

namespace hyperada::geometry::grad {

namespace {

constexpr double kTiny = 1e-15;
constexpr double kSeriesCut = 1e-4;

// g(u) = tanh(u)/u and g'(u)/u, with series expansions near zero.
void tanh_ratio(double u, double& g, double& dg_over_u) {
  if (u < kSeriesCut) {
    g = 1.0 - u * u / 3.0;
    dg_over_u = -2.0 / 3.0 + 8.0 * u * u / 15.0;
    return;
  }
  const double t = std::tanh(u);
  const double sech2 = 1.0 - t * t;
  g = t / u;
  dg_over_u = (u * sech2 - t) / (u * u * u);
}

}  // namespace

Matrix exp_map0_forward(const Matrix& tangent, const Curvature& k) {
  Matrix out(tangent.rows(), tangent.cols());
  const double sc = k.sqrt_c();
  const double max_norm = k.max_norm();
  for (Eigen::Index n = 0; n < tangent.cols(); ++n) {
    const double norm = tangent.col(n).norm();
    double g, unused;
    tanh_ratio(sc * norm, g, unused);
    out.col(n) = g * tangent.col(n);
    const double out_norm = g * norm;
    if (out_norm > max_norm) out.col(n) *= max_norm / out_norm;
  }
  return out;
}

Matrix exp_map0_backward(const Matrix& tangent, const Matrix& d_points, const Curvature& k) {
  Matrix d_tangent(tangent.rows(), tangent.cols());
  const double sc = k.sqrt_c();
  const double c = k.c();
  const double max_norm = k.max_norm();
  for (Eigen::Index n = 0; n < tangent.cols(); ++n) {
    const auto v = tangent.col(n);
    const double norm = v.norm();
    double g, dg_over_u;
    tanh_ratio(sc * norm, g, dg_over_u);
    Vector dx = d_points.col(n);
    const double out_norm = g * norm;
    if (out_norm > max_norm) {
      // Projected: x_out = max_norm * x / |x|.
      const Vector xhat = v / norm;
      dx = (max_norm / out_norm) * (dx - xhat * xhat.dot(dx));
    }
    // x = g(sc*|v|) v ;  dg/dv = c * (g'(u)/u) v
    d_tangent.col(n) = g * dx + (c * dg_over_u * v.dot(dx)) * v;
  }
  return d_tangent;
}

Matrix mlr_forward(const Matrix& points, const Matrix& offsets, const Matrix& normals,
                   const Curvature& k) {
  const double c = k.c();
  const double sc = k.sqrt_c();
  const Eigen::Index classes = offsets.cols();
  const Eigen::Index count = points.cols();
  Matrix logits(classes, count);
  const Eigen::ArrayXd x2 = points.colwise().squaredNorm().transpose().array();
  for (Eigen::Index j = 0; j < classes; ++j) {
    const Vector u = -offsets.col(j);
    const Vector& a = normals.col(j);
    const double a_norm = a.norm();
    if (a_norm < kTiny) throw GeometryError("MLR hyperplane with a zero normal vector");
    const double u2 = u.squaredNorm();
    const double beta = 1.0 - c * u2;
    const double lam_p = 2.0 / beta;
    const Eigen::ArrayXd ux = (points.transpose() * u).array();
    const Eigen::ArrayXd alpha = 1.0 + 2.0 * c * ux + c * x2;
    const Eigen::ArrayXd den = (1.0 + 2.0 * c * ux + c * c * u2 * x2).max(kTiny);
    // z_n = (alpha_n u + beta x_n) / den_n ; only |z|^2 and <z, a> are needed.
    const double ua = u.dot(a);
    const Eigen::ArrayXd xa = (points.transpose() * a).array();
    const Eigen::ArrayXd q = (alpha * ua + beta * xa) / den;
    const Eigen::ArrayXd z2 =
        (alpha.square() * u2 + 2.0 * alpha * beta * ux + beta * beta * x2) / den.square();
    const Eigen::ArrayXd d = (1.0 - c * z2).max(kTiny);
    const Eigen::ArrayXd arg = 2.0 * sc * q / (d * a_norm);
    logits.row(j) = (lam_p * a_norm / sc * arg.asinh()).matrix().transpose();
  }
  return logits;
}

MlrGrad mlr_backward(const Matrix& points, const Matrix& offsets, const Matrix& normals,
                     const Curvature& k, const Matrix& d_logits) {
  const double c = k.c();
  const double sc = k.sqrt_c();
  const Eigen::Index dim = points.rows();
  const Eigen::Index classes = offsets.cols();
  const Eigen::Index count = points.cols();
  MlrGrad g{Matrix::Zero(dim, count), Matrix::Zero(dim, classes), Matrix::Zero(dim, classes)};
  const Eigen::ArrayXd x2 = points.colwise().squaredNorm().transpose().array();

  for (Eigen::Index j = 0; j < classes; ++j) {
    const Eigen::ArrayXd gl = d_logits.row(j).transpose().array();
    const Vector u = -offsets.col(j);
    const Vector a = normals.col(j);
    const double a_norm = a.norm();
    const double u2 = u.squaredNorm();
    const double beta = 1.0 - c * u2;
    const double lam_p = 2.0 / beta;
    const Eigen::ArrayXd ux = (points.transpose() * u).array();
    const Eigen::ArrayXd alpha = 1.0 + 2.0 * c * ux + c * x2;
    const Eigen::ArrayXd den_raw = 1.0 + 2.0 * c * ux + c * c * u2 * x2;
    const Eigen::ArrayXd den = den_raw.max(kTiny);
    const Eigen::ArrayXd inv_den = 1.0 / den;
    // Z = (u alpha^T + beta X) diag(1/den)
    const Matrix z = u * (alpha * inv_den).matrix().transpose() +
                     points * (beta * inv_den).matrix().asDiagonal();
    const Eigen::ArrayXd q = (z.transpose() * a).array();
    const Eigen::ArrayXd z2 = z.colwise().squaredNorm().transpose().array();
    const Eigen::ArrayXd d_raw = 1.0 - c * z2;
    const Eigen::ArrayXd d = d_raw.max(kTiny);
    const Eigen::ArrayXd arg = 2.0 * sc * q / (d * a_norm);
    const double kk = lam_p * a_norm / sc;

    const double d_k = (gl * arg.asinh()).sum();
    const Eigen::ArrayXd d_arg = gl * kk / (1.0 + arg.square()).sqrt();
    const Eigen::ArrayXd d_q = d_arg * 2.0 * sc / (d * a_norm);
    Eigen::ArrayXd d_d = -d_arg * arg / d;
    d_d = (d_raw > kTiny).select(d_d, 0.0);
    double d_anorm = -(d_arg * arg).sum() / a_norm + d_k * lam_p / sc;
    const double d_lam = d_k * a_norm / sc;

    // Through z: d = 1 - c|z|^2 and q = <z, a>.
    Matrix d_z = a * d_q.matrix().transpose() +
                 z * (-2.0 * c * d_d).matrix().asDiagonal();
    Vector d_a = z * d_q.matrix() + (d_anorm / a_norm) * a;

    // Z = N / den with N = u alpha^T + beta X.
    const Eigen::ArrayXd d_den =
        (den_raw > kTiny).select(-(d_z.array() * z.array()).colwise().sum().transpose() * inv_den,
                                 0.0);
    const Matrix d_n = d_z * inv_den.matrix().asDiagonal();
    Vector d_u = d_n * alpha.matrix();
    const Eigen::ArrayXd d_alpha = (d_n.transpose() * u).array();
    const double d_beta = (points.array() * d_n.array()).sum();
    g.d_points += beta * d_n;

    const Eigen::ArrayXd d_ux = 2.0 * c * d_alpha + 2.0 * c * d_den;
    const Eigen::ArrayXd d_x2 = c * d_alpha + c * c * u2 * d_den;
    double d_u2 = c * c * (x2 * d_den).sum() - c * d_beta;

    d_u += points * d_ux.matrix();
    g.d_points += u * d_ux.matrix().transpose();
    g.d_points += points * (2.0 * d_x2).matrix().asDiagonal();
    d_u += 2.0 * d_u2 * u;

    // lam_p = 2 / (1 - c|p|^2) ; d lam / dp = c lam^2 p ; p = -u.
    const Vector p = offsets.col(j);
    g.d_offsets.col(j) = -d_u + d_lam * c * lam_p * lam_p * p;
    g.d_normals.col(j) = d_a;
  }
  return g;
}

std::pair<Vector, Vector> mobius_add_vjp(const Vector& u, const Vector& v, const Vector& d_out,
                                         const Curvature& k) {
  const double c = k.c();
  const double uv = u.dot(v);
  const double u2 = u.squaredNorm();
  const double v2 = v.squaredNorm();
  const double alpha = 1.0 + 2.0 * c * uv + c * v2;
  const double beta = 1.0 - c * u2;
  const double den = std::max(1.0 + 2.0 * c * uv + c * c * u2 * v2, kTiny);
  const Vector out = (alpha * u + beta * v) / den;
  const Vector d_n = d_out / den;
  const double d_den = -d_out.dot(out) / den;
  const double nu = d_n.dot(u);
  const double nv = d_n.dot(v);
  Vector d_u = alpha * d_n + nu * 2.0 * c * v - nv * 2.0 * c * u +
               d_den * (2.0 * c * v + 2.0 * c * c * v2 * u);
  Vector d_v = beta * d_n + nu * (2.0 * c * u + 2.0 * c * v) +
               d_den * (2.0 * c * u + 2.0 * c * c * u2 * v);
  return {std::move(d_u), std::move(d_v)};
}

Vector mobius_scalar_mul_vjp(double r, const Vector& y, const Vector& d_out, const Curvature& k) {
  const double sc = k.sqrt_c();
  const double c = k.c();
  const double n = y.norm();
  const double u = sc * n;
  double h, dh_over_n;
  if (u < kSeriesCut) {
    // h ~ r + (r - r^3) u^2 / 3
    h = r + (r - r * r * r) * u * u / 3.0;
    dh_over_n = 2.0 * (r - r * r * r) * c / 3.0;
  } else {
    const double t = std::atanh(std::min(u, 1.0 - 1e-15));
    const double big_t = std::tanh(r * t);
    const double dt_dn = sc / (1.0 - u * u);
    const double d_big_t = r * (1.0 - big_t * big_t) * dt_dn;
    h = big_t / u;
    dh_over_n = (d_big_t * u - big_t * sc) / (u * u) / n;
  }
  return h * d_out + (dh_over_n * y.dot(d_out)) * y;
}

std::vector<Vector> gyromidpoint_vjp(std::span<const Vector> points,
                                     std::span<const double> weights, const Vector& d_out,
                                     const Curvature& k) {
  const double c = k.c();
  const Eigen::Index dim = points.front().size();
  Vector numer = Vector::Zero(dim);
  double denom = 0.0;
  std::vector<double> lams(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    lams[i] = 2.0 / (1.0 - c * points[i].squaredNorm());
    numer += (weights[i] * lams[i]) * points[i];
    denom += weights[i] * (lams[i] - 1.0);
  }
  const Vector y = numer / denom;
  const Vector d_y = mobius_scalar_mul_vjp(0.5, y, d_out, k);
  const Vector d_numer = d_y / denom;
  const double d_denom = -d_y.dot(y) / denom;
  std::vector<Vector> result;
  result.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double d_lam = weights[i] * d_numer.dot(points[i]) + weights[i] * d_denom;
    result.push_back(weights[i] * lams[i] * d_numer + d_lam * c * lams[i] * lams[i] * points[i]);
  }
  return result;
}

Vector distance_grad_y(const Vector& x, const Vector& y, const Curvature& k) {
  const double c = k.c();
  const Vector u = -x;
  const double uv = u.dot(y);
  const double u2 = u.squaredNorm();
  const double v2 = y.squaredNorm();
  const double den = std::max(1.0 + 2.0 * c * uv + c * c * u2 * v2, kTiny);
  const Vector z = ((1.0 + 2.0 * c * uv + c * v2) * u + (1.0 - c * u2) * y) / den;
  const double zn = z.norm();
  if (zn < kTiny) return Vector::Zero(y.size());
  const Vector d_z = (2.0 / std::max(1.0 - c * zn * zn, kTiny)) * (z / zn);
  return mobius_add_vjp(u, y, d_z, k).second;
}

}  // namespace hyperada::geometry::grad
