#include "hyperada/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "hyperada/errors.hpp"

namespace hyperada::distributions {

namespace gk = geometry::kernel;

namespace {

constexpr double kMinMomentVariance = 1e-6;
constexpr std::size_t kMaxStatisticPoints = 128;

double clamp_log_variance(double v) { return std::clamp(v, kMinLogVariance, std::log(kMaxVariance)); }

// Evenly strided subset, so the flow field cost does not grow with the batch.
std::vector<Vector> strided_subset(std::span<const Vector> points) {
  if (points.size() <= kMaxStatisticPoints) return {points.begin(), points.end()};
  std::vector<Vector> out;
  out.reserve(kMaxStatisticPoints);
  const double stride = static_cast<double>(points.size()) / kMaxStatisticPoints;
  for (std::size_t i = 0; i < kMaxStatisticPoints; ++i) {
    out.push_back(points[static_cast<std::size_t>(i * stride)]);
  }
  return out;
}

}  // namespace

Vector ClassDistribution::variances() const {
  return log_diag_cov.unaryExpr([](double v) { return std::exp(clamp_log_variance(v)); });
}

Vector ClassDistribution::flatten() const {
  Vector theta(2 * dim());
  theta << mean.coords, log_diag_cov;
  return theta;
}

ClassDistribution ClassDistribution::unflatten(int class_id, const Vector& theta,
                                               const Curvature& k) {
  const Eigen::Index d = theta.size() / 2;
  ClassDistribution dist;
  dist.class_id = class_id;
  dist.mean = BallPoint(gk::project(theta.head(d), k), k);
  dist.log_diag_cov = theta.tail(d).unaryExpr(&clamp_log_variance);
  return dist;
}

std::vector<BallPoint> wrapped_normal_sample(const ClassDistribution& dist, int n, Rng& rng) {
  if (n < 1) throw InvalidArgument("wrapped_normal_sample needs n >= 1");
  const Curvature& k = dist.curvature();
  const Vector stddev = dist.variances().cwiseSqrt();
  std::vector<BallPoint> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    Vector v(dist.dim());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = stddev[i] * rng.normal();
    const Vector u = gk::transport_from_origin(v, dist.mean.coords, k);
    out.emplace_back(gk::exp_map(u, dist.mean.coords, k), k);
  }
  return out;
}

double wrapped_normal_log_density(const ClassDistribution& dist, const Vector& y) {
  const Curvature& k = dist.curvature();
  const Vector& mu = dist.mean.coords;
  const Vector u = gk::log_map(y, mu, k);
  const Vector v = gk::transport_to_origin(u, mu, k);
  const Vector var = dist.variances();
  const double d = static_cast<double>(dist.dim());
  double log_n = -0.5 * d * std::log(2.0 * std::numbers::pi);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    log_n -= 0.5 * (v[i] * v[i] / var[i] + std::log(var[i]));
  }
  const double r = k.sqrt_c() * gk::distance(mu, y, k);
  const double volume = r < 1e-8 ? 0.0 : (d - 1.0) * std::log(std::sinh(r) / r);
  return log_n - volume;
}

BatchStatistics compute_statistics(std::span<const Vector> embeddings, const Vector& reference,
                                   const Curvature& k) {
  if (embeddings.empty()) throw InvalidArgument("batch statistics of an empty class");
  BatchStatistics stats;
  stats.count = static_cast<int>(embeddings.size());
  stats.tangent_mean = Vector::Zero(reference.size());
  stats.tangent_second_moment = Vector::Zero(reference.size());
  const std::vector<Vector> subset = strided_subset(embeddings);
  for (const Vector& x : subset) {
    const Vector v = gk::transport_to_origin(gk::log_map(x, reference, k), reference, k);
    stats.tangent_mean += v;
    stats.tangent_second_moment += v.cwiseProduct(v);
  }
  const double inv = 1.0 / static_cast<double>(subset.size());
  stats.tangent_mean *= inv;
  stats.tangent_second_moment *= inv;
  return stats;
}

FlowNetwork::FlowNetwork(Eigen::Index dim, Rng& rng, int hidden) : FlowNetwork(zeros(dim, hidden)) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(input_size()));
  for (Eigen::Index i = 0; i < w1_.size(); ++i) w1_.data()[i] = scale * rng.normal();
}

FlowNetwork FlowNetwork::zeros(Eigen::Index dim, int hidden) {
  if (dim < 1 || hidden < 1) throw InvalidArgument("flow network sizes must be positive");
  FlowNetwork net;
  net.dim_ = dim;
  net.w1_ = Matrix::Zero(hidden, 4 * dim + 1);
  net.b1_ = Vector::Zero(hidden);
  net.w2_ = Matrix::Zero(2 * dim, hidden);
  net.b2_ = Vector::Zero(2 * dim);
  return net;
}

Eigen::Index FlowNetwork::parameter_count() const noexcept {
  return w1_.size() + b1_.size() + w2_.size() + b2_.size();
}

Vector FlowNetwork::parameters() const {
  Vector flat(parameter_count());
  flat << Eigen::Map<const Vector>(w1_.data(), w1_.size()), b1_,
      Eigen::Map<const Vector>(w2_.data(), w2_.size()), b2_;
  return flat;
}

void FlowNetwork::set_parameters(const Vector& flat) {
  if (flat.size() != parameter_count()) throw InvalidArgument("flow parameter size mismatch");
  Eigen::Index at = 0;
  auto take = [&](double* dst, Eigen::Index n) {
    Eigen::Map<Vector>(dst, n) = flat.segment(at, n);
    at += n;
  };
  take(w1_.data(), w1_.size());
  take(b1_.data(), b1_.size());
  take(w2_.data(), w2_.size());
  take(b2_.data(), b2_.size());
}

Vector FlowNetwork::evaluate(const Vector& input) const {
  if (input.size() != input_size()) throw InvalidArgument("flow network input size mismatch");
  const Vector hidden = (w1_ * input + b1_).array().tanh().matrix();
  return w2_ * hidden + b2_;
}

Vector flow_field(const Vector& dist_params, const BatchStatistics& stats, const FlowNetwork& net) {
  if (stats.count < 1) throw InvalidArgument("flow field needs at least one class embedding");
  const Eigen::Index d = net.dim();
  if (dist_params.size() != 2 * d) throw InvalidArgument("distribution parameter size mismatch");
  Vector input(net.input_size());
  input << dist_params, std::log1p(static_cast<double>(stats.count)), stats.tangent_mean,
      stats.tangent_second_moment;
  Vector velocity = net.evaluate(input);
  if (!velocity.allFinite()) velocity.setZero();
  const double norm = velocity.norm();
  if (norm > kMaxVelocity) velocity *= kMaxVelocity / norm;
  return velocity;
}

ClassDistribution moment_estimate(int class_id, std::span<const Vector> embeddings,
                                  const Curvature& k) {
  if (embeddings.empty()) throw InvalidArgument("moment estimate of an empty class");
  const std::vector<Vector> subset = strided_subset(embeddings);
  const std::vector<double> weights(subset.size(), 1.0);
  const Vector mu = gk::gyromidpoint(subset, weights, k);
  Vector second = Vector::Zero(mu.size());
  for (const Vector& x : subset) {
    const Vector v = gk::transport_to_origin(gk::log_map(x, mu, k), mu, k);
    second += v.cwiseProduct(v);
  }
  second /= static_cast<double>(subset.size());
  ClassDistribution dist;
  dist.class_id = class_id;
  dist.mean = BallPoint(mu, k);
  dist.log_diag_cov = second.unaryExpr(
      [](double v) { return clamp_log_variance(std::log(std::max(v, kMinMomentVariance))); });
  return dist;
}

ClassDistribution estimate_distribution(int class_id, std::span<const Vector> embeddings,
                                        const FlowNetwork& net, const OdeSolverConfig& solver,
                                        const Curvature& k) {
  const ClassDistribution start = moment_estimate(class_id, embeddings, k);
  const std::vector<Vector> subset = strided_subset(embeddings);
  const Eigen::Index d = start.dim();
  const VectorField field = [&](const Vector& theta) {
    const Vector mu = gk::project(theta.head(d), k);
    return flow_field(theta, compute_statistics(subset, mu, k), net);
  };
  return ClassDistribution::unflatten(class_id, integrate(field, start.flatten(), solver), k);
}

EstimationResult estimate_all(const ClassEmbeddings& split, const FlowNetwork& net,
                              const OdeSolverConfig& solver, const Curvature& k) {
  EstimationResult result;
  for (const auto& [cls, points] : split) {
    if (points.empty()) {
      result.skipped_classes.push_back(cls);
      continue;
    }
    result.distributions.push_back(estimate_distribution(cls, points, net, solver, k));
  }
  return result;
}

double default_validation_loss(const std::vector<ClassDistribution>& dists,
                               const ClassEmbeddings& val) {
  double total = 0.0;
  std::size_t count = 0;
  for (const ClassDistribution& dist : dists) {
    const auto it = val.find(dist.class_id);
    if (it == val.end()) continue;
    for (const Vector& y : it->second) {
      total -= wrapped_normal_log_density(dist, y);
      ++count;
    }
  }
  if (count == 0) throw InvalidArgument("validation split shares no class with the estimates");
  return total / static_cast<double>(count);
}

MetaUpdateResult meta_update(const FlowNetwork& net, const ClassEmbeddings& train_split,
                             const ClassEmbeddings& val_split, const OdeSolverConfig& inner,
                             const MetaHooks& hooks, const Curvature& k, Rng& rng) {
  auto non_empty = [](const ClassEmbeddings& s) {
    return std::any_of(s.begin(), s.end(), [](const auto& kv) { return !kv.second.empty(); });
  };
  if (!non_empty(train_split)) throw InvalidArgument("meta_update: empty train split");
  if (!non_empty(val_split)) throw InvalidArgument("meta_update: empty validation split");

  MetaUpdateResult result;
  for (const auto& [cls, points] : val_split) {
    const auto it = train_split.find(cls);
    if (!points.empty() && (it == train_split.end() || it->second.empty())) {
      result.skipped_classes.push_back(cls);
    }
  }

  const auto& loss_fn = hooks.val_loss ? hooks.val_loss : default_validation_loss;
  FlowNetwork probe = net;
  auto loss_at = [&](const Vector& params) {
    probe.set_parameters(params);
    return loss_fn(estimate_all(train_split, probe, inner, k).distributions, val_split);
  };

  const Vector phi = net.parameters();
  result.val_loss_before = loss_at(phi);

  Vector gradient = Vector::Zero(phi.size());
  for (int s = 0; s < hooks.perturbation_samples; ++s) {
    Vector delta(phi.size());
    for (Eigen::Index i = 0; i < delta.size(); ++i) delta[i] = rng.coin() ? 1.0 : -1.0;
    const double plus = loss_at(phi + hooks.perturbation * delta);
    const double minus = loss_at(phi - hooks.perturbation * delta);
    gradient += ((plus - minus) / (2.0 * hooks.perturbation)) * delta;
  }
  gradient /= static_cast<double>(std::max(1, hooks.perturbation_samples));

  result.net = net;
  result.val_loss_after = result.val_loss_before;
  const double gnorm = gradient.norm();
  if (!(gnorm > 0.0) || !std::isfinite(gnorm)) return result;

  double step = hooks.learning_rate;
  for (int attempt = 0; attempt < 5; ++attempt, step *= 0.5) {
    const Vector candidate = phi - (step / std::max(1.0, gnorm)) * gradient;
    const double loss = loss_at(candidate);
    if (std::isfinite(loss) && loss < result.val_loss_before) {
      result.net.set_parameters(candidate);
      result.val_loss_after = loss;
      break;
    }
  }
  return result;
}

void to_json(nlohmann::json& j, const FlowNetwork& net) {
  auto mat = [](const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(m.cols()));
      for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
      rows.push_back(row);
    }
    return rows;
  };
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  j = nlohmann::json{{"format", "hyperada.flow_network"},
                     {"version", 1},
                     {"dim", net.dim_},
                     {"hidden", net.b1_.size()},
                     {"w1", mat(net.w1_)},
                     {"b1", vec(net.b1_)},
                     {"w2", mat(net.w2_)},
                     {"b2", vec(net.b2_)}};
}

void from_json(const nlohmann::json& j, FlowNetwork& net) {
  if (j.value("format", "") != "hyperada.flow_network" || j.value("version", 0) != 1) {
    throw InvalidArgument("not a version-1 flow network document");
  }
  net = FlowNetwork::zeros(j.at("dim").get<Eigen::Index>(), j.at("hidden").get<int>());
  auto read_mat = [](const nlohmann::json& rows, Matrix& m) {
    if (rows.size() != static_cast<std::size_t>(m.rows())) throw InvalidArgument("matrix rows");
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const auto row = rows[static_cast<std::size_t>(r)].get<std::vector<double>>();
      if (row.size() != static_cast<std::size_t>(m.cols())) throw InvalidArgument("matrix cols");
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = row[static_cast<std::size_t>(c)];
    }
  };
  auto read_vec = [](const nlohmann::json& arr, Vector& v) {
    const auto values = arr.get<std::vector<double>>();
    if (values.size() != static_cast<std::size_t>(v.size())) throw InvalidArgument("vector size");
    v = Eigen::Map<const Vector>(values.data(), v.size());
  };
  read_mat(j.at("w1"), net.w1_);
  read_vec(j.at("b1"), net.b1_);
  read_mat(j.at("w2"), net.w2_);
  read_vec(j.at("b2"), net.b2_);
}

void to_json(nlohmann::json& j, const ClassDistribution& dist) {
  const Vector& m = dist.mean.coords;
  j = nlohmann::json{{"format", "hyperada.class_distribution"},
                     {"version", 1},
                     {"class_id", dist.class_id},
                     {"kappa", dist.curvature().kappa()},
                     {"mean", std::vector<double>(m.data(), m.data() + m.size())},
                     {"log_diag_cov", std::vector<double>(dist.log_diag_cov.data(),
                                                          dist.log_diag_cov.data() +
                                                              dist.log_diag_cov.size())}};
}

ClassDistribution distribution_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "hyperada.class_distribution" || j.value("version", 0) != 1) {
    throw InvalidArgument("not a version-1 class distribution document");
  }
  const Curvature k(j.at("kappa").get<double>());
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto logs = j.at("log_diag_cov").get<std::vector<double>>();
  if (mean.size() != logs.size()) throw InvalidArgument("mean/covariance dimension mismatch");
  ClassDistribution dist;
  dist.class_id = j.at("class_id").get<int>();
  dist.mean = BallPoint(Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size())), k);
  dist.log_diag_cov = Eigen::Map<const Vector>(logs.data(), static_cast<Eigen::Index>(logs.size()));
  return dist;
}

}  // namespace hyperada::distributions
