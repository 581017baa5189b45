#pragma once

// Per-class wrapped-normal distributions on the Poincare ball and their
// estimation by a learned gradient-flow ODE.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hyperada/geometry.hpp"
#include "hyperada/ode.hpp"
#include "hyperada/random.hpp"

namespace hyperada::distributions {

using geometry::BallPoint;
using geometry::Curvature;
using geometry::Matrix;
using geometry::Vector;

inline constexpr double kMaxVariance = 4.0;     // sigma^2_max
inline constexpr double kMinLogVariance = -40.0;
inline constexpr double kMaxVelocity = 10.0;    // v_max
inline constexpr int kFlowHidden = 32;

struct ClassDistribution {
  int class_id = 0;
  BallPoint mean;
  Vector log_diag_cov;  // diagonal covariance in the tangent space at the mean, as logs

  Eigen::Index dim() const noexcept { return mean.dim(); }
  const Curvature& curvature() const noexcept { return mean.curvature; }
  /// Clamped variances, each in (0, kMaxVariance].
  Vector variances() const;

  /// ODE state layout: [mean coords ; log variances].
  Vector flatten() const;
  static ClassDistribution unflatten(int class_id, const Vector& theta, const Curvature& k);
};

/// Samples tangent noise at the origin, transports it to the mean and applies
/// the exponential map there.
std::vector<BallPoint> wrapped_normal_sample(const ClassDistribution& dist, int n, Rng& rng);

/// Log density of the wrapped normal at y, including the exp-map volume term.
double wrapped_normal_log_density(const ClassDistribution& dist, const Vector& y);

/// Sufficient statistics of a class batch at a reference point (the current
/// mean): count, tangent mean and tangent second moment, both expressed at
/// the origin frame.
struct BatchStatistics {
  int count = 0;
  Vector tangent_mean;
  Vector tangent_second_moment;
};

BatchStatistics compute_statistics(std::span<const Vector> embeddings, const Vector& reference,
                                   const Curvature& k);

/// Two-layer tanh network mapping (distribution parameters, batch statistics)
/// to a parameter velocity.
class FlowNetwork {
 public:
  FlowNetwork() = default;
  /// Small random hidden layer, zero output layer: the initial flow is still.
  FlowNetwork(Eigen::Index dim, Rng& rng, int hidden = kFlowHidden);

  static FlowNetwork zeros(Eigen::Index dim, int hidden = kFlowHidden);

  Eigen::Index dim() const noexcept { return dim_; }
  Eigen::Index input_size() const noexcept { return 4 * dim_ + 1; }
  Eigen::Index output_size() const noexcept { return 2 * dim_; }
  Eigen::Index parameter_count() const noexcept;

  Vector parameters() const;
  void set_parameters(const Vector& flat);

  /// Unclipped network output.
  Vector evaluate(const Vector& input) const;

  const Matrix& w1() const noexcept { return w1_; }
  const Matrix& w2() const noexcept { return w2_; }

  friend void to_json(nlohmann::json& j, const FlowNetwork& net);
  friend void from_json(const nlohmann::json& j, FlowNetwork& net);

 private:
  Eigen::Index dim_ = 0;
  Matrix w1_;
  Vector b1_;
  Matrix w2_;
  Vector b2_;
};

/// d(theta)/dt for flattened distribution parameters, clipped to norm kMaxVelocity.
Vector flow_field(const Vector& dist_params, const BatchStatistics& stats, const FlowNetwork& net);

/// Moment estimate used as the ODE's initial condition: gyromidpoint of the
/// class embeddings and the tangent variance around it.
ClassDistribution moment_estimate(int class_id, std::span<const Vector> embeddings,
                                  const Curvature& k);

/// Integrates the gradient flow from the moment estimate.
ClassDistribution estimate_distribution(int class_id, std::span<const Vector> embeddings,
                                        const FlowNetwork& net, const OdeSolverConfig& solver,
                                        const Curvature& k);

using ClassEmbeddings = std::map<int, std::vector<Vector>>;

struct EstimationResult {
  std::vector<ClassDistribution> distributions;
  std::vector<int> skipped_classes;
};

/// Estimates one distribution per class present in `split`.
EstimationResult estimate_all(const ClassEmbeddings& split, const FlowNetwork& net,
                              const OdeSolverConfig& solver, const Curvature& k);

struct MetaHooks {
  /// Validation loss of a set of distributions on the validation split.
  /// Defaults to the mean negative wrapped-normal log density.
  std::function<double(const std::vector<ClassDistribution>&, const ClassEmbeddings&)> val_loss;
  double perturbation = 0.05;
  double learning_rate = 0.05;
  int perturbation_samples = 2;
};

double default_validation_loss(const std::vector<ClassDistribution>& dists,
                               const ClassEmbeddings& val);

struct MetaUpdateResult {
  FlowNetwork net;
  double val_loss_before = 0.0;
  double val_loss_after = 0.0;
  std::vector<int> skipped_classes;  // in val but absent from train
};

/// One outer step: estimate on the train split, score on the val split, and
/// update the flow network with a simultaneous-perturbation gradient estimate.
/// A candidate that does not reduce the validation loss is backtracked.
MetaUpdateResult meta_update(const FlowNetwork& net, const ClassEmbeddings& train_split,
                             const ClassEmbeddings& val_split, const OdeSolverConfig& inner,
                             const MetaHooks& hooks, const Curvature& k, Rng& rng);

void to_json(nlohmann::json& j, const ClassDistribution& dist);
ClassDistribution distribution_from_json(const nlohmann::json& j);

}  // namespace hyperada::distributions
