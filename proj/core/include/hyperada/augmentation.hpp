#pragma once

// Hyperbolic feature augmentation for dense prediction: per-class synthetic
// embedding pools, geodesic interpolation towards pool members on a dynamic
// schedule, hyperbolic mixup within classes, reintegration into the cell map
// and the composite augmentation loss.

#include <map>
#include <string>
#include <vector>

#include "hyperada/distributions.hpp"
#include "hyperada/geometry.hpp"
#include "hyperada/geometry_grad.hpp"
#include "hyperada/random.hpp"
#include "hyperada/types.hpp"

namespace hyperada::augmentation {

using distributions::ClassDistribution;
using geometry::BallPoint;
using geometry::Curvature;
using geometry::Matrix;
using geometry::Vector;

/// Hyperbolic MLR classifier over column-stored embeddings.
struct MlrClassifier {
  Matrix offsets;  // d x C, each column inside the ball
  Matrix normals;  // d x C
  Curvature curvature;

  Eigen::Index classes() const noexcept { return offsets.cols(); }
  Eigen::Index dim() const noexcept { return offsets.rows(); }
  Matrix logits(const Matrix& points) const;
  Matrix probabilities(const Matrix& points) const;
  std::vector<geometry::MlrHyperplane> hyperplanes() const;
};

/// Column-wise softmax of a C x N logit matrix.
Matrix softmax_columns(const Matrix& logits);

/// One embedding per cell (pixel, point or voxel), with its class label or
/// kUnlabeled.
struct EmbeddingMap {
  Matrix coords;            // d x N
  std::vector<int> labels;  // N
  Curvature curvature;
  int height = 1;  // images: H x W with N = H * W; clouds: 1 x N
  int width = 0;

  Eigen::Index size() const noexcept { return coords.cols(); }
  BallPoint at(Eigen::Index cell) const { return BallPoint(coords.col(cell), curvature); }
  /// Validates shapes, label range and ball containment of labeled cells.
  void validate(int num_classes) const;
};

/// Cell indices of every labeled class, in ascending cell order.
std::map<int, std::vector<int>> cells_by_class(const EmbeddingMap& map);

enum class PoolKind { kSampled, kMixed };

struct PoolEntry {
  BallPoint point;
  PoolKind kind;
};

struct AugmentationPool {
  std::map<int, std::vector<PoolEntry>> entries;

  std::vector<BallPoint> sampled(int cls) const;
  std::size_t size(int cls) const;
};

/// Synthetic samples per class: 5 for images, 2 for point clouds.
int samples_per_class(Modality mode);

/// Draws samples_per_class(mode) embeddings for every class in
/// `present_classes`; classes not present get no entry. Throws if a present
/// class has no distribution.
AugmentationPool build_pool(const std::vector<ClassDistribution>& distributions,
                            const std::vector<int>& present_classes, Modality mode, Rng& rng);

struct InterpolationSchedule {
  double w0 = 0.1;
  double w1 = 0.5;
  /// Linear ramp from w0 at t = 0 to w1 at t = 1, clamped to that range.
  double weight(double t_frac) const;
};

/// An augmented embedding and how it was produced: the gyromidpoint of the
/// real embedding at `cell` (weight w_self) and either a second real cell
/// (mixup) or a synthetic point (interpolation), with weight w_partner.
struct AugmentedEmbedding {
  int cell = -1;
  PoolKind kind = PoolKind::kSampled;
  int partner_cell = -1;  // mixup partner, or -1
  Vector partner;         // synthetic partner when partner_cell < 0
  double w_self = 1.0;
  double w_partner = 0.0;
  Vector point;
};

using AugmentedSet = std::map<int, std::vector<AugmentedEmbedding>>;

/// Replaces each real embedding by gyromidpoint(real, synthetic_j) with
/// weights (1 - w, w), w = schedule.weight(t_frac), for a random pool member
/// j. `subsample` < 1 interpolates only that fraction of each class's cells.
AugmentedSet interpolate(const EmbeddingMap& real, const AugmentationPool& pool,
                         const InterpolationSchedule& schedule, double t_frac, Rng& rng,
                         double subsample = 1.0);

struct MixupConfig {
  bool enabled = true;
  double beta_alpha = 0.4;
};

/// Pairs each real embedding of a class with a uniformly shuffled partner of
/// the same class and returns gyromidpoint(h, h', lambda, 1 - lambda) with
/// lambda ~ Beta(alpha, alpha). Classes with fewer than two cells are listed
/// in `skipped`.
AugmentedSet hyperbolic_mixup(const EmbeddingMap& real, const MixupConfig& cfg, Rng& rng,
                              std::vector<int>* skipped = nullptr);

/// Adds mixed embeddings to the pool, tagged kMixed.
void add_mixed(AugmentationPool& pool, const AugmentedSet& mixed, const Curvature& k);

struct Reintegration {
  EmbeddingMap map;
  std::vector<AugmentedEmbedding> applied;  // one per replaced cell
};

/// Per class, a coin flip selects the interpolated or the mixed set (falling
/// back to whichever is non-empty); the chosen cells receive their augmented
/// embeddings. Labels and unlabeled cells are untouched.
Reintegration reintegrate(const EmbeddingMap& features, const AugmentedSet& sampled,
                          const AugmentedSet& mixed, Rng& rng);

/// Backpropagates d(loss)/d(augmented coords) onto the original coords.
Matrix reintegration_vjp(const EmbeddingMap& original, const Reintegration& aug,
                         const Matrix& d_augmented);

/// Mean over labeled cells of -(1 - p_t)^gamma log p_t. Probabilities are
/// C x N with columns summing to one within 1e-6.
double focal_loss(const Matrix& probs, const std::vector<int>& targets, double gamma);

/// Gradient of the mean focal loss with respect to the logits behind `probs`.
Matrix focal_loss_logit_grad(const Matrix& probs, const std::vector<int>& targets, double gamma);

struct HfaLossConfig {
  double lambda_div = 0.01;
  double lambda_proto_reg = 0.01;
  double lambda_mean_var = 0.01;
  double focal_gamma = 2.0;
  double lambda_hfa = 0.1;
  double radius_max = 4.0;
  bool use_div = true;
  bool use_proto_reg = true;
  bool use_mean_var = true;
};

struct HfaLossReport {
  double orig_cls = 0.0;
  double aug_cls = 0.0;
  double div = 0.0;
  double proto_reg = 0.0;
  double mean_var = 0.0;
  double total = 0.0;  // orig + aug + weighted regularizers (lambda_hfa not applied)
};

struct HfaGradient {
  Matrix d_coords;   // d x N on the original map
  Matrix d_offsets;  // d x C
  Matrix d_normals;  // d x C
};

/// Composite augmentation loss. Classification terms are focal losses of the
/// MLR head on the original and augmented maps; L_div is the negated mean
/// pairwise distance of each class's synthetic samples; L_proto_reg anchors
/// each class mean to the gyromidpoint of its real embeddings; L_mean_var
/// penalises mean radii beyond radius_max and variances beyond the cap.
/// When `grad` is non-null it receives the gradient with respect to the
/// original coords and classifier (pool and distributions are constants).
HfaLossReport hfa_loss(const EmbeddingMap& original, const Reintegration& augmented,
                       const std::vector<ClassDistribution>& distributions,
                       const AugmentationPool& pool, const MlrClassifier& classifier,
                       const HfaLossConfig& cfg, HfaGradient* grad = nullptr);

}  // namespace hyperada::augmentation
