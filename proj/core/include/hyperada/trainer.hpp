#pragma once

// Desk-scale segmentation pipeline: a tiny per-cell encoder into the Poincare
// ball, the hyperbolic MLR head, the composite image and point-cloud losses,
// the active domain adaptation round loop and evaluation.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hyperada/acquisition.hpp"
#include "hyperada/augmentation.hpp"
#include "hyperada/containers.hpp"
#include "hyperada/data_io.hpp"
#include "hyperada/distributions.hpp"
#include "hyperada/mixing.hpp"
#include "hyperada/ode.hpp"

namespace hyperada::trainer {

using geometry::Curvature;
using geometry::Matrix;
using geometry::Vector;

inline constexpr int kRgbFeatures = 28;   // 3x3 patch x 3 channels + row position
inline constexpr int kLidarFeatures = 5;  // x, y, z, intensity, local density

int feature_size(Modality m);

/// Per-pixel features, F x (H*W): centred 3x3 neighbourhood colours (edges
/// clamped) and the normalised row.
Matrix rgb_features(const LabeledImage& image);

/// Per-point features, F x N: scaled xyz, intensity and log point count of
/// the point's voxel.
Matrix lidar_features(const LabeledCloud& cloud, double voxel_size = 0.25);

/// Two-layer tanh map to a tangent vector at the origin, then exp_map0.
struct TinyEncoder {
  Matrix w1;  // hidden x F
  Vector b1;
  Matrix w2;  // d x hidden
  Vector b2;

  static TinyEncoder zeros(int features, int hidden, int dim);
  static TinyEncoder random(int features, int hidden, int dim, Rng& rng);
  Eigen::Index dim() const noexcept { return w2.rows(); }
};

struct Model {
  TinyEncoder encoder;
  augmentation::MlrClassifier classifier;

  static Model create(Modality m, int hidden, int dim, int classes, const Curvature& k, Rng& rng);
  /// Same shapes, every parameter zero. Used as a gradient / momentum buffer.
  Model zeros_like() const;

  /// Parameter layout: w1, b1, w2, b2, offsets, normals (column-major blocks).
  Vector flatten() const;
  void unflatten(const Vector& flat);
  Eigen::Index parameter_count() const;
};

struct ForwardCache {
  Matrix features;
  Matrix hidden;
  Matrix tangent;
  Matrix points;  // d x N, inside the ball
  Matrix logits;  // C x N
  Matrix probs;
};

ForwardCache forward(const Model& model, const Matrix& features);

/// Accumulates into `grad` the parameter gradient for upstream gradients on
/// the embeddings and on the logits of a forward pass.
void backward(const Model& model, const ForwardCache& cache, const Matrix& d_points,
              const Matrix& d_logits, Model& grad);

std::vector<int> predict(const Model& model, const Matrix& features);

struct TrainingConfig {
  Modality modality = Modality::kRgb;
  std::uint64_t seed = 0;
  int embedding_dim = 8;
  int hidden = 16;
  int num_classes = 5;
  double kappa = -1.0;

  int pretrain_steps = 500;
  int steps_per_round = 60;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double grad_clip = 5.0;

  double lambda_hfa = 0.1;
  bool use_hfa = true;
  bool use_mixup = true;  // lidar_default() turns it off
  bool use_focal = true;
  bool use_mixing = true;
  double focal_gamma = 2.0;
  augmentation::HfaLossConfig hfa;
  augmentation::InterpolationSchedule schedule;
  augmentation::MixupConfig mixup;
  int refresh_every = 20;
  distributions::OdeSolverConfig solver;

  double tau_percentile = mixing::kDefaultTauPercentile;
  mixing::DacsDirection dacs_direction = mixing::DacsDirection::kTargetOntoSource;
  int polarmix_rotations = 3;
  bool polarmix_gate = false;  // paste only HALO-confident target pseudo-labels

  bool lidar_alternate = true;
  double target_only_phase_start = 0.8;
  double voxel_size = 0.25;

  static TrainingConfig rgb_default();
  static TrainingConfig lidar_default();
  double gamma() const noexcept { return use_focal ? focal_gamma : 0.0; }
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainingConfig& cfg);
/// Overrides fields of `base` from a JSON object using the to_json key
/// names. Unknown keys are rejected.
TrainingConfig training_config_from_json(const nlohmann::json& j, TrainingConfig base);

struct LossReport {
  int step = 0;
  double l_src = 0.0;
  double l_tgt = 0.0;
  double l_hfa = 0.0;  // unweighted; enters the total times lambda_hfa
  augmentation::HfaLossReport hfa_parts;
  double l_mix = 0.0;  // DACS for images, PolarMix for clouds
  double lambda_hfa = 0.0;
  double total = 0.0;
  bool hfa_applied = false;
  bool mix_applied = false;

  /// l_src + l_tgt + lambda_hfa * l_hfa + l_mix.
  double recomputed_total() const noexcept { return l_src + l_tgt + lambda_hfa * l_hfa + l_mix; }
};

void to_json(nlohmann::json& j, const LossReport& r);

/// The cells of one step. Labels use kUnlabeled for cells without a target.
struct CellBatch {
  Matrix features;
  std::vector<int> labels;
};

/// Everything random or label-dependent about one step, fixed up front so the
/// loss is a deterministic function of the model parameters.
struct StepPlan {
  CellBatch source;  // may be empty
  CellBatch target;  // labels: acquired cells only
  std::optional<CellBatch> mix;
  bool source_term = true;
  bool apply_hfa = false;
  std::vector<distributions::ClassDistribution> distributions;
  augmentation::AugmentationPool pool;
  std::uint64_t augmentation_seed = 0;
  double t_frac = 0.0;
};

/// Loss of the model on a plan; fills `grad` (same shapes as the model,
/// overwritten) when non-null.
LossReport evaluate_step(const Model& model, const StepPlan& plan, const TrainingConfig& cfg,
                         Model* grad = nullptr);

struct TrainState {
  Model model;
  Model velocity;
  distributions::FlowNetwork flow;
  std::vector<distributions::ClassDistribution> distributions;
  int step = 0;  // optimizer steps taken
  int distributions_step = -1;
};

TrainState make_state(const TrainingConfig& cfg);

/// Momentum SGD with global-norm clipping; offsets are projected back into
/// the ball afterwards.
void apply_gradient(TrainState& state, const Model& grad, const TrainingConfig& cfg);

/// Re-estimates class distributions from labeled embeddings.
void refresh_distributions(TrainState& state, const Matrix& points, const std::vector<int>& labels,
                           const TrainingConfig& cfg);

/// One outer step of the flow network on labeled embeddings split
/// alternately into train and validation halves.
void meta_update_flow(TrainState& state, const Matrix& points, const std::vector<int>& labels,
                      const TrainingConfig& cfg, Rng& rng);

/// L_src + L_tgt + lambda_hfa L_hfa + L_dacs. `target` carries acquired
/// labels only; `t_frac` is training progress in [0, 1].
LossReport train_step_rgb(TrainState& state, const LabeledImage& source, const LabeledImage& target,
                          const TrainingConfig& cfg, double t_frac);

/// Before the target-only phase: L_src + L_tgt plus HFA on even and PolarMix
/// on odd step indices. Afterwards L_tgt alone.
LossReport train_step_lidar(TrainState& state, const LabeledCloud& source, const LabeledCloud& target,
                            const TrainingConfig& cfg, int step_index, int total_steps);

/// Source-only steps with L_src.
LossReport pretrain_step(TrainState& state, const CellBatch& source, const TrainingConfig& cfg);

struct MiouResult {
  std::vector<double> iou;              // per class; 0 for excluded classes
  std::vector<std::uint8_t> evaluated;  // class counted in the mean
  double mean = 0.0;                    // in [0, 1]
  std::vector<std::vector<std::uint64_t>> confusion;  // [truth][prediction]
};

/// IoU_c = TP / (TP + FP + FN) over cells with a ground-truth label. Classes
/// absent from both prediction and truth, or outside `subset` when given,
/// are excluded from the mean.
MiouResult evaluate_miou(const std::vector<int>& predictions, const std::vector<int>& truth,
                         int num_classes, const std::vector<std::uint8_t>& subset = {});

/// Confusion matrices accumulate across scenes.
MiouResult miou_from_confusion(const std::vector<std::vector<std::uint64_t>>& confusion,
                               const std::vector<std::uint8_t>& subset = {});

void to_json(nlohmann::json& j, const MiouResult& r);

template <typename T>
struct Datasets {
  std::vector<T> source;
  std::vector<T> target_train;  // ground truth acts as the annotation oracle
  std::vector<T> target_eval;
};

using RgbDatasets = Datasets<LabeledImage>;
using LidarDatasets = Datasets<LabeledCloud>;

struct DatasetSizes {
  int source = 8;
  int target_train = 10;
  int target_eval = 16;

  static DatasetSizes rgb_default() { return {}; }
  static DatasetSizes lidar_default() { return {8, 6, 8}; }
};

/// Scenes [0, S) give the source set (source rendering), the next T scenes
/// the target training set and the following E the target evaluation set
/// (target rendering). `world.scene_count` is ignored.
RgbDatasets build_rgb_datasets(io::SyntheticWorldConfig world, const DatasetSizes& sizes);
LidarDatasets build_lidar_datasets(io::SyntheticWorldConfig world, const DatasetSizes& sizes);

struct LoopResult {
  TrainState state;
  std::vector<acquisition::RoundLog> logs;
  std::vector<LossReport> losses;
  std::vector<double> round_miou;  // after each round, in [0, 1]
  double initial_miou = 0.0;       // after pretraining
  MiouResult final_miou;
  std::size_t revealed = 0;        // cells (pixels or points) revealed
  std::size_t revealed_units = 0;  // pixels or voxels
};

TrainState pretrain_rgb(const TrainingConfig& cfg, const RgbDatasets& data);
TrainState pretrain_lidar(const TrainingConfig& cfg, const LidarDatasets& data);

MiouResult evaluate_rgb(const Model& model, const std::vector<LabeledImage>& images, int num_classes);
MiouResult evaluate_lidar(const Model& model, const std::vector<LabeledCloud>& clouds, int num_classes,
                          double voxel_size);

/// Pretrains (unless `pretrained` is given), then for each round scores the
/// target training set, selects under the policy, reveals the oracle labels
/// and trains.
LoopResult active_da_loop_rgb(const TrainingConfig& cfg, const RgbDatasets& data,
                              const acquisition::BudgetPolicy& policy, acquisition::Strategy strategy,
                              const TrainState* pretrained = nullptr);
LoopResult active_da_loop_lidar(const TrainingConfig& cfg, const LidarDatasets& data,
                                const acquisition::BudgetPolicy& policy, acquisition::Strategy strategy,
                                const TrainState* pretrained = nullptr);

/// Lower-case hex SHA-256 of `text`.
std::string sha256_hex(std::string_view text);

/// Versioned binary checkpoint:
///   "HYCK", u32 version, 32-byte config hash, f64 kappa, u32 block count,
///   then per block u32 rows, u32 cols and rows*cols f64 (column-major).
void write_checkpoint(const std::filesystem::path& path, const Model& model,
                      const std::string& config_hash_hex);

struct Checkpoint {
  Model model;
  std::string config_hash_hex;
};

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace hyperada::trainer
