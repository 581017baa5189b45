#pragma once

// Acquisition scores and labeling-budget mechanics: radius x entropy per
// cell, voxel confusion degree, their per-scan hybrid, and budgeted top-k
// selection for both modalities.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hyperada/containers.hpp"
#include "hyperada/geometry.hpp"
#include "hyperada/random.hpp"
#include "hyperada/types.hpp"

namespace hyperada::acquisition {

using geometry::BallPoint;
using geometry::Curvature;
using geometry::Matrix;
using geometry::Vector;

enum class Strategy { kHalo, kVcd, kHaloVcd, kRandom };
std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& name);
/// Throws InvalidArgument for combinations that do not exist (voxel
/// strategies on images).
void check_strategy(Strategy s, Modality m);

struct ScoreMap {
  std::vector<double> scores;
  std::vector<std::uint8_t> labeled;

  ScoreMap() = default;
  explicit ScoreMap(std::vector<double> s)
      : scores(std::move(s)), labeled(scores.size(), 0) {}
  std::size_t size() const noexcept { return scores.size(); }
  std::size_t labeled_count() const noexcept;
};

struct VoxelGrid {
  double voxel_size = 0.25;
  std::vector<std::vector<int>> voxels;  // point indices per voxel, voxels in key order
  std::vector<int> point_voxel;          // voxel index per point
  std::vector<std::uint8_t> labeled;     // per voxel

  /// Buckets points by floor(coord / voxel_size). Voxels are ordered by
  /// their integer (x, y, z) key.
  static VoxelGrid build(std::span<const CloudPoint> points, double voxel_size = 0.25);
  std::size_t size() const noexcept { return voxels.size(); }
};

struct BudgetPolicy {
  Modality modality = Modality::kRgb;
  double fraction = 0.05;   // images: share of pixels labeled after all rounds
  int rounds = 5;
  int voxels_per_round = 1; // clouds: voxels per scan per round

  static BudgetPolicy rgb_default() { return BudgetPolicy{}; }
  static BudgetPolicy lidar_default() {
    BudgetPolicy p;
    p.modality = Modality::kLidar;
    return p;
  }
  void validate() const;

  /// Cells a map of `total_cells` cells must have selected after `round`
  /// (0-based): min(total, (round + 1) * ceil(fraction / rounds * N)), with
  /// the last round topping up to ceil(fraction * N).
  std::size_t cumulative_quota(std::size_t total_cells, int round) const;
};

/// -sum p log p with 0 log 0 = 0. Throws unless p sums to one within 1e-6.
double entropy(const Vector& probs);

/// Hyperbolic radius of the embedding times the prediction entropy.
double halo_score(const BallPoint& embedding, const Vector& probs);

/// Batched halo_score over columns of embeddings (d x N) and probs (C x N).
std::vector<double> halo_scores(const Matrix& embeddings, const Matrix& probs,
                                const Curvature& k);

/// Per-voxel entropy of the predicted-class histogram.
std::vector<double> vcd(const VoxelGrid& grid, std::span<const int> predicted_labels);

/// Per-voxel mean halo score of member points.
std::vector<double> voxel_mean(const VoxelGrid& grid, std::span<const double> point_scores);

/// Min-max normalizes to [0, 1] over the scan; constant inputs map to 0.
std::vector<double> min_max_normalize(std::span<const double> values);

/// normalize(vcd) + normalize(mean halo score), per voxel.
std::vector<double> halo_vcd_score(const VoxelGrid& grid, const Matrix& embeddings,
                                   const Matrix& probs, const Curvature& k);

/// Per-voxel scores for any strategy; kRandom draws uniform scores from rng.
std::vector<double> voxel_scores(Strategy strategy, const VoxelGrid& grid,
                                 const Matrix& embeddings, const Matrix& probs,
                                 const Curvature& k, Rng& rng);

/// Top-scoring unlabeled cells for this round's share of the pixel budget.
/// Ties go to the lowest index. Selected cells are flagged labeled.
std::vector<int> select_cells(ScoreMap& map, const BudgetPolicy& policy, int round);

/// Top voxels_per_round unlabeled voxels of one scan, flagged labeled.
std::vector<int> select_voxels(VoxelGrid& grid, std::span<const double> voxel_scores,
                               const BudgetPolicy& policy, int round);

struct RoundLog {
  int round = 0;
  std::string item;  // "image" or "scan" index the selection applies to
  int item_index = 0;
  std::vector<int> ids;
  std::vector<double> scores;
};

void to_json(nlohmann::json& j, const RoundLog& log);

}  // namespace hyperada::acquisition
