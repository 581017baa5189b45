#include "hyperada/acquisition.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "hyperada/errors.hpp"

namespace hyperada::acquisition {

namespace gk = geometry::kernel;

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kHalo: return "halo";
    case Strategy::kVcd: return "vcd";
    case Strategy::kHaloVcd: return "halo_vcd";
    case Strategy::kRandom: return "random";
  }
  return "unknown";
}

Strategy strategy_from_string(const std::string& name) {
  if (name == "halo") return Strategy::kHalo;
  if (name == "vcd") return Strategy::kVcd;
  if (name == "halo_vcd" || name == "halo-vcd") return Strategy::kHaloVcd;
  if (name == "random") return Strategy::kRandom;
  throw InvalidArgument("unknown acquisition strategy '" + name + "'");
}

void check_strategy(Strategy s, Modality m) {
  if (m == Modality::kRgb && (s == Strategy::kVcd || s == Strategy::kHaloVcd)) {
    throw InvalidArgument("strategy '" + to_string(s) + "' needs voxels and is not valid for rgb");
  }
}

std::size_t ScoreMap::labeled_count() const noexcept {
  return static_cast<std::size_t>(std::count(labeled.begin(), labeled.end(), std::uint8_t{1}));
}

VoxelGrid VoxelGrid::build(std::span<const CloudPoint> points, double voxel_size) {
  if (!(voxel_size > 0.0)) throw InvalidArgument("voxel size must be positive");
  std::map<std::array<std::int64_t, 3>, std::vector<int>> buckets;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const CloudPoint& p = points[i];
    const std::array<std::int64_t, 3> key{
        static_cast<std::int64_t>(std::floor(p.x / voxel_size)),
        static_cast<std::int64_t>(std::floor(p.y / voxel_size)),
        static_cast<std::int64_t>(std::floor(p.z / voxel_size))};
    buckets[key].push_back(static_cast<int>(i));
  }
  VoxelGrid grid;
  grid.voxel_size = voxel_size;
  grid.point_voxel.assign(points.size(), -1);
  for (auto& [key, members] : buckets) {
    for (int p : members) grid.point_voxel[static_cast<std::size_t>(p)] = static_cast<int>(grid.voxels.size());
    grid.voxels.push_back(std::move(members));
  }
  grid.labeled.assign(grid.voxels.size(), 0);
  return grid;
}

void BudgetPolicy::validate() const {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("budget fraction must be in (0, 1]");
  if (rounds < 1) throw InvalidArgument("budget round count must be >= 1");
  if (voxels_per_round < 1) throw InvalidArgument("voxels per round must be >= 1");
}

std::size_t BudgetPolicy::cumulative_quota(std::size_t total_cells, int round) const {
  const double n = static_cast<double>(total_cells);
  // The small slack keeps e.g. 0.05 * 1000 from rounding up to 51.
  auto ceil_of = [](double v) { return static_cast<std::size_t>(std::ceil(v - 1e-9)); };
  const std::size_t total = std::min(total_cells, ceil_of(fraction * n));
  if (round >= rounds - 1) return total;
  const std::size_t per_round = ceil_of(fraction / rounds * n);
  return std::min(total, per_round * static_cast<std::size_t>(round + 1));
}

double entropy(const Vector& probs) {
  const double sum = probs.sum();
  if (std::abs(sum - 1.0) > 1e-6 || (probs.array() < -1e-12).any()) {
    throw InvalidArgument("entropy: probabilities are not normalized (sum " +
                          std::to_string(sum) + ")");
  }
  double h = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) h -= probs[i] * std::log(probs[i]);
  }
  return std::max(h, 0.0);
}

double halo_score(const BallPoint& embedding, const Vector& probs) {
  return geometry::hyperbolic_radius(embedding) * entropy(probs);
}

std::vector<double> halo_scores(const Matrix& embeddings, const Matrix& probs,
                                const Curvature& k) {
  if (embeddings.cols() != probs.cols()) throw InvalidArgument("halo_scores: column mismatch");
  std::vector<double> out(static_cast<std::size_t>(embeddings.cols()));
  for (Eigen::Index n = 0; n < embeddings.cols(); ++n) {
    out[static_cast<std::size_t>(n)] =
        gk::hyperbolic_radius(embeddings.col(n), k) * entropy(probs.col(n));
  }
  return out;
}

std::vector<double> vcd(const VoxelGrid& grid, std::span<const int> predicted_labels) {
  if (predicted_labels.size() != grid.point_voxel.size()) {
    throw InvalidArgument("vcd: predicted label count does not match the grid");
  }
  std::vector<double> out(grid.size(), 0.0);
  std::map<int, int> hist;
  for (std::size_t v = 0; v < grid.size(); ++v) {
    hist.clear();
    for (int p : grid.voxels[v]) ++hist[predicted_labels[static_cast<std::size_t>(p)]];
    const double n = static_cast<double>(grid.voxels[v].size());
    double h = 0.0;
    for (const auto& [cls, count] : hist) {
      const double q = count / n;
      h -= q * std::log(q);
    }
    out[v] = std::max(h, 0.0);
  }
  return out;
}

std::vector<double> voxel_mean(const VoxelGrid& grid, std::span<const double> point_scores) {
  std::vector<double> out(grid.size(), 0.0);
  for (std::size_t v = 0; v < grid.size(); ++v) {
    double s = 0.0;
    for (int p : grid.voxels[v]) s += point_scores[static_cast<std::size_t>(p)];
    out[v] = s / static_cast<double>(grid.voxels[v].size());
  }
  return out;
}

std::vector<double> min_max_normalize(std::span<const double> values) {
  std::vector<double> out(values.size(), 0.0);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / range;
  return out;
}

namespace {

std::vector<int> argmax_labels(const Matrix& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.cols()));
  for (Eigen::Index n = 0; n < probs.cols(); ++n) {
    Eigen::Index best;
    probs.col(n).maxCoeff(&best);
    out[static_cast<std::size_t>(n)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace

std::vector<double> halo_vcd_score(const VoxelGrid& grid, const Matrix& embeddings,
                                   const Matrix& probs, const Curvature& k) {
  const std::vector<double> confusion = min_max_normalize(vcd(grid, argmax_labels(probs)));
  const std::vector<double> halo =
      min_max_normalize(voxel_mean(grid, halo_scores(embeddings, probs, k)));
  std::vector<double> out(grid.size());
  for (std::size_t v = 0; v < out.size(); ++v) out[v] = confusion[v] + halo[v];
  return out;
}

std::vector<double> voxel_scores(Strategy strategy, const VoxelGrid& grid,
                                 const Matrix& embeddings, const Matrix& probs,
                                 const Curvature& k, Rng& rng) {
  switch (strategy) {
    case Strategy::kHalo: return voxel_mean(grid, halo_scores(embeddings, probs, k));
    case Strategy::kVcd: return vcd(grid, argmax_labels(probs));
    case Strategy::kHaloVcd: return halo_vcd_score(grid, embeddings, probs, k);
    case Strategy::kRandom: {
      std::vector<double> out(grid.size());
      for (double& v : out) v = rng.uniform();
      return out;
    }
  }
  return {};
}

namespace {

std::vector<int> top_unlabeled(std::span<const double> scores, std::vector<std::uint8_t>& labeled,
                               std::size_t count) {
  std::vector<int> candidates;
  candidates.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labeled[i]) candidates.push_back(static_cast<int>(i));
  }
  count = std::min(count, candidates.size());
  auto better = [&](int a, int b) {
    const double sa = scores[static_cast<std::size_t>(a)];
    const double sb = scores[static_cast<std::size_t>(b)];
    return sa != sb ? sa > sb : a < b;
  };
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(count),
                    candidates.end(), better);
  candidates.resize(count);
  for (int c : candidates) labeled[static_cast<std::size_t>(c)] = 1;
  return candidates;
}

}  // namespace

std::vector<int> select_cells(ScoreMap& map, const BudgetPolicy& policy, int round) {
  policy.validate();
  if (policy.modality != Modality::kRgb) throw InvalidArgument("select_cells needs an rgb policy");
  if (round < 0 || round >= policy.rounds) {
    throw BudgetError("budget exhausted: round " + std::to_string(round) + " of " +
                      std::to_string(policy.rounds));
  }
  if (map.labeled.size() != map.scores.size()) throw InvalidArgument("score map flag size mismatch");
  for (double s : map.scores) {
    if (!std::isfinite(s)) throw InvalidArgument("score map contains a non-finite score");
  }
  if (map.labeled_count() == map.size()) throw BudgetError("every cell is already labeled");
  const std::size_t before = round == 0 ? 0 : policy.cumulative_quota(map.size(), round - 1);
  const std::size_t after = policy.cumulative_quota(map.size(), round);
  return top_unlabeled(map.scores, map.labeled, after - before);
}

std::vector<int> select_voxels(VoxelGrid& grid, std::span<const double> voxel_scores,
                               const BudgetPolicy& policy, int round) {
  policy.validate();
  if (policy.modality != Modality::kLidar) throw InvalidArgument("select_voxels needs a lidar policy");
  if (round < 0 || round >= policy.rounds) {
    throw BudgetError("budget exhausted: round " + std::to_string(round) + " of " +
                      std::to_string(policy.rounds));
  }
  if (voxel_scores.size() != grid.size()) throw InvalidArgument("voxel score count mismatch");
  if (std::all_of(grid.labeled.begin(), grid.labeled.end(), [](std::uint8_t f) { return f != 0; })) {
    throw BudgetError("every voxel is already labeled");
  }
  return top_unlabeled(voxel_scores, grid.labeled, static_cast<std::size_t>(policy.voxels_per_round));
}

void to_json(nlohmann::json& j, const RoundLog& log) {
  j = nlohmann::json{{"round", log.round},
                     {"item", log.item},
                     {"item_index", log.item_index},
                     {"ids", log.ids},
                     {"scores", log.scores}};
}

}  // namespace hyperada::acquisition
