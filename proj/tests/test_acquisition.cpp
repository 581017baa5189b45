#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "hyperada/acquisition.hpp"
#include "hyperada/errors.hpp"

namespace hyperada::acquisition {
namespace {

Vector probs(std::initializer_list<double> p) {
  Vector v(static_cast<Eigen::Index>(p.size()));
  int i = 0;
  for (double x : p) v[i++] = x;
  return v;
}

TEST(Entropy, ClosedForms) {
  EXPECT_EQ(entropy(probs({0, 1, 0, 0})), 0.0);
  EXPECT_NEAR(entropy(probs({0.25, 0.25, 0.25, 0.25})), std::log(4.0), 1e-15);
  EXPECT_NEAR(entropy(probs({0.5, 0.5, 0, 0})), std::log(2.0), 1e-15);
  EXPECT_NEAR(entropy(probs({0.5, 0.5, 0, 0})), 0.6931, 1e-4);
  EXPECT_THROW(entropy(probs({0.5, 0.6})), InvalidArgument);
}

TEST(Entropy, BoundedByLogC) {
  Rng rng(1);
  for (int t = 0; t < 500; ++t) {
    Vector p(6);
    for (auto& x : p) x = rng.uniform();
    p /= p.sum();
    const double h = entropy(p);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(6.0) + 1e-12);
  }
}

TEST(HaloScore, ZeroCasesAndClosedForm) {
  const Curvature k;
  const Vector uniform = probs({0.25, 0.25, 0.25, 0.25});
  EXPECT_EQ(halo_score(BallPoint::origin(3, k), uniform), 0.0);
  const BallPoint x((Vector(2) << 0.3, 0.4).finished(), k);  // norm 0.5
  EXPECT_EQ(halo_score(x, probs({1, 0, 0, 0})), 0.0);
  const double expected = 2.0 * std::atanh(0.5) * std::log(4.0);
  EXPECT_NEAR(halo_score(x, uniform), expected, 1e-9 * expected);
  EXPECT_NEAR(halo_score(x, uniform), 1.523, 5e-4);
}

TEST(HaloScore, NonNegativeAndZeroOnlyAtZeroFactor) {
  Rng rng(2);
  const Curvature k;
  Matrix emb(3, 200), p(4, 200);
  for (int n = 0; n < 200; ++n) {
    Vector v(3);
    for (auto& x : v) x = rng.normal();
    emb.col(n) = v.normalized() * rng.uniform(0.01, 0.95);
    Vector q(4);
    for (auto& x : q) x = rng.uniform(0.01, 1.0);
    p.col(n) = q / q.sum();
  }
  const auto s = halo_scores(emb, p, k);
  for (int n = 0; n < 200; ++n) {
    EXPECT_GT(s[n], 0.0);
    EXPECT_NEAR(s[n], halo_score(BallPoint(emb.col(n), k), p.col(n)), 1e-15 * std::max(1.0, s[n]));
  }
}

// Points placed at voxel centres of a 0.25 m grid along x.
std::vector<CloudPoint> points_in_voxels(const std::vector<int>& voxel_of_point) {
  std::vector<CloudPoint> pts;
  for (int v : voxel_of_point) pts.push_back({0.125 + 0.25 * v, 0.1, 0.1, 0.0});
  return pts;
}

TEST(Vcd, HistogramEntropy) {
  const auto pts = points_in_voxels({0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2});
  const VoxelGrid grid = VoxelGrid::build(pts);
  ASSERT_EQ(grid.size(), 3u);
  const std::vector<int> labels{3, 3, 3, 3, 1, 1, 2, 2, 1, 1, 1, 2};
  const auto s = vcd(grid, labels);
  EXPECT_EQ(s[0], 0.0);
  EXPECT_NEAR(s[1], std::log(2.0), 1e-15);
  const double expected = -(0.75 * std::log(0.75) + 0.25 * std::log(0.25));
  EXPECT_NEAR(s[2], expected, 1e-9 * expected);
  EXPECT_NEAR(s[2], 0.5623, 1e-4);
}

TEST(VoxelGridTest, EveryPointInExactlyOneVoxelOrderedByKey) {
  Rng rng(3);
  std::vector<CloudPoint> pts;
  for (int i = 0; i < 500; ++i) pts.push_back({rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-1, 1), 0.0});
  const VoxelGrid grid = VoxelGrid::build(pts);
  std::vector<int> seen(pts.size(), 0);
  for (std::size_t v = 0; v < grid.size(); ++v) {
    ASSERT_FALSE(grid.voxels[v].empty());
    for (int p : grid.voxels[v]) {
      ++seen[p];
      EXPECT_EQ(grid.point_voxel[p], static_cast<int>(v));
    }
  }
  for (int c : seen) EXPECT_EQ(c, 1);
  EXPECT_THROW(VoxelGrid::build(pts, 0.0), InvalidArgument);
}

TEST(HaloVcd, VanishesOnQuietVoxels) {
  const auto pts = points_in_voxels({0, 0, 1, 1});
  const VoxelGrid grid = VoxelGrid::build(pts);
  const Matrix emb = Matrix::Zero(2, 4);
  Matrix p = Matrix::Zero(3, 4);
  p.row(1).setOnes();
  for (double s : halo_vcd_score(grid, emb, p, Curvature{})) EXPECT_EQ(s, 0.0);
}

TEST(HaloVcd, MinMaxNormalizationOnThreeVoxelScan) {
  const Curvature k;
  const auto pts = points_in_voxels({0, 0, 1, 1, 1, 2, 2});
  const VoxelGrid grid = VoxelGrid::build(pts);
  Rng rng(4);
  Matrix emb(2, 7), p(3, 7);
  for (int n = 0; n < 7; ++n) {
    emb.col(n) = (Vector(2) << rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)).finished();
    Vector q(3);
    for (auto& x : q) x = rng.uniform(0.05, 1.0);
    p.col(n) = q / q.sum();
  }
  // Brute force: argmax histograms, per-voxel mean halo score, min-max of each.
  std::vector<double> conf(3), halo(3);
  for (int v = 0; v < 3; ++v) {
    std::map<int, int> hist;
    double hs = 0.0;
    for (int n : grid.voxels[v]) {
      Eigen::Index arg;
      p.col(n).maxCoeff(&arg);
      ++hist[static_cast<int>(arg)];
      hs += 2.0 * std::atanh(emb.col(n).norm()) * entropy(p.col(n));
    }
    const double total = static_cast<double>(grid.voxels[v].size());
    for (const auto& [c, count] : hist) conf[v] -= count / total * std::log(count / total);
    halo[v] = hs / total;
  }
  auto norm = [](std::vector<double> x) {
    const double lo = *std::min_element(x.begin(), x.end());
    const double hi = *std::max_element(x.begin(), x.end());
    for (double& v : x) v = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    return x;
  };
  const auto nc = norm(conf), nh = norm(halo);
  const auto got = halo_vcd_score(grid, emb, p, k);
  for (int v = 0; v < 3; ++v) EXPECT_NEAR(got[v], nc[v] + nh[v], 1e-12);
  EXPECT_EQ(*std::max_element(nh.begin(), nh.end()), 1.0);
  EXPECT_EQ(*std::min_element(nh.begin(), nh.end()), 0.0);
}

TEST(HaloVcd, LargerRadiusScoresHigher) {
  const auto pts = points_in_voxels({0, 0, 1, 1, 2, 2});
  const VoxelGrid grid = VoxelGrid::build(pts);
  Matrix emb(2, 6);
  emb << 0.2, 0.2, 0.6, 0.6, 0.4, 0.4,
         0.0, 0.0, 0.0, 0.0, 0.0, 0.0;
  Matrix p(2, 6);
  p.row(0).setConstant(0.7);
  p.row(1).setConstant(0.3);
  const auto s = halo_vcd_score(grid, emb, p, Curvature{});
  EXPECT_GT(s[1], s[2]);
  EXPECT_GT(s[2], s[0]);
}

TEST(MinMax, ConstantMapsToZero) {
  const std::vector<double> c{2.0, 2.0, 2.0};
  for (double v : min_max_normalize(c)) EXPECT_EQ(v, 0.0);
}

TEST(Budget, TenPerRoundOnAThousandPixels) {
  ScoreMap map(std::vector<double>(1000, 0.0));
  Rng rng(5);
  for (auto& s : map.scores) s = rng.uniform();
  const BudgetPolicy policy = BudgetPolicy::rgb_default();
  for (int r = 0; r < 5; ++r) EXPECT_EQ(select_cells(map, policy, r).size(), 10u);
  EXPECT_EQ(map.labeled_count(), 50u);
}

TEST(Budget, CumulativeEqualsCeilingExactlyWithoutReselection) {
  for (std::size_t n : {97u, 1000u, 12345u}) {
    ScoreMap map(std::vector<double>(n, 0.0));
    Rng rng(n);
    for (auto& s : map.scores) s = rng.uniform();
    const BudgetPolicy policy = BudgetPolicy::rgb_default();
    std::set<int> all;
    std::size_t total = 0;
    for (int r = 0; r < policy.rounds; ++r) {
      const auto ids = select_cells(map, policy, r);
      total += ids.size();
      all.insert(ids.begin(), ids.end());
      // New scores each round must not resurrect labeled cells.
      for (auto& s : map.scores) s = rng.uniform();
    }
    const auto expected = static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(n)));
    EXPECT_EQ(total, expected) << "N=" << n;
    EXPECT_EQ(all.size(), expected) << "N=" << n;
    EXPECT_EQ(map.labeled_count(), expected);
  }
}

TEST(Budget, ExhaustionAndAllLabeledAreErrors) {
  ScoreMap map(std::vector<double>(40, 1.0));
  const BudgetPolicy policy = BudgetPolicy::rgb_default();
  EXPECT_THROW(select_cells(map, policy, 5), BudgetError);
  std::fill(map.labeled.begin(), map.labeled.end(), 1);
  EXPECT_THROW(select_cells(map, policy, 0), BudgetError);
  EXPECT_THROW(select_cells(map, BudgetPolicy::lidar_default(), 0), InvalidArgument);
  BudgetPolicy bad;
  bad.fraction = 0.0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = BudgetPolicy{};
  bad.rounds = 0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(Select, TiesGoToLowestIndex) {
  ScoreMap map(std::vector<double>(200, 0.5));
  const auto ids = select_cells(map, BudgetPolicy::rgb_default(), 0);
  EXPECT_EQ(ids, (std::vector<int>{0, 1}));
}

TEST(Select, EquivariantToIncreasingTransforms) {
  Rng rng(6);
  std::vector<double> raw(500);
  for (auto& s : raw) s = std::floor(rng.uniform(0, 50));  // many ties
  std::vector<double> mapped = raw;
  for (auto& s : mapped) s = std::exp(0.3 * s) - 7.0;
  ScoreMap a(raw), b(mapped);
  for (int r = 0; r < 5; ++r) {
    EXPECT_EQ(select_cells(a, BudgetPolicy::rgb_default(), r),
              select_cells(b, BudgetPolicy::rgb_default(), r));
  }
}

TEST(Select, LidarFiveVoxelsPerScanAfterFiveRounds) {
  Rng rng(7);
  for (int scan = 0; scan < 10; ++scan) {
    std::vector<CloudPoint> pts;
    for (int i = 0; i < 300; ++i) pts.push_back({rng.uniform(-2, 2), rng.uniform(-2, 2), 0.0, 0.0});
    VoxelGrid grid = VoxelGrid::build(pts);
    const BudgetPolicy policy = BudgetPolicy::lidar_default();
    std::set<int> chosen;
    for (int r = 0; r < policy.rounds; ++r) {
      std::vector<double> scores(grid.size());
      for (auto& s : scores) s = rng.uniform();
      const auto ids = select_voxels(grid, scores, policy, r);
      ASSERT_EQ(ids.size(), 1u);
      EXPECT_TRUE(chosen.insert(ids[0]).second) << "voxel reselected";
    }
    EXPECT_EQ(chosen.size(), 5u);
    std::vector<double> scores(grid.size(), 0.0);
    EXPECT_THROW(select_voxels(grid, scores, policy, 5), BudgetError);
  }
}

TEST(Select, LidarAllLabeledScanIsAnError) {
  VoxelGrid grid = VoxelGrid::build(points_in_voxels({0, 1}));
  const std::vector<double> s{1.0, 2.0};
  select_voxels(grid, s, BudgetPolicy::lidar_default(), 0);
  select_voxels(grid, s, BudgetPolicy::lidar_default(), 1);
  EXPECT_THROW(select_voxels(grid, s, BudgetPolicy::lidar_default(), 2), BudgetError);
}

TEST(Strategies, NamesAndModalityChecks) {
  for (Strategy s : {Strategy::kHalo, Strategy::kVcd, Strategy::kHaloVcd, Strategy::kRandom}) {
    EXPECT_EQ(strategy_from_string(to_string(s)), s);
  }
  EXPECT_THROW(strategy_from_string("coreset"), InvalidArgument);
  EXPECT_THROW(check_strategy(Strategy::kVcd, Modality::kRgb), InvalidArgument);
  EXPECT_THROW(check_strategy(Strategy::kHaloVcd, Modality::kRgb), InvalidArgument);
  EXPECT_NO_THROW(check_strategy(Strategy::kHalo, Modality::kRgb));
  EXPECT_NO_THROW(check_strategy(Strategy::kVcd, Modality::kLidar));
}

TEST(RoundLogTest, SerializesStableKeys) {
  const RoundLog log{2, "scan", 3, {4, 9}, {0.5, 0.25}};
  const nlohmann::json j = log;
  EXPECT_EQ(j.at("round"), 2);
  EXPECT_EQ(j.at("item"), "scan");
  EXPECT_EQ(j.at("item_index"), 3);
  EXPECT_EQ(j.at("ids"), nlohmann::json({4, 9}));
  EXPECT_EQ(j.at("scores"), nlohmann::json({0.5, 0.25}));
}

}  // namespace
}  // namespace hyperada::acquisition
