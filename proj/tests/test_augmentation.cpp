#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>

#include "hyperada/augmentation.hpp"
#include "hyperada/errors.hpp"

namespace hyperada::augmentation {
namespace {

namespace gk = geometry::kernel;

Vector v2(double x, double y) { return (Vector(2) << x, y).finished(); }

ClassDistribution dist_at(int cls, const Vector& mean, double log_var = std::log(0.05)) {
  return ClassDistribution{cls, BallPoint(mean, Curvature{}), Vector::Constant(mean.size(), log_var)};
}

// d x n map with labels cycling through `classes` and every fifth cell unlabeled.
EmbeddingMap random_map(int d, int n, int classes, Rng& rng) {
  EmbeddingMap m;
  m.coords = Matrix(d, n);
  m.labels.resize(n);
  m.width = n;
  for (int i = 0; i < n; ++i) {
    Vector v(d);
    for (auto& x : v) x = rng.normal();
    m.coords.col(i) = v.normalized() * rng.uniform(0.05, 0.6);
    m.labels[i] = i % 5 == 4 ? kUnlabeled : i % classes;
  }
  return m;
}

std::vector<ClassDistribution> dists_for(int d, int classes, Rng& rng) {
  std::vector<ClassDistribution> out;
  for (int c = 0; c < classes; ++c) {
    Vector mu(d);
    for (auto& x : mu) x = 0.3 * rng.normal() / std::sqrt(d);
    out.push_back(dist_at(c, mu));
  }
  return out;
}

MlrClassifier random_classifier(int d, int classes, Rng& rng) {
  MlrClassifier cls{Matrix(d, classes), Matrix(d, classes), Curvature{}};
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < d; ++i) {
      cls.offsets(i, c) = 0.2 * rng.normal() / std::sqrt(d);
      cls.normals(i, c) = rng.normal();
    }
  }
  return cls;
}

TEST(BuildPool, SamplesPerClassByModality) {
  Rng rng(1);
  const auto dists = dists_for(2, 3, rng);
  const auto rgb = build_pool(dists, {0, 1, 2}, Modality::kRgb, rng);
  const auto lidar = build_pool(dists, {0, 1, 2}, Modality::kLidar, rng);
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(rgb.size(c), 5u);
    EXPECT_EQ(lidar.size(c), 2u);
  }
}

TEST(BuildPool, AbsentClassGetsNoEntryAndMissingDistributionThrows) {
  Rng rng(2);
  const auto dists = dists_for(2, 3, rng);
  const auto pool = build_pool(dists, {0, 2}, Modality::kRgb, rng);
  EXPECT_EQ(pool.entries.count(1), 0u);
  EXPECT_EQ(pool.size(1), 0u);
  EXPECT_THROW(build_pool(dists, {0, 7}, Modality::kRgb, rng), InvalidArgument);
}

TEST(BuildPool, DeterministicPerSeed) {
  Rng d(3);
  const auto dists = dists_for(3, 2, d);
  Rng a(5), b(5);
  const auto p1 = build_pool(dists, {0, 1}, Modality::kRgb, a);
  const auto p2 = build_pool(dists, {0, 1}, Modality::kRgb, b);
  for (int c = 0; c < 2; ++c) {
    const auto s1 = p1.sampled(c), s2 = p2.sampled(c);
    ASSERT_EQ(s1.size(), s2.size());
    for (std::size_t i = 0; i < s1.size(); ++i) EXPECT_EQ(s1[i].coords, s2[i].coords);
  }
}

TEST(Schedule, LinearAndMonotone) {
  const InterpolationSchedule s;
  EXPECT_EQ(s.weight(0.0), 0.1);
  EXPECT_EQ(s.weight(1.0), 0.5);
  EXPECT_DOUBLE_EQ(s.weight(0.5), 0.3);
  double prev = s.weight(-1.0);
  for (int i = 0; i <= 100; ++i) {
    const double w = s.weight(i / 100.0);
    EXPECT_GE(w, prev);
    prev = w;
  }
  EXPECT_EQ(s.weight(2.0), 0.5);
}

// One real cell of class 0 at `real` and a single-member pool at `synth`.
struct Pair {
  EmbeddingMap map;
  AugmentationPool pool;
};

Pair single_pair(const Vector& real, const Vector& synth) {
  Pair p;
  p.map.coords = real;
  p.map.labels = {0};
  p.map.width = 1;
  p.pool.entries[0].push_back({BallPoint(synth, Curvature{}), PoolKind::kSampled});
  return p;
}

Vector interpolate_at(const Pair& p, double w) {
  Rng rng(1);
  const auto out = interpolate(p.map, p.pool, InterpolationSchedule{w, w}, 0.0, rng);
  return out.at(0).at(0).point;
}

TEST(Interpolate, WeightEndpoints) {
  const Pair p = single_pair(v2(0.3, -0.2), v2(-0.1, 0.5));
  EXPECT_LE((interpolate_at(p, 0.0) - v2(0.3, -0.2)).norm(), 1e-12);
  EXPECT_LE((interpolate_at(p, 1.0) - v2(-0.1, 0.5)).norm(), 1e-12);
}

TEST(Interpolate, CollinearHalfWeight) {
  const Pair p = single_pair(v2(0.3, 0.0), v2(0.6, 0.0));
  const Vector m = interpolate_at(p, 0.5);
  const double exact = std::tanh(0.5 * (std::atanh(0.3) + std::atanh(0.6)));
  EXPECT_NEAR(m[0], exact, 1e-9 * exact);
  EXPECT_NEAR(m[0], 0.4633, 2e-4);
  EXPECT_EQ(m[1], 0.0);
}

TEST(Interpolate, DistanceFromRealIsMonotoneInWeight) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    Vector a(3), b(3);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal();
    a = a.normalized() * rng.uniform(0.0, 0.9);
    b = b.normalized() * rng.uniform(0.0, 0.9);
    const Pair p = single_pair(a, b);
    double prev = -1.0;
    for (double w : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const double d = gk::distance(a, interpolate_at(p, w), Curvature{});
      EXPECT_GE(d, prev - 1e-12) << "trial " << trial << " w " << w;
      prev = d;
    }
  }
}

TEST(Interpolate, CoversEveryLabeledCellAndStaysInBall) {
  Rng rng(9);
  const EmbeddingMap map = random_map(4, 40, 3, rng);
  const auto pool = build_pool(dists_for(4, 3, rng), {0, 1, 2}, Modality::kRgb, rng);
  const auto out = interpolate(map, pool, InterpolationSchedule{}, 0.7, rng);
  std::size_t n = 0;
  for (const auto& [cls, items] : out) {
    for (const auto& a : items) {
      EXPECT_EQ(map.labels[a.cell], cls);
      EXPECT_LE(a.point.squaredNorm(), 1.0 - geometry::kDefaultBallEpsilon);
      EXPECT_NEAR(a.w_partner, 0.1 + 0.4 * 0.7, 1e-15);
      ++n;
    }
  }
  EXPECT_EQ(n, 32u);  // 40 cells, every fifth unlabeled
}

TEST(Mixup, WeightCollapseAndSymmetry) {
  const std::array<Vector, 2> pts{v2(0.2, 0.0), v2(-0.2, 0.0)};
  const std::array<double, 2> one{1.0, 0.0};
  const std::array<double, 2> half{0.5, 0.5};
  EXPECT_LE((gk::gyromidpoint(pts, one, Curvature{}) - pts[0]).norm(), 1e-12);
  EXPECT_LE(gk::gyromidpoint(pts, half, Curvature{}).norm(), 1e-15);
}

TEST(Mixup, PairsAreAPermutationWithinClassAndPointsMatchWeights) {
  Rng rng(10);
  const EmbeddingMap map = random_map(3, 30, 3, rng);
  const auto out = hyperbolic_mixup(map, MixupConfig{}, rng);
  const auto by_class = cells_by_class(map);
  ASSERT_EQ(out.size(), by_class.size());
  for (const auto& [cls, items] : out) {
    std::vector<int> selves, partners;
    for (const auto& a : items) {
      selves.push_back(a.cell);
      partners.push_back(a.partner_cell);
      EXPECT_EQ(map.labels[a.partner_cell], cls);
      EXPECT_GE(a.w_self, 0.0);
      EXPECT_LE(a.w_self, 1.0);
      EXPECT_DOUBLE_EQ(a.w_self + a.w_partner, 1.0);
      const std::array<Vector, 2> pts{map.coords.col(a.cell), map.coords.col(a.partner_cell)};
      const std::array<double, 2> ws{a.w_self, a.w_partner};
      EXPECT_LE((gk::gyromidpoint(pts, ws, map.curvature) - a.point).norm(), 1e-15);
    }
    std::sort(partners.begin(), partners.end());
    EXPECT_EQ(selves, by_class.at(cls));
    EXPECT_EQ(partners, by_class.at(cls));
  }
}

TEST(Mixup, SingleMemberClassIsSkippedAndReported) {
  EmbeddingMap map;
  map.coords = Matrix(2, 3);
  map.coords << 0.1, 0.2, -0.3, 0.0, 0.1, 0.2;
  map.labels = {0, 0, 1};
  map.width = 3;
  Rng rng(1);
  std::vector<int> skipped;
  const auto out = hyperbolic_mixup(map, MixupConfig{}, rng, &skipped);
  EXPECT_EQ(out.count(1), 0u);
  EXPECT_EQ(out.at(0).size(), 2u);
  EXPECT_EQ(skipped, std::vector<int>{1});
  EXPECT_THROW(hyperbolic_mixup(map, MixupConfig{true, 0.0}, rng), InvalidArgument);
}

TEST(Mixup, UniformBetaMean) {
  Rng rng(12);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += rng.beta(1.0, 1.0);
  EXPECT_NEAR(sum / n, 0.5, 0.01);
}

TEST(Reintegrate, EmptyPoolsLeaveFeaturesUnchanged) {
  Rng rng(13);
  const EmbeddingMap map = random_map(3, 20, 2, rng);
  const auto r = reintegrate(map, {}, {}, rng);
  EXPECT_EQ(r.map.coords, map.coords);
  EXPECT_EQ(r.map.labels, map.labels);
  EXPECT_TRUE(r.applied.empty());
}

TEST(Reintegrate, PreservesLabelsAndUnlabeledCellsAndIsDeterministic) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const EmbeddingMap map = random_map(4, 25, 3, rng);
    const auto pool = build_pool(dists_for(4, 3, rng), {0, 1, 2}, Modality::kRgb, rng);
    const auto sampled = interpolate(map, pool, InterpolationSchedule{}, 0.5, rng);
    const auto mixed = hyperbolic_mixup(map, MixupConfig{}, rng);
    Rng a(seed + 100), b(seed + 100);
    const auto r1 = reintegrate(map, sampled, mixed, a);
    const auto r2 = reintegrate(map, sampled, mixed, b);
    EXPECT_EQ(r1.map.coords, r2.map.coords);
    EXPECT_EQ(r1.map.labels, map.labels);
    for (int i = 0; i < 25; ++i) {
      if (map.labels[i] == kUnlabeled) EXPECT_EQ(r1.map.coords.col(i), map.coords.col(i));
    }
    // Each class takes all of its cells from exactly one of the two sets.
    std::map<int, std::set<PoolKind>> kinds;
    for (const auto& a : r1.applied) kinds[map.labels[a.cell]].insert(a.kind);
    for (const auto& [cls, k] : kinds) EXPECT_EQ(k.size(), 1u) << "class " << cls;
    EXPECT_EQ(r1.applied.size(), 20u);
  }
}

TEST(FocalLoss, GammaZeroIsCrossEntropy) {
  Rng rng(14);
  Matrix logits(4, 9);
  for (auto& x : logits.reshaped()) x = rng.normal();
  const Matrix p = softmax_columns(logits);
  std::vector<int> t{0, 1, 2, 3, kUnlabeled, 2, 1, 0, 3};
  double ce = 0.0;
  for (int n = 0; n < 9; ++n) {
    if (t[n] != kUnlabeled) ce -= std::log(p(t[n], n));
  }
  EXPECT_NEAR(focal_loss(p, t, 0.0), ce / 8.0, 1e-12);
}

TEST(FocalLoss, ScalarClosedForms) {
  Matrix p(2, 1);
  p << 0.9, 0.1;
  const double expected = -0.1 * 0.1 * std::log(0.9);
  EXPECT_NEAR(focal_loss(p, {0}, 2.0), expected, 1e-9 * expected);
  EXPECT_NEAR(focal_loss(p, {0}, 2.0), 1.054e-3, 1e-6);
  p << 1.0, 0.0;
  EXPECT_EQ(focal_loss(p, {0}, 2.0), 0.0);
}

TEST(FocalLoss, RejectsBadInputs) {
  Matrix p(2, 2);
  p << 0.5, 0.5, 0.5, 0.6;
  EXPECT_THROW(focal_loss(p, {0, 1}, 2.0), InvalidArgument);
  EXPECT_THROW(focal_loss(p, {kUnlabeled, kUnlabeled}, 2.0), InvalidArgument);
  p << 0.5, 0.5, 0.5, 0.5;
  EXPECT_THROW(focal_loss(p, {0, 2}, 2.0), InvalidArgument);
  EXPECT_THROW(focal_loss(p, {0, 1}, -1.0), InvalidArgument);
}

TEST(EmbeddingMapTest, ValidateRejectsBadLabelsAndBoundaryPoints) {
  EmbeddingMap m;
  m.coords = Matrix::Zero(2, 2);
  m.labels = {0, 1};
  m.width = 2;
  EXPECT_NO_THROW(m.validate(2));
  EXPECT_THROW(m.validate(1), InvalidArgument);
  m.coords(0, 1) = 1.0;
  EXPECT_ANY_THROW(m.validate(2));
  m.labels[1] = kUnlabeled;
  EXPECT_NO_THROW(m.validate(2));
}

// Fixture for the composite loss: d = 4, three classes.
struct HfaCase {
  EmbeddingMap map;
  std::vector<ClassDistribution> dists;
  AugmentationPool pool;
  MlrClassifier classifier;
  Reintegration aug;

  explicit HfaCase(std::uint64_t seed, bool with_mixup = true) {
    Rng rng(seed);
    map = random_map(4, 20, 3, rng);
    dists = dists_for(4, 3, rng);
    pool = build_pool(dists, {0, 1, 2}, Modality::kRgb, rng);
    classifier = random_classifier(4, 3, rng);
    const auto sampled = interpolate(map, pool, InterpolationSchedule{}, 0.6, rng);
    const auto mixed = with_mixup ? hyperbolic_mixup(map, MixupConfig{}, rng) : AugmentedSet{};
    aug = reintegrate(map, sampled, mixed, rng);
  }

  // Reapplies the recorded augmentation recipe to new original coordinates.
  Reintegration reapply(const Matrix& coords) const {
    Reintegration r{map, aug.applied};
    r.map.coords = coords;
    for (auto& a : r.applied) {
      const Vector partner = a.partner_cell >= 0 ? Vector(coords.col(a.partner_cell)) : a.partner;
      const std::array<Vector, 2> pts{coords.col(a.cell), partner};
      const std::array<double, 2> ws{a.w_self, a.w_partner};
      a.point = gk::gyromidpoint(pts, ws, map.curvature);
      r.map.coords.col(a.cell) = a.point;
    }
    return r;
  }
};

TEST(HfaLoss, ZeroWeightsCollapseToClassificationTerms) {
  const HfaCase c(21);
  HfaLossConfig cfg;
  cfg.lambda_div = cfg.lambda_proto_reg = cfg.lambda_mean_var = 0.0;
  const auto r = hfa_loss(c.map, c.aug, c.dists, c.pool, c.classifier, cfg);
  EXPECT_EQ(r.total, r.orig_cls + r.aug_cls);
}

TEST(HfaLoss, IdenticalMapsGiveEqualClassificationTerms) {
  const HfaCase c(22);
  const Reintegration same{c.map, {}};
  const auto r = hfa_loss(c.map, same, c.dists, c.pool, c.classifier, HfaLossConfig{});
  EXPECT_EQ(r.aug_cls, r.orig_cls);
}

TEST(HfaLoss, IdenticalSyntheticSamplesGiveZeroDiversity) {
  HfaCase c(23);
  for (auto& [cls, entries] : c.pool.entries) {
    entries.resize(2);
    entries[1] = entries[0];
  }
  const auto r = hfa_loss(c.map, c.aug, c.dists, c.pool, c.classifier, HfaLossConfig{});
  EXPECT_NEAR(r.div, 0.0, 1e-12);
}

TEST(HfaLoss, TermsFiniteWithExpectedSignsAndWeightedSum) {
  for (std::uint64_t seed = 30; seed < 50; ++seed) {
    const HfaCase c(seed);
    HfaLossConfig cfg;
    cfg.lambda_div = 0.3;
    cfg.lambda_proto_reg = 0.7;
    cfg.lambda_mean_var = 1.1;
    const auto r = hfa_loss(c.map, c.aug, c.dists, c.pool, c.classifier, cfg);
    for (double t : {r.orig_cls, r.aug_cls, r.div, r.proto_reg, r.mean_var}) EXPECT_TRUE(std::isfinite(t));
    EXPECT_GE(r.orig_cls, 0.0);
    EXPECT_GE(r.aug_cls, 0.0);
    EXPECT_GE(r.proto_reg, 0.0);
    EXPECT_GE(r.mean_var, 0.0);
    // Diversity is a negated mean distance.
    EXPECT_LE(r.div, 0.0);
    const double sum = r.orig_cls + r.aug_cls + 0.3 * r.div + 0.7 * r.proto_reg + 1.1 * r.mean_var;
    EXPECT_NEAR(r.total, sum, 1e-12);
  }
}

TEST(HfaLoss, MeanVarPenalisesRadiusBeyondCap) {
  HfaCase c(24);
  HfaLossConfig cfg;
  cfg.radius_max = 0.1;
  Vector far = Vector::Zero(4);
  far[0] = 0.5;
  c.dists[0].mean = BallPoint(far, Curvature{});
  const auto r = hfa_loss(c.map, c.aug, c.dists, c.pool, c.classifier, cfg);
  // Means of classes 1 and 2 may also exceed the tiny cap; class 0 alone is a lower bound.
  const double excess = 2.0 * std::atanh(0.5) - 0.1;
  EXPECT_GE(r.mean_var, excess * excess / 3.0 - 1e-12);
}

TEST(HfaLoss, MissingDistributionThrows) {
  const HfaCase c(25);
  std::vector<ClassDistribution> partial(c.dists.begin(), c.dists.begin() + 2);
  EXPECT_THROW(hfa_loss(c.map, c.aug, partial, c.pool, c.classifier, HfaLossConfig{}), InvalidArgument);
}

bool close(double analytic, double numeric, double rel = 1e-4) {
  return std::abs(analytic - numeric) <= rel * std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

TEST(HfaLoss, ClassifierGradientMatchesFiniteDifferences) {
  const HfaCase c(26);
  HfaLossConfig cfg;
  cfg.lambda_div = cfg.lambda_proto_reg = cfg.lambda_mean_var = 0.0;
  HfaGradient g;
  hfa_loss(c.map, c.aug, c.dists, c.pool, c.classifier, cfg, &g);
  const double h = 1e-6;
  for (int which = 0; which < 2; ++which) {
    for (int i = 0; i < 4; ++i) {
      for (int k = 0; k < 3; ++k) {
        MlrClassifier up = c.classifier, down = c.classifier;
        (which == 0 ? up.offsets : up.normals)(i, k) += h;
        (which == 0 ? down.offsets : down.normals)(i, k) -= h;
        const double fd = (hfa_loss(c.map, c.aug, c.dists, c.pool, up, cfg).total -
                           hfa_loss(c.map, c.aug, c.dists, c.pool, down, cfg).total) / (2 * h);
        const double an = (which == 0 ? g.d_offsets : g.d_normals)(i, k);
        EXPECT_TRUE(close(an, fd)) << (which ? "normal" : "offset") << " (" << i << "," << k
                                   << ") analytic " << an << " fd " << fd;
      }
    }
  }
}

TEST(HfaLoss, CoordinateGradientMatchesFiniteDifferences) {
  const HfaCase c(27);
  HfaLossConfig cfg;  // default weights, so the prototype term contributes too
  HfaGradient g;
  hfa_loss(c.map, c.aug, c.dists, c.pool, c.classifier, cfg, &g);
  const double h = 1e-6;
  for (int n = 0; n < c.map.size(); ++n) {
    for (int i = 0; i < 4; ++i) {
      Matrix up = c.map.coords, down = c.map.coords;
      up(i, n) += h;
      down(i, n) -= h;
      auto loss = [&](const Matrix& coords) {
        EmbeddingMap m = c.map;
        m.coords = coords;
        return hfa_loss(m, c.reapply(coords), c.dists, c.pool, c.classifier, cfg).total;
      };
      const double fd = (loss(up) - loss(down)) / (2 * h);
      EXPECT_TRUE(close(g.d_coords(i, n), fd)) << "cell " << n << " dim " << i << " analytic "
                                               << g.d_coords(i, n) << " fd " << fd;
    }
  }
}

}  // namespace
}  // namespace hyperada::augmentation
