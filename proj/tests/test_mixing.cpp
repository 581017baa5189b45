#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "hyperada/errors.hpp"
#include "hyperada/mixing.hpp"

namespace hyperada::mixing {
namespace {

constexpr double kPi = std::numbers::pi;

double deg(double d) { return d * kPi / 180.0; }

CloudPoint at_azimuth(double degrees, double r = 5.0, double z = 0.3) {
  return {r * std::cos(deg(degrees)), r * std::sin(deg(degrees)), z, 0.5};
}

Matrix one_hot_probs(const std::vector<int>& argmax, int classes) {
  Matrix p = Matrix::Constant(classes, static_cast<Eigen::Index>(argmax.size()), 0.1 / (classes - 1));
  for (std::size_t i = 0; i < argmax.size(); ++i) p(argmax[i], static_cast<Eigen::Index>(i)) = 0.9;
  return p;
}

TEST(PseudoLabel, PercentileEndpoints) {
  const Matrix p = one_hot_probs({2, 0, 1, 2}, 3);
  const std::vector<double> s{0.4, 0.1, 0.3, 0.2};
  const auto none = pseudo_label(p, s, 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(none.mask[i], 0);
    EXPECT_EQ(none.labels[i], kUnlabeled);
  }
  const auto all = pseudo_label(p, s, 100.0);
  EXPECT_EQ(all.labels, (std::vector<int>{2, 0, 1, 2}));
  for (auto m : all.mask) EXPECT_EQ(m, 1);
}

TEST(PseudoLabel, HalfOfFourScores) {
  const Matrix p = one_hot_probs({0, 1, 2, 0}, 3);
  const std::vector<double> s{2.0, 0.0, 3.0, 1.0};
  const auto r = pseudo_label(p, s, 50.0);
  EXPECT_EQ(r.mask, (std::vector<std::uint8_t>{0, 1, 0, 1}));
  EXPECT_EQ(r.labels, (std::vector<int>{kUnlabeled, 1, kUnlabeled, 0}));
}

TEST(PseudoLabel, TiesAtTheCutAreIncluded) {
  const Matrix p = one_hot_probs({0, 0, 0, 0, 0}, 2);
  const std::vector<double> s(5, 1.5);
  const auto r = pseudo_label(p, s, 20.0);
  for (auto m : r.mask) EXPECT_EQ(m, 1);
}

TEST(PseudoLabel, BruteForcePercentileOracle) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const int n = 1 + static_cast<int>(rng.index(60));
    std::vector<double> s(n);
    std::vector<int> am(n);
    for (int i = 0; i < n; ++i) {
      s[i] = std::floor(rng.uniform(0, 10));
      am[i] = static_cast<int>(rng.index(3));
    }
    const double tau = rng.uniform(0, 100);
    const auto r = pseudo_label(one_hot_probs(am, 3), s, tau);
    // The cut is the k-th smallest score with k = ceil(tau% of n).
    std::vector<double> sorted = s;
    std::sort(sorted.begin(), sorted.end());
    const auto k = static_cast<std::size_t>(std::ceil(tau / 100.0 * n - 1e-9));
    for (int i = 0; i < n; ++i) {
      const bool expect = k > 0 && s[i] <= sorted[k - 1];
      EXPECT_EQ(r.mask[i] != 0, expect);
      EXPECT_EQ(r.labels[i], expect ? am[i] : kUnlabeled);
    }
  }
}

TEST(PseudoLabel, EmptyImageIsAnError) {
  EXPECT_THROW(pseudo_label(Matrix(3, 0), std::vector<double>{}, 50.0), InvalidArgument);
}

LabeledImage random_image(int h, int w, int c, Rng& rng, bool some_unlabeled) {
  LabeledImage img(h, w, c);
  for (auto& x : img.data) x = static_cast<float>(rng.uniform());
  for (auto& l : img.labels) l = some_unlabeled && rng.coin() ? kUnlabeled : static_cast<int>(rng.index(5));
  return img;
}

PseudoLabels mask_from(const std::vector<std::uint8_t>& mask, Rng& rng) {
  PseudoLabels p;
  p.mask = mask;
  for (auto m : mask) p.labels.push_back(m ? static_cast<int>(rng.index(5)) : kUnlabeled);
  return p;
}

TEST(Dacs, EmptyMaskReturnsSource) {
  Rng rng(2);
  const auto src = random_image(6, 7, 3, rng, true);
  const auto tgt = random_image(6, 7, 3, rng, false);
  const auto r = dacs_mix(src, tgt, mask_from(std::vector<std::uint8_t>(42, 0), rng), rng);
  EXPECT_EQ(r.mixed.data, src.data);
  EXPECT_EQ(r.mixed.labels, src.labels);
}

TEST(Dacs, FullMaskReturnsTargetWithPseudoLabels) {
  Rng rng(3);
  const auto src = random_image(5, 4, 3, rng, false);
  const auto tgt = random_image(5, 4, 3, rng, false);
  const auto pseudo = mask_from(std::vector<std::uint8_t>(20, 1), rng);
  const auto r = dacs_mix(src, tgt, pseudo, rng);
  EXPECT_EQ(r.mixed.data, tgt.data);
  EXPECT_EQ(r.mixed.labels, pseudo.labels);
}

TEST(Dacs, CheckerboardProvenanceAudit) {
  Rng rng(4);
  const auto src = random_image(8, 9, 3, rng, true);
  const auto tgt = random_image(8, 9, 3, rng, false);
  std::vector<std::uint8_t> board(72);
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 9; ++c) board[r * 9 + c] = (r + c) % 2;
  }
  const auto pseudo = mask_from(board, rng);
  const auto out = dacs_mix(src, tgt, pseudo, rng);
  EXPECT_EQ(out.paste_mask, board);
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 9; ++c) {
      const LabeledImage& from = board[r * 9 + c] ? tgt : src;
      for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(out.mixed.at(r, c, ch), from.at(r, c, ch));
      EXPECT_EQ(out.mixed.label(r, c), board[r * 9 + c] ? pseudo.labels[r * 9 + c] : src.label(r, c));
    }
  }
}

TEST(Dacs, RandomPairsAuditAndSentinelRule) {
  Rng rng(5);
  int violations = 0;
  for (int pair = 0; pair < 100; ++pair) {
    const int h = 2 + static_cast<int>(rng.index(10)), w = 2 + static_cast<int>(rng.index(10));
    const auto src = random_image(h, w, 3, rng, true);
    const auto tgt = random_image(h, w, 3, rng, true);
    Matrix probs(5, h * w);
    for (auto& x : probs.reshaped()) x = rng.uniform(0.01, 1.0);
    for (int i = 0; i < h * w; ++i) probs.col(i) /= probs.col(i).sum();
    std::vector<double> scores(h * w);
    for (auto& s : scores) s = rng.uniform();
    const auto pseudo = pseudo_label(probs, scores, rng.uniform(0, 100));
    const auto out = dacs_mix(src, tgt, pseudo, rng);
    for (int i = 0; i < h * w; ++i) {
      const bool pasted = pseudo.mask[i] != 0;
      violations += out.paste_mask[i] != pseudo.mask[i];
      const LabeledImage& from = pasted ? tgt : src;
      for (int ch = 0; ch < 3; ++ch) violations += out.mixed.data[i * 3 + ch] != from.data[i * 3 + ch];
      violations += out.mixed.labels[i] != (pasted ? pseudo.labels[i] : src.labels[i]);
      if (out.mixed.labels[i] == kUnlabeled) violations += !(src.labels[i] == kUnlabeled && !pasted);
    }
  }
  EXPECT_EQ(violations, 0);
}

TEST(Dacs, ClassicDirectionPastesHalfTheSourceClasses) {
  Rng rng(6);
  auto src = random_image(10, 10, 3, rng, false);
  const auto tgt = random_image(10, 10, 3, rng, false);
  const auto pseudo = mask_from(std::vector<std::uint8_t>(100, 1), rng);
  const auto out = dacs_mix(src, tgt, pseudo, rng, DacsDirection::kSourceOntoTarget);
  std::set<int> pasted_classes, all_classes(src.labels.begin(), src.labels.end());
  for (int i = 0; i < 100; ++i) {
    if (out.paste_mask[i]) {
      pasted_classes.insert(src.labels[i]);
      EXPECT_EQ(out.mixed.labels[i], src.labels[i]);
    } else {
      EXPECT_EQ(out.mixed.labels[i], pseudo.labels[i]);
    }
  }
  EXPECT_EQ(pasted_classes.size(), (all_classes.size() + 1) / 2);
  // Every pixel of a chosen class is pasted.
  for (int i = 0; i < 100; ++i) EXPECT_EQ(out.paste_mask[i] != 0, pasted_classes.contains(src.labels[i]));
}

TEST(Dacs, ShapeMismatchIsAnError) {
  Rng rng(7);
  const auto src = random_image(4, 4, 3, rng, false);
  const auto tgt = random_image(4, 5, 3, rng, false);
  EXPECT_THROW(dacs_mix(src, tgt, mask_from(std::vector<std::uint8_t>(16, 0), rng), rng), InvalidArgument);
}

LabeledCloud cloud_at(const std::vector<double>& azimuths_deg, int label_base) {
  LabeledCloud c;
  for (std::size_t i = 0; i < azimuths_deg.size(); ++i) {
    c.points.push_back(at_azimuth(azimuths_deg[i]));
    c.labels.push_back(label_base + static_cast<int>(i));
  }
  return c;
}

TEST(SectorSwap, DefinitionExample) {
  const auto a = cloud_at({10, 100, 200}, 0);
  const auto b = cloud_at({20, 110, 210}, 10);
  const auto out = polarmix_sector_swap(a, b, 0.0, deg(90));
  ASSERT_EQ(out.cloud.size(), 3u);
  EXPECT_EQ(out.cloud.labels, (std::vector<int>{1, 2, 10}));
  EXPECT_EQ(out.origin[0], (PointOrigin{0, 1}));
  EXPECT_EQ(out.origin[1], (PointOrigin{0, 2}));
  EXPECT_EQ(out.origin[2], (PointOrigin{1, 0}));
  EXPECT_NEAR(out.cloud.points[2].azimuth(), deg(20), 1e-12);
}

TEST(SectorSwap, NearlyFullSectorOnIdenticalCloudsGivesB) {
  Rng rng(8);
  LabeledCloud c;
  for (int i = 0; i < 300; ++i) {
    c.points.push_back({rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-1, 1), rng.uniform()});
    c.labels.push_back(static_cast<int>(rng.index(5)));
  }
  const double theta0 = 1.234;
  const auto out = polarmix_sector_swap(c, c, theta0, 2 * kPi - 1e-9);
  ASSERT_EQ(out.cloud.size(), c.size());
  // Only points inside the excluded sliver could come from a; the multiset equals c.
  auto key = [](const CloudPoint& p) { return std::tuple(p.x, p.y, p.z, p.intensity); };
  std::vector<std::tuple<double, double, double, double>> got, want;
  for (const auto& p : out.cloud.points) got.push_back(key(p));
  for (const auto& p : c.points) want.push_back(key(p));
  std::sort(got.begin(), got.end());
  std::sort(want.begin(), want.end());
  EXPECT_EQ(got, want);
}

TEST(SectorSwap, RandomPairsMembershipAudit) {
  Rng rng(9);
  int violations = 0;
  for (int pair = 0; pair < 100; ++pair) {
    LabeledCloud a, b;
    for (LabeledCloud* c : {&a, &b}) {
      const int n = static_cast<int>(rng.index(200));
      for (int i = 0; i < n; ++i) {
        c->points.push_back({rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-2, 2), rng.uniform()});
        c->labels.push_back(static_cast<int>(rng.index(19)));
      }
    }
    const double theta0 = rng.uniform(-kPi, 3 * kPi);
    const double sigma = rng.uniform(1e-3, 2 * kPi - 1e-3);
    const auto out = polarmix_sector_swap(a, b, theta0, sigma);
    // Brute-force recount with an independent membership rule.
    auto inside = [&](const CloudPoint& p) {
      double rel = std::atan2(p.y, p.x) - theta0;
      while (rel < 0) rel += 2 * kPi;
      while (rel >= 2 * kPi) rel -= 2 * kPi;
      return rel < sigma;
    };
    std::size_t expected = 0;
    for (const auto& p : a.points) expected += !inside(p);
    for (const auto& p : b.points) expected += inside(p);
    violations += out.cloud.size() != expected;
    for (std::size_t i = 0; i < out.cloud.size(); ++i) {
      const auto& o = out.origin[i];
      const LabeledCloud& src = o.input == 0 ? a : b;
      violations += !(src.points[o.index] == out.cloud.points[i]);
      violations += src.labels[o.index] != out.cloud.labels[i];
      violations += inside(out.cloud.points[i]) != (o.input == 1);
    }
  }
  EXPECT_EQ(violations, 0);
}

TEST(SectorSwap, RejectsDegenerateSectors) {
  const auto a = cloud_at({10}, 0);
  EXPECT_THROW(polarmix_sector_swap(a, a, 0.0, 0.0), InvalidArgument);
  EXPECT_THROW(polarmix_sector_swap(a, a, 0.0, 2 * kPi), InvalidArgument);
}

TEST(InstancePaste, AbsentClassesLeaveACloudUnchanged) {
  const auto a = cloud_at({10, 50}, 0);
  const auto b = cloud_at({20, 30}, 5);
  const std::vector<double> rot{0.3};
  const auto out = polarmix_instance_paste(a, b, {9}, rot);
  EXPECT_EQ(out.cloud.points, a.points);
  EXPECT_EQ(out.cloud.labels, a.labels);
}

TEST(InstancePaste, IdentityRotationAppendsExactCopies) {
  const auto a = cloud_at({10, 50}, 0);
  LabeledCloud b = cloud_at({20, 30, 40}, 5);
  b.labels = {7, 8, 7};
  const std::vector<double> rot{0.0};
  const auto out = polarmix_instance_paste(a, b, {7}, rot);
  ASSERT_EQ(out.cloud.size(), 4u);
  EXPECT_EQ(out.cloud.points[2], b.points[0]);
  EXPECT_EQ(out.cloud.points[3], b.points[2]);
  EXPECT_EQ(out.cloud.labels, (std::vector<int>{0, 1, 7, 7}));
  EXPECT_THROW(polarmix_instance_paste(a, b, {7}, std::vector<double>{}), InvalidArgument);
}

TEST(InstancePaste, HalfTurnMapsUnitXToMinusX) {
  LabeledCloud b;
  b.points = {{1.0, 0.0, 0.0, 0.2}};
  b.labels = {3};
  const std::vector<double> rot{kPi};
  const auto out = polarmix_instance_paste(LabeledCloud{}, b, {3}, rot);
  ASSERT_EQ(out.cloud.size(), 1u);
  EXPECT_NEAR(out.cloud.points[0].x, -1.0, 1e-12);
  EXPECT_NEAR(out.cloud.points[0].y, 0.0, 1e-12);
  EXPECT_EQ(out.cloud.points[0].z, 0.0);
}

TEST(InstancePaste, RotationsPreserveHeightAndRadius) {
  Rng rng(10);
  LabeledCloud b;
  for (int i = 0; i < 500; ++i) {
    b.points.push_back({rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(-3, 3), rng.uniform()});
    b.labels.push_back(static_cast<int>(rng.index(3)));
  }
  const auto rot = sample_rotations(rng, 7);
  const auto out = polarmix_instance_paste(LabeledCloud{}, b, {0, 1, 2}, rot);
  ASSERT_EQ(out.cloud.size(), 7u * 500u);
  double worst = 0.0;
  for (std::size_t i = 0; i < out.cloud.size(); ++i) {
    const auto& src = b.points[out.origin[i].index];
    const auto& p = out.cloud.points[i];
    EXPECT_EQ(p.z, src.z);
    EXPECT_EQ(out.cloud.labels[i], b.labels[out.origin[i].index]);
    worst = std::max(worst, std::abs(std::hypot(p.x, p.y) - std::hypot(src.x, src.y)));
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(InstancePaste, ConfidenceGateFiltersPoints) {
  LabeledCloud b = cloud_at({20, 30, 40}, 0);
  b.labels = {1, 1, 1};
  const std::vector<std::uint8_t> gate{1, 0, 1};
  const std::vector<double> rot{0.0};
  const auto out = polarmix_instance_paste(LabeledCloud{}, b, {1}, rot, gate);
  ASSERT_EQ(out.cloud.size(), 2u);
  EXPECT_EQ(out.origin[1].index, 2u);
}

TEST(RareClasses, RarestThirdWithTiesToHigherId) {
  LabeledCloud c;
  // Counts: class 0 x5, 1 x2, 2 x2, 3 x9, 4 x7, 5 x1.
  for (auto [cls, n] : std::vector<std::pair<int, int>>{{0, 5}, {1, 2}, {2, 2}, {3, 9}, {4, 7}, {5, 1}}) {
    for (int i = 0; i < n; ++i) {
      c.points.push_back({1.0, 0.0, 0.0, 0.0});
      c.labels.push_back(cls);
    }
  }
  const std::vector<LabeledCloud> clouds{c};
  EXPECT_EQ(rare_classes(clouds, 6), (std::set<int>{5, 2}));
  const std::vector<LabeledCloud> single{cloud_at({10}, 4)};
  EXPECT_EQ(rare_classes(single, 6), (std::set<int>{4}));
}

TEST(Sampling, SectorDefaults) {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const auto s = sample_sector(rng);
    EXPECT_GE(s.theta0, 0.0);
    EXPECT_LT(s.theta0, 2 * kPi);
    EXPECT_EQ(s.sigma, kPi);
  }
}

}  // namespace
}  // namespace hyperada::mixing
