#include "hyperada/mixing.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include "hyperada/errors.hpp"

namespace hyperada::mixing {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

PseudoLabels pseudo_label(const Matrix& probs, std::span<const double> scores,
                          double tau_percentile) {
  const std::size_t n = scores.size();
  if (n == 0 || probs.cols() == 0) throw InvalidArgument("pseudo_label: empty image");
  if (static_cast<std::size_t>(probs.cols()) != n) {
    throw InvalidArgument("pseudo_label: score count does not match probability columns");
  }
  if (!(tau_percentile >= 0.0 && tau_percentile <= 100.0)) {
    throw InvalidArgument("pseudo_label: tau percentile must be in [0, 100]");
  }
  PseudoLabels out;
  out.labels.assign(n, kUnlabeled);
  out.mask.assign(n, 0);
  const auto keep = static_cast<std::size_t>(std::ceil(tau_percentile / 100.0 * n - 1e-9));
  if (keep == 0) {
    out.threshold = -std::numeric_limits<double>::infinity();
    return out;
  }
  std::vector<double> sorted(scores.begin(), scores.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(keep - 1),
                   sorted.end());
  out.threshold = sorted[keep - 1];
  for (std::size_t i = 0; i < n; ++i) {
    if (scores[i] <= out.threshold) {
      out.mask[i] = 1;
      Eigen::Index best;
      probs.col(static_cast<Eigen::Index>(i)).maxCoeff(&best);
      out.labels[i] = static_cast<int>(best);
    }
  }
  return out;
}

DacsResult dacs_mix(const LabeledImage& source, const LabeledImage& target,
                    const PseudoLabels& pseudo, Rng& rng, DacsDirection direction) {
  source.validate();
  if (target.height != source.height || target.width != source.width ||
      target.channels != source.channels || target.data.size() != source.data.size()) {
    throw InvalidArgument("dacs_mix: source and target shapes differ");
  }
  const std::size_t pixels = source.pixels();
  if (pseudo.mask.size() != pixels || pseudo.labels.size() != pixels) {
    throw InvalidArgument("dacs_mix: pseudo-label shape differs from the images");
  }
  const auto channels = static_cast<std::size_t>(source.channels);
  DacsResult out;
  out.paste_mask.assign(pixels, 0);

  if (direction == DacsDirection::kTargetOntoSource) {
    out.mixed = source;
    for (std::size_t i = 0; i < pixels; ++i) {
      if (!pseudo.mask[i]) continue;
      std::copy_n(target.data.begin() + static_cast<std::ptrdiff_t>(i * channels), channels,
                  out.mixed.data.begin() + static_cast<std::ptrdiff_t>(i * channels));
      out.mixed.labels[i] = pseudo.labels[i];
      out.paste_mask[i] = 1;
    }
    return out;
  }

  // Classic direction: half of the source classes (rounded up) are pasted
  // onto the target, which otherwise carries its pseudo-labels.
  std::vector<int> classes;
  for (int l : source.labels) {
    if (l != kUnlabeled) classes.push_back(l);
  }
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  rng.shuffle(classes);
  classes.resize((classes.size() + 1) / 2);
  out.mixed = target;
  out.mixed.labels = pseudo.labels;
  for (std::size_t i = 0; i < pixels; ++i) {
    const int l = source.labels[i];
    if (l == kUnlabeled || std::find(classes.begin(), classes.end(), l) == classes.end()) continue;
    std::copy_n(source.data.begin() + static_cast<std::ptrdiff_t>(i * channels), channels,
                out.mixed.data.begin() + static_cast<std::ptrdiff_t>(i * channels));
    out.mixed.labels[i] = l;
    out.paste_mask[i] = 1;
  }
  return out;
}

bool in_sector(double azimuth, double theta0, double sigma) {
  double rel = std::fmod(azimuth - theta0, kTwoPi);
  if (rel < 0.0) rel += kTwoPi;
  if (rel >= kTwoPi) rel = 0.0;
  return rel < sigma;
}

namespace {

void append_point(MixedCloud& out, const LabeledCloud& src, std::size_t i, std::uint8_t input,
                  bool with_instances) {
  out.cloud.points.push_back(src.points[i]);
  out.cloud.labels.push_back(src.labels[i]);
  if (with_instances) out.cloud.instances.push_back(src.has_instances() ? src.instances[i] : 0);
  out.origin.push_back({input, static_cast<std::uint32_t>(i)});
}

}  // namespace

MixedCloud polarmix_sector_swap(const LabeledCloud& a, const LabeledCloud& b, double theta0,
                                double sigma) {
  if (!(sigma > 0.0 && sigma < kTwoPi)) {
    throw InvalidArgument("polarmix: sector width must lie in (0, 2 pi)");
  }
  a.validate();
  b.validate();
  const bool with_instances = a.has_instances() || b.has_instances();
  MixedCloud out;
  out.cloud.points.reserve(a.size() + b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!in_sector(a.points[i].azimuth(), theta0, sigma)) append_point(out, a, i, 0, with_instances);
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (in_sector(b.points[i].azimuth(), theta0, sigma)) append_point(out, b, i, 1, with_instances);
  }
  return out;
}

SectorParams sample_sector(Rng& rng) {
  SectorParams p;
  p.theta0 = rng.uniform(0.0, kTwoPi);
  p.sigma = std::numbers::pi;
  return p;
}

CloudPoint rotate_z(const CloudPoint& p, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  CloudPoint r = p;
  r.x = c * p.x - s * p.y;
  r.y = s * p.x + c * p.y;
  return r;
}

MixedCloud polarmix_instance_paste(const LabeledCloud& a, const LabeledCloud& b,
                                   const std::set<int>& classes, std::span<const double> rotations,
                                   std::span<const std::uint8_t> b_confident) {
  if (rotations.empty()) {
    throw InvalidArgument("polarmix: empty rotation list (use {0} for an unrotated paste)");
  }
  a.validate();
  b.validate();
  if (!b_confident.empty() && b_confident.size() != b.size()) {
    throw InvalidArgument("polarmix: confidence mask size differs from the pasted cloud");
  }
  const bool with_instances = a.has_instances() || b.has_instances();
  MixedCloud out;
  for (std::size_t i = 0; i < a.size(); ++i) append_point(out, a, i, 0, with_instances);

  std::vector<std::size_t> picked;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (!classes.contains(b.labels[i])) continue;
    if (!b_confident.empty() && !b_confident[i]) continue;
    picked.push_back(i);
  }
  for (double angle : rotations) {
    for (std::size_t i : picked) {
      append_point(out, b, i, 1, with_instances);
      out.cloud.points.back() = rotate_z(b.points[i], angle);
    }
  }
  return out;
}

std::set<int> rare_classes(std::span<const LabeledCloud> clouds, int num_classes) {
  std::map<int, std::size_t> counts;
  for (const LabeledCloud& c : clouds) {
    for (int l : c.labels) {
      if (l >= 0 && l < num_classes) ++counts[l];
    }
  }
  std::vector<std::pair<std::size_t, int>> ranked;
  for (const auto& [cls, n] : counts) ranked.emplace_back(n, -cls);
  std::sort(ranked.begin(), ranked.end());
  const std::size_t take = std::max<std::size_t>(1, ranked.size() / 3);
  std::set<int> out;
  for (std::size_t i = 0; i < std::min(take, ranked.size()); ++i) out.insert(-ranked[i].second);
  return out;
}

std::vector<double> sample_rotations(Rng& rng, int count) {
  std::vector<double> out(static_cast<std::size_t>(count));
  for (double& a : out) a = rng.uniform(0.0, kTwoPi);
  return out;
}

}  // namespace hyperada::mixing
