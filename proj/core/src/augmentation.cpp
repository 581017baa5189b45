#include "hyperada/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "hyperada/errors.hpp"

namespace hyperada::augmentation {

namespace gk = geometry::kernel;

Matrix MlrClassifier::logits(const Matrix& points) const {
  return geometry::grad::mlr_forward(points, offsets, normals, curvature);
}

Matrix MlrClassifier::probabilities(const Matrix& points) const {
  return softmax_columns(logits(points));
}

std::vector<geometry::MlrHyperplane> MlrClassifier::hyperplanes() const {
  std::vector<geometry::MlrHyperplane> out;
  for (Eigen::Index c = 0; c < classes(); ++c) {
    out.push_back({BallPoint(offsets.col(c), curvature), normals.col(c)});
  }
  return out;
}

Matrix softmax_columns(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index n = 0; n < logits.cols(); ++n) {
    const double m = logits.col(n).maxCoeff();
    out.col(n) = (logits.col(n).array() - m).exp().matrix();
    out.col(n) /= out.col(n).sum();
  }
  return out;
}

void EmbeddingMap::validate(int num_classes) const {
  if (static_cast<Eigen::Index>(labels.size()) != coords.cols()) {
    throw InvalidArgument("embedding map: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(coords.cols()) + " cells");
  }
  if (static_cast<Eigen::Index>(height) * width != coords.cols()) {
    throw InvalidArgument("embedding map: shape does not match cell count");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (l == kUnlabeled) continue;
    if (l < 0 || l >= num_classes) {
      throw InvalidArgument("embedding map: label " + std::to_string(l) + " out of range");
    }
    if (curvature.c() * coords.col(static_cast<Eigen::Index>(i)).squaredNorm() >= 1.0) {
      throw GeometryError("embedding map: labeled cell outside the ball");
    }
  }
}

std::map<int, std::vector<int>> cells_by_class(const EmbeddingMap& map) {
  std::map<int, std::vector<int>> out;
  for (std::size_t i = 0; i < map.labels.size(); ++i) {
    if (map.labels[i] != kUnlabeled) out[map.labels[i]].push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<BallPoint> AugmentationPool::sampled(int cls) const {
  std::vector<BallPoint> out;
  const auto it = entries.find(cls);
  if (it == entries.end()) return out;
  for (const PoolEntry& e : it->second) {
    if (e.kind == PoolKind::kSampled) out.push_back(e.point);
  }
  return out;
}

std::size_t AugmentationPool::size(int cls) const {
  const auto it = entries.find(cls);
  return it == entries.end() ? 0 : it->second.size();
}

int samples_per_class(Modality mode) { return mode == Modality::kRgb ? 5 : 2; }

AugmentationPool build_pool(const std::vector<ClassDistribution>& distributions,
                            const std::vector<int>& present_classes, Modality mode, Rng& rng) {
  AugmentationPool pool;
  const std::set<int> present(present_classes.begin(), present_classes.end());
  for (int cls : present) {
    const auto it = std::find_if(distributions.begin(), distributions.end(),
                                 [cls](const ClassDistribution& d) { return d.class_id == cls; });
    if (it == distributions.end()) {
      throw InvalidArgument("build_pool: no distribution for present class " + std::to_string(cls));
    }
    for (BallPoint& p : distributions::wrapped_normal_sample(*it, samples_per_class(mode), rng)) {
      pool.entries[cls].push_back({std::move(p), PoolKind::kSampled});
    }
  }
  return pool;
}

double InterpolationSchedule::weight(double t_frac) const {
  const double t = std::clamp(t_frac, 0.0, 1.0);
  return w0 + (w1 - w0) * t;
}

namespace {

Vector midpoint2(const Vector& a, const Vector& b, double wa, double wb, const Curvature& k) {
  const std::array<Vector, 2> pts{a, b};
  const std::array<double, 2> ws{wa, wb};
  return gk::gyromidpoint(pts, ws, k);
}

}  // namespace

AugmentedSet interpolate(const EmbeddingMap& real, const AugmentationPool& pool,
                         const InterpolationSchedule& schedule, double t_frac, Rng& rng,
                         double subsample) {
  const double w = schedule.weight(t_frac);
  AugmentedSet out;
  for (const auto& [cls, cells] : cells_by_class(real)) {
    const std::vector<BallPoint> synth = pool.sampled(cls);
    if (synth.empty()) continue;
    std::vector<AugmentedEmbedding>& dst = out[cls];
    for (int cell : cells) {
      if (subsample < 1.0 && rng.uniform() >= subsample) continue;
      const std::size_t j = rng.index(synth.size());
      AugmentedEmbedding a;
      a.cell = cell;
      a.kind = PoolKind::kSampled;
      a.partner = synth[j].coords;
      a.w_self = 1.0 - w;
      a.w_partner = w;
      a.point = midpoint2(real.coords.col(cell), a.partner, a.w_self, a.w_partner, real.curvature);
      dst.push_back(std::move(a));
    }
  }
  return out;
}

AugmentedSet hyperbolic_mixup(const EmbeddingMap& real, const MixupConfig& cfg, Rng& rng,
                              std::vector<int>* skipped) {
  if (!(cfg.beta_alpha > 0.0)) throw InvalidArgument("mixup beta_alpha must be positive");
  AugmentedSet out;
  if (!cfg.enabled) return out;
  for (const auto& [cls, cells] : cells_by_class(real)) {
    if (cells.size() < 2) {
      if (skipped) skipped->push_back(cls);
      continue;
    }
    std::vector<int> partners = cells;
    rng.shuffle(partners);
    std::vector<AugmentedEmbedding>& dst = out[cls];
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const double lambda = rng.beta(cfg.beta_alpha, cfg.beta_alpha);
      AugmentedEmbedding a;
      a.cell = cells[i];
      a.kind = PoolKind::kMixed;
      a.partner_cell = partners[i];
      a.w_self = lambda;
      a.w_partner = 1.0 - lambda;
      a.point = midpoint2(real.coords.col(a.cell), real.coords.col(a.partner_cell), a.w_self,
                          a.w_partner, real.curvature);
      dst.push_back(std::move(a));
    }
  }
  return out;
}

void add_mixed(AugmentationPool& pool, const AugmentedSet& mixed, const Curvature& k) {
  for (const auto& [cls, items] : mixed) {
    for (const AugmentedEmbedding& a : items) {
      pool.entries[cls].push_back({BallPoint(a.point, k), PoolKind::kMixed});
    }
  }
}

Reintegration reintegrate(const EmbeddingMap& features, const AugmentedSet& sampled,
                          const AugmentedSet& mixed, Rng& rng) {
  Reintegration out{features, {}};
  std::set<int> classes;
  for (const auto& kv : sampled) classes.insert(kv.first);
  for (const auto& kv : mixed) classes.insert(kv.first);
  for (int cls : classes) {
    const auto s = sampled.find(cls);
    const auto m = mixed.find(cls);
    const bool has_s = s != sampled.end() && !s->second.empty();
    const bool has_m = m != mixed.end() && !m->second.empty();
    // The coin is always drawn so the stream does not depend on pool contents.
    const bool pick_mixed = rng.coin();
    const std::vector<AugmentedEmbedding>* chosen = nullptr;
    if (has_s && has_m) {
      chosen = pick_mixed ? &m->second : &s->second;
    } else if (has_s) {
      chosen = &s->second;
    } else if (has_m) {
      chosen = &m->second;
    }
    if (!chosen) continue;
    for (const AugmentedEmbedding& a : *chosen) {
      if (features.labels[static_cast<std::size_t>(a.cell)] == kUnlabeled) continue;
      out.map.coords.col(a.cell) = a.point;
      out.applied.push_back(a);
    }
  }
  return out;
}

Matrix reintegration_vjp(const EmbeddingMap& original, const Reintegration& aug,
                         const Matrix& d_augmented) {
  Matrix d = d_augmented;
  for (const AugmentedEmbedding& a : aug.applied) d.col(a.cell).setZero();
  for (const AugmentedEmbedding& a : aug.applied) {
    const Vector self = original.coords.col(a.cell);
    const Vector partner = a.partner_cell >= 0 ? Vector(original.coords.col(a.partner_cell))
                                               : a.partner;
    const std::array<Vector, 2> pts{self, partner};
    const std::array<double, 2> ws{a.w_self, a.w_partner};
    const std::vector<Vector> g = geometry::grad::gyromidpoint_vjp(
        pts, ws, d_augmented.col(a.cell), original.curvature);
    d.col(a.cell) += g[0];
    if (a.partner_cell >= 0) d.col(a.partner_cell) += g[1];
  }
  return d;
}

namespace {

std::size_t check_focal_inputs(const Matrix& probs, const std::vector<int>& targets) {
  if (static_cast<Eigen::Index>(targets.size()) != probs.cols()) {
    throw InvalidArgument("focal loss: target count does not match probability columns");
  }
  std::size_t labeled = 0;
  for (std::size_t n = 0; n < targets.size(); ++n) {
    const int t = targets[n];
    if (t == kUnlabeled) continue;
    if (t < 0 || t >= probs.rows()) throw InvalidArgument("focal loss: target out of range");
    const double sum = probs.col(static_cast<Eigen::Index>(n)).sum();
    if (std::abs(sum - 1.0) > 1e-6) {
      throw InvalidArgument("focal loss: probability column " + std::to_string(n) +
                            " sums to " + std::to_string(sum));
    }
    ++labeled;
  }
  if (labeled == 0) throw InvalidArgument("focal loss: no labeled cells");
  return labeled;
}

}  // namespace

double focal_loss(const Matrix& probs, const std::vector<int>& targets, double gamma) {
  if (!(gamma >= 0.0)) throw InvalidArgument("focal gamma must be non-negative");
  const std::size_t labeled = check_focal_inputs(probs, targets);
  double total = 0.0;
  for (std::size_t n = 0; n < targets.size(); ++n) {
    if (targets[n] == kUnlabeled) continue;
    const double p = std::max(probs(targets[n], static_cast<Eigen::Index>(n)), 1e-300);
    total -= std::pow(1.0 - p, gamma) * std::log(p);
  }
  return total / static_cast<double>(labeled);
}

Matrix focal_loss_logit_grad(const Matrix& probs, const std::vector<int>& targets, double gamma) {
  const std::size_t labeled = check_focal_inputs(probs, targets);
  Matrix grad = Matrix::Zero(probs.rows(), probs.cols());
  const double inv = 1.0 / static_cast<double>(labeled);
  for (std::size_t n = 0; n < targets.size(); ++n) {
    const int t = targets[n];
    if (t == kUnlabeled) continue;
    const auto col = static_cast<Eigen::Index>(n);
    const double p = std::max(probs(t, col), 1e-300);
    const double q = 1.0 - p;
    // coef = p * d(loss)/dp
    double coef = -std::pow(q, gamma);
    if (gamma > 0.0 && q > 0.0) coef += gamma * std::pow(q, gamma - 1.0) * p * std::log(p);
    grad.col(col) = -coef * probs.col(col);
    grad(t, col) += coef;
    grad.col(col) *= inv;
  }
  return grad;
}

HfaLossReport hfa_loss(const EmbeddingMap& original, const Reintegration& augmented,
                       const std::vector<ClassDistribution>& distributions,
                       const AugmentationPool& pool, const MlrClassifier& classifier,
                       const HfaLossConfig& cfg, HfaGradient* grad) {
  const EmbeddingMap& aug = augmented.map;
  if (aug.coords.rows() != original.coords.rows() || aug.coords.cols() != original.coords.cols() ||
      aug.labels != original.labels) {
    throw InvalidArgument("hfa_loss: original and augmented maps differ in shape or labels");
  }
  const Curvature& k = original.curvature;
  const auto classes = cells_by_class(original);
  auto dist_for = [&](int cls) -> const ClassDistribution& {
    for (const ClassDistribution& d : distributions) {
      if (d.class_id == cls) return d;
    }
    throw InvalidArgument("hfa_loss: no distribution for labeled class " + std::to_string(cls));
  };
  for (const auto& kv : classes) (void)dist_for(kv.first);

  HfaLossReport r;
  const Matrix p_orig = classifier.probabilities(original.coords);
  const Matrix p_aug = classifier.probabilities(aug.coords);
  r.orig_cls = focal_loss(p_orig, original.labels, cfg.focal_gamma);
  r.aug_cls = focal_loss(p_aug, aug.labels, cfg.focal_gamma);

  // Diversity: negated mean pairwise distance among each class's samples.
  {
    double sum = 0.0;
    int counted = 0;
    for (const auto& [cls, entries] : pool.entries) {
      const std::vector<BallPoint> s = pool.sampled(cls);
      if (s.size() < 2) continue;
      double pair_sum = 0.0;
      int pairs = 0;
      for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t j = i + 1; j < s.size(); ++j) {
          pair_sum += gk::distance(s[i].coords, s[j].coords, k);
          ++pairs;
        }
      }
      sum += pair_sum / pairs;
      ++counted;
    }
    r.div = counted ? -sum / counted : 0.0;
  }

  if (grad) {
    const Eigen::Index d = original.coords.rows();
    grad->d_coords = Matrix::Zero(d, original.size());
    grad->d_offsets = Matrix::Zero(d, classifier.classes());
    grad->d_normals = Matrix::Zero(d, classifier.classes());
  }

  // Prototype anchoring: distance from each class mean to the gyromidpoint of
  // the class's real embeddings.
  {
    double sum = 0.0;
    for (const auto& [cls, cells] : classes) {
      std::vector<Vector> pts;
      pts.reserve(cells.size());
      for (int c : cells) pts.push_back(original.coords.col(c));
      const std::vector<double> ws(pts.size(), 1.0);
      const Vector m = gk::gyromidpoint(pts, ws, k);
      const Vector& mu = dist_for(cls).mean.coords;
      sum += gk::distance(mu, m, k);
      if (grad && cfg.use_proto_reg && cfg.lambda_proto_reg != 0.0) {
        const double scale = cfg.lambda_proto_reg / static_cast<double>(classes.size());
        const Vector d_m = scale * geometry::grad::distance_grad_y(mu, m, k);
        const std::vector<Vector> g = geometry::grad::gyromidpoint_vjp(pts, ws, d_m, k);
        for (std::size_t i = 0; i < cells.size(); ++i) grad->d_coords.col(cells[i]) += g[i];
      }
    }
    r.proto_reg = classes.empty() ? 0.0 : sum / static_cast<double>(classes.size());
  }

  {
    double sum = 0.0;
    for (const ClassDistribution& dist : distributions) {
      const double excess = std::max(0.0, gk::hyperbolic_radius(dist.mean.coords, k) - cfg.radius_max);
      double var_excess = 0.0;
      for (Eigen::Index i = 0; i < dist.log_diag_cov.size(); ++i) {
        var_excess += std::max(0.0, std::exp(dist.log_diag_cov[i]) - distributions::kMaxVariance);
      }
      sum += excess * excess + var_excess;
    }
    r.mean_var = distributions.empty() ? 0.0 : sum / static_cast<double>(distributions.size());
  }

  r.total = r.orig_cls + r.aug_cls;
  if (cfg.use_div) r.total += cfg.lambda_div * r.div;
  if (cfg.use_proto_reg) r.total += cfg.lambda_proto_reg * r.proto_reg;
  if (cfg.use_mean_var) r.total += cfg.lambda_mean_var * r.mean_var;

  if (grad) {
    const auto g_orig = geometry::grad::mlr_backward(
        original.coords, classifier.offsets, classifier.normals, k,
        focal_loss_logit_grad(p_orig, original.labels, cfg.focal_gamma));
    const auto g_aug = geometry::grad::mlr_backward(
        aug.coords, classifier.offsets, classifier.normals, k,
        focal_loss_logit_grad(p_aug, aug.labels, cfg.focal_gamma));
    grad->d_coords += g_orig.d_points + reintegration_vjp(original, augmented, g_aug.d_points);
    grad->d_offsets += g_orig.d_offsets + g_aug.d_offsets;
    grad->d_normals += g_orig.d_normals + g_aug.d_normals;
  }
  return r;
}

}  // namespace hyperada::augmentation
