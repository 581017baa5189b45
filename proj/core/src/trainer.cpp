#include "hyperada/trainer.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <map>
#include <set>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "hyperada/data_io.hpp"
#include "hyperada/errors.hpp"
#include "hyperada/geometry_grad.hpp"

namespace hyperada::trainer {

namespace gk = geometry::kernel;
namespace gg = geometry::grad;
using augmentation::EmbeddingMap;
using augmentation::MlrClassifier;
using distributions::ClassDistribution;

// ---------------------------------------------------------------------------
// Features.

int feature_size(Modality m) { return m == Modality::kRgb ? kRgbFeatures : kLidarFeatures; }

Matrix rgb_features(const LabeledImage& image) {
  image.validate();
  if (image.channels != 3) throw InvalidArgument("rgb_features: expected 3 channels");
  const int h = image.height;
  const int w = image.width;
  Matrix out(kRgbFeatures, static_cast<Eigen::Index>(image.pixels()));
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const Eigen::Index col = static_cast<Eigen::Index>(r) * w + c;
      Eigen::Index f = 0;
      for (int dr = -1; dr <= 1; ++dr) {
        const int rr = std::clamp(r + dr, 0, h - 1);
        for (int dc = -1; dc <= 1; ++dc) {
          const int cc = std::clamp(c + dc, 0, w - 1);
          for (int ch = 0; ch < 3; ++ch) out(f++, col) = image.at(rr, cc, ch) - 0.5;
        }
      }
      out(f, col) = h > 1 ? static_cast<double>(r) / (h - 1) - 0.5 : 0.0;
    }
  }
  return out;
}

Matrix lidar_features(const LabeledCloud& cloud, double voxel_size) {
  const auto grid = acquisition::VoxelGrid::build(cloud.points, voxel_size);
  Matrix out(kLidarFeatures, static_cast<Eigen::Index>(cloud.size()));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const CloudPoint& p = cloud.points[i];
    const auto count = grid.voxels[static_cast<std::size_t>(grid.point_voxel[i])].size();
    const auto col = static_cast<Eigen::Index>(i);
    out(0, col) = p.x / 20.0;
    out(1, col) = p.y / 20.0;
    out(2, col) = p.z / 2.0;
    out(3, col) = p.intensity;
    out(4, col) = std::log1p(static_cast<double>(count)) / 2.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model.

TinyEncoder TinyEncoder::zeros(int features, int hidden, int dim) {
  TinyEncoder e;
  e.w1 = Matrix::Zero(hidden, features);
  e.b1 = Vector::Zero(hidden);
  e.w2 = Matrix::Zero(dim, hidden);
  e.b2 = Vector::Zero(dim);
  return e;
}

TinyEncoder TinyEncoder::random(int features, int hidden, int dim, Rng& rng) {
  TinyEncoder e = zeros(features, hidden, dim);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(features));
  const double s2 = 0.5 / std::sqrt(static_cast<double>(hidden));
  for (Eigen::Index i = 0; i < e.w1.size(); ++i) e.w1.data()[i] = s1 * rng.normal();
  for (Eigen::Index i = 0; i < e.w2.size(); ++i) e.w2.data()[i] = s2 * rng.normal();
  return e;
}

Model Model::create(Modality m, int hidden, int dim, int classes, const Curvature& k, Rng& rng) {
  Model model;
  model.encoder = TinyEncoder::random(feature_size(m), hidden, dim, rng);
  model.classifier.curvature = k;
  model.classifier.offsets = Matrix::Zero(dim, classes);
  model.classifier.normals.resize(dim, classes);
  for (Eigen::Index i = 0; i < model.classifier.normals.size(); ++i) {
    model.classifier.normals.data()[i] = 0.5 * rng.normal();
  }
  return model;
}

Model Model::zeros_like() const {
  Model z;
  z.encoder = TinyEncoder::zeros(static_cast<int>(encoder.w1.cols()), static_cast<int>(encoder.w1.rows()),
                                 static_cast<int>(encoder.w2.rows()));
  z.classifier.curvature = classifier.curvature;
  z.classifier.offsets = Matrix::Zero(classifier.offsets.rows(), classifier.offsets.cols());
  z.classifier.normals = Matrix::Zero(classifier.normals.rows(), classifier.normals.cols());
  return z;
}

namespace {

template <typename F>
void for_each_block(const Model& m, F&& f) {
  f(m.encoder.w1.data(), m.encoder.w1.size());
  f(m.encoder.b1.data(), m.encoder.b1.size());
  f(m.encoder.w2.data(), m.encoder.w2.size());
  f(m.encoder.b2.data(), m.encoder.b2.size());
  f(m.classifier.offsets.data(), m.classifier.offsets.size());
  f(m.classifier.normals.data(), m.classifier.normals.size());
}

template <typename F>
void for_each_block(Model& m, F&& f) {
  f(m.encoder.w1.data(), m.encoder.w1.size());
  f(m.encoder.b1.data(), m.encoder.b1.size());
  f(m.encoder.w2.data(), m.encoder.w2.size());
  f(m.encoder.b2.data(), m.encoder.b2.size());
  f(m.classifier.offsets.data(), m.classifier.offsets.size());
  f(m.classifier.normals.data(), m.classifier.normals.size());
}

}  // namespace

Eigen::Index Model::parameter_count() const {
  Eigen::Index n = 0;
  for_each_block(*this, [&](const double*, Eigen::Index size) { n += size; });
  return n;
}

Vector Model::flatten() const {
  Vector out(parameter_count());
  Eigen::Index at = 0;
  for_each_block(*this, [&](const double* p, Eigen::Index size) {
    std::copy_n(p, size, out.data() + at);
    at += size;
  });
  return out;
}

void Model::unflatten(const Vector& flat) {
  if (flat.size() != parameter_count()) throw InvalidArgument("model parameter count mismatch");
  Eigen::Index at = 0;
  for_each_block(*this, [&](double* p, Eigen::Index size) {
    std::copy_n(flat.data() + at, size, p);
    at += size;
  });
}

ForwardCache forward(const Model& model, const Matrix& features) {
  const TinyEncoder& e = model.encoder;
  if (features.rows() != e.w1.cols()) {
    throw InvalidArgument("forward: expected " + std::to_string(e.w1.cols()) + " features, got " +
                          std::to_string(features.rows()));
  }
  const Curvature& k = model.classifier.curvature;
  ForwardCache c;
  c.features = features;
  c.hidden = ((e.w1 * features).colwise() + e.b1).array().tanh().matrix();
  c.tangent = (e.w2 * c.hidden).colwise() + e.b2;
  c.points = gg::exp_map0_forward(c.tangent, k);
  c.logits = gg::mlr_forward(c.points, model.classifier.offsets, model.classifier.normals, k);
  c.probs = augmentation::softmax_columns(c.logits);
  return c;
}

void backward(const Model& model, const ForwardCache& cache, const Matrix& d_points,
              const Matrix& d_logits, Model& grad) {
  const Curvature& k = model.classifier.curvature;
  const auto g = gg::mlr_backward(cache.points, model.classifier.offsets, model.classifier.normals, k,
                                  d_logits);
  grad.classifier.offsets += g.d_offsets;
  grad.classifier.normals += g.d_normals;
  Matrix d_p = g.d_points;
  if (d_points.size() != 0) d_p += d_points;
  const Matrix d_t = gg::exp_map0_backward(cache.tangent, d_p, k);
  grad.encoder.w2 += d_t * cache.hidden.transpose();
  grad.encoder.b2 += d_t.rowwise().sum();
  const Matrix d_h =
      ((model.encoder.w2.transpose() * d_t).array() * (1.0 - cache.hidden.array().square())).matrix();
  grad.encoder.w1 += d_h * cache.features.transpose();
  grad.encoder.b1 += d_h.rowwise().sum();
}

namespace {

std::vector<int> argmax_columns(const Matrix& m) {
  std::vector<int> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index n = 0; n < m.cols(); ++n) {
    Eigen::Index best;
    m.col(n).maxCoeff(&best);
    out[static_cast<std::size_t>(n)] = static_cast<int>(best);
  }
  return out;
}

bool any_labeled(const std::vector<int>& labels) {
  return std::any_of(labels.begin(), labels.end(), [](int l) { return l != kUnlabeled; });
}

}  // namespace

std::vector<int> predict(const Model& model, const Matrix& features) {
  return argmax_columns(forward(model, features).logits);
}

// ---------------------------------------------------------------------------
// Configuration.

TrainingConfig TrainingConfig::rgb_default() {
  TrainingConfig c;
  c.modality = Modality::kRgb;
  c.solver = distributions::OdeSolverConfig::rgb_default();
  return c;
}

TrainingConfig TrainingConfig::lidar_default() {
  TrainingConfig c;
  c.modality = Modality::kLidar;
  c.solver = distributions::OdeSolverConfig::lidar_default();
  c.use_mixup = false;
  return c;
}

void TrainingConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw InvalidArgument(std::string("training config: ") + what);
  };
  require(embedding_dim >= 1, "embedding_dim must be >= 1");
  require(hidden >= 1, "hidden must be >= 1");
  require(num_classes >= 2, "num_classes must be >= 2");
  require(kappa < 0.0, "kappa must be negative");
  require(pretrain_steps >= 0, "pretrain_steps must be >= 0");
  require(steps_per_round >= 1, "steps_per_round must be >= 1");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
  require(grad_clip > 0.0, "grad_clip must be positive");
  require(lambda_hfa >= 0.0, "lambda_hfa must be >= 0");
  require(focal_gamma >= 0.0, "focal_gamma must be >= 0");
  require(refresh_every >= 1, "refresh_every must be >= 1");
  require(tau_percentile >= 0.0 && tau_percentile <= 100.0, "tau_percentile must lie in [0, 100]");
  require(polarmix_rotations >= 1, "polarmix_rotations must be >= 1");
  require(target_only_phase_start > 0.0 && target_only_phase_start <= 1.0,
          "target_only_phase_start must lie in (0, 1]");
  require(voxel_size > 0.0, "voxel_size must be positive");
  require(mixup.beta_alpha > 0.0, "mixup beta_alpha must be positive");
}

namespace {

std::string direction_name(mixing::DacsDirection d) {
  return d == mixing::DacsDirection::kTargetOntoSource ? "target_onto_source" : "source_onto_target";
}

mixing::DacsDirection direction_from_name(const std::string& s) {
  if (s == "target_onto_source") return mixing::DacsDirection::kTargetOntoSource;
  if (s == "source_onto_target") return mixing::DacsDirection::kSourceOntoTarget;
  throw InvalidArgument("unknown dacs direction '" + s + "'");
}

}  // namespace

void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = nlohmann::json{
      {"modality", to_string(c.modality)},
      {"seed", c.seed},
      {"embedding_dim", c.embedding_dim},
      {"hidden", c.hidden},
      {"num_classes", c.num_classes},
      {"kappa", c.kappa},
      {"pretrain_steps", c.pretrain_steps},
      {"steps_per_round", c.steps_per_round},
      {"learning_rate", c.learning_rate},
      {"momentum", c.momentum},
      {"grad_clip", c.grad_clip},
      {"lambda_hfa", c.lambda_hfa},
      {"use_hfa", c.use_hfa},
      {"use_mixup", c.use_mixup},
      {"use_focal", c.use_focal},
      {"use_mixing", c.use_mixing},
      {"focal_gamma", c.focal_gamma},
      {"lambda_div", c.hfa.lambda_div},
      {"lambda_proto_reg", c.hfa.lambda_proto_reg},
      {"lambda_mean_var", c.hfa.lambda_mean_var},
      {"radius_max", c.hfa.radius_max},
      {"schedule_w0", c.schedule.w0},
      {"schedule_w1", c.schedule.w1},
      {"mixup_alpha", c.mixup.beta_alpha},
      {"refresh_every", c.refresh_every},
      {"ode_mode", distributions::to_string(c.solver.mode)},
      {"ode_dt", c.solver.dt},
      {"ode_steps", c.solver.steps},
      {"ode_rel_tol", c.solver.rel_tol},
      {"ode_abs_tol", c.solver.abs_tol},
      {"tau_percentile", c.tau_percentile},
      {"dacs_direction", direction_name(c.dacs_direction)},
      {"polarmix_rotations", c.polarmix_rotations},
      {"polarmix_gate", c.polarmix_gate},
      {"lidar_alternate", c.lidar_alternate},
      {"target_only_phase_start", c.target_only_phase_start},
      {"voxel_size", c.voxel_size},
  };
}

TrainingConfig training_config_from_json(const nlohmann::json& j, TrainingConfig c) {
  if (!j.is_object()) throw InvalidArgument("training config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "modality") c.modality = modality_from_string(v.get<std::string>());
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "embedding_dim") c.embedding_dim = v.get<int>();
      else if (key == "hidden") c.hidden = v.get<int>();
      else if (key == "num_classes") c.num_classes = v.get<int>();
      else if (key == "kappa") c.kappa = v.get<double>();
      else if (key == "pretrain_steps") c.pretrain_steps = v.get<int>();
      else if (key == "steps_per_round") c.steps_per_round = v.get<int>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "momentum") c.momentum = v.get<double>();
      else if (key == "grad_clip") c.grad_clip = v.get<double>();
      else if (key == "lambda_hfa") c.lambda_hfa = v.get<double>();
      else if (key == "use_hfa") c.use_hfa = v.get<bool>();
      else if (key == "use_mixup") c.use_mixup = v.get<bool>();
      else if (key == "use_focal") c.use_focal = v.get<bool>();
      else if (key == "use_mixing") c.use_mixing = v.get<bool>();
      else if (key == "focal_gamma") c.focal_gamma = v.get<double>();
      else if (key == "lambda_div") c.hfa.lambda_div = v.get<double>();
      else if (key == "lambda_proto_reg") c.hfa.lambda_proto_reg = v.get<double>();
      else if (key == "lambda_mean_var") c.hfa.lambda_mean_var = v.get<double>();
      else if (key == "radius_max") c.hfa.radius_max = v.get<double>();
      else if (key == "schedule_w0") c.schedule.w0 = v.get<double>();
      else if (key == "schedule_w1") c.schedule.w1 = v.get<double>();
      else if (key == "mixup_alpha") c.mixup.beta_alpha = v.get<double>();
      else if (key == "refresh_every") c.refresh_every = v.get<int>();
      else if (key == "ode_mode") c.solver.mode = distributions::ode_mode_from_string(v.get<std::string>());
      else if (key == "ode_dt") c.solver.dt = v.get<double>();
      else if (key == "ode_steps") c.solver.steps = v.get<int>();
      else if (key == "ode_rel_tol") c.solver.rel_tol = v.get<double>();
      else if (key == "ode_abs_tol") c.solver.abs_tol = v.get<double>();
      else if (key == "tau_percentile") c.tau_percentile = v.get<double>();
      else if (key == "dacs_direction") c.dacs_direction = direction_from_name(v.get<std::string>());
      else if (key == "polarmix_rotations") c.polarmix_rotations = v.get<int>();
      else if (key == "polarmix_gate") c.polarmix_gate = v.get<bool>();
      else if (key == "lidar_alternate") c.lidar_alternate = v.get<bool>();
      else if (key == "target_only_phase_start") c.target_only_phase_start = v.get<double>();
      else if (key == "voxel_size") c.voxel_size = v.get<double>();
      else throw InvalidArgument("training config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

void to_json(nlohmann::json& j, const LossReport& r) {
  j = nlohmann::json{
      {"step", r.step},
      {"l_src", r.l_src},
      {"l_tgt", r.l_tgt},
      {"l_hfa", r.l_hfa},
      {"hfa_orig_cls", r.hfa_parts.orig_cls},
      {"hfa_aug_cls", r.hfa_parts.aug_cls},
      {"hfa_div", r.hfa_parts.div},
      {"hfa_proto_reg", r.hfa_parts.proto_reg},
      {"hfa_mean_var", r.hfa_parts.mean_var},
      {"l_mix", r.l_mix},
      {"lambda_hfa", r.lambda_hfa},
      {"total", r.total},
      {"hfa_applied", r.hfa_applied},
      {"mix_applied", r.mix_applied},
  };
}

// ---------------------------------------------------------------------------
// Loss.

LossReport evaluate_step(const Model& model, const StepPlan& plan, const TrainingConfig& cfg,
                         Model* grad) {
  const Eigen::Index features = model.encoder.w1.cols();
  const Eigen::Index ns = plan.source.features.cols();
  const Eigen::Index nt = plan.target.features.cols();
  if ((ns > 0 && plan.source.features.rows() != features) ||
      (nt > 0 && plan.target.features.rows() != features) ||
      static_cast<Eigen::Index>(plan.source.labels.size()) != ns ||
      static_cast<Eigen::Index>(plan.target.labels.size()) != nt) {
    throw InvalidArgument("evaluate_step: batch shapes disagree with the model");
  }
  const Eigen::Index n = ns + nt;
  const double gamma = cfg.gamma();
  const Curvature& k = model.classifier.curvature;
  const Eigen::Index classes = model.classifier.classes();

  if (grad) *grad = model.zeros_like();
  LossReport rep;
  rep.lambda_hfa = cfg.lambda_hfa;

  if (n > 0) {
    Matrix x(features, n);
    if (ns > 0) x.leftCols(ns) = plan.source.features;
    if (nt > 0) x.rightCols(nt) = plan.target.features;
    std::vector<int> src_labels(static_cast<std::size_t>(n), kUnlabeled);
    std::vector<int> tgt_labels(static_cast<std::size_t>(n), kUnlabeled);
    if (plan.source_term) std::copy(plan.source.labels.begin(), plan.source.labels.end(), src_labels.begin());
    std::copy(plan.target.labels.begin(), plan.target.labels.end(), tgt_labels.begin() + ns);

    const ForwardCache fc = forward(model, x);
    Matrix d_logits = Matrix::Zero(classes, n);
    Matrix d_points = Matrix::Zero(fc.points.rows(), n);

    if (any_labeled(src_labels)) {
      rep.l_src = augmentation::focal_loss(fc.probs, src_labels, gamma);
      if (grad) d_logits += augmentation::focal_loss_logit_grad(fc.probs, src_labels, gamma);
    }
    if (any_labeled(tgt_labels)) {
      rep.l_tgt = augmentation::focal_loss(fc.probs, tgt_labels, gamma);
      if (grad) d_logits += augmentation::focal_loss_logit_grad(fc.probs, tgt_labels, gamma);
    }

    if (plan.apply_hfa) {
      std::set<int> known;
      for (const ClassDistribution& d : plan.distributions) known.insert(d.class_id);
      std::vector<int> hfa_labels(static_cast<std::size_t>(n), kUnlabeled);
      for (std::size_t i = 0; i < hfa_labels.size(); ++i) {
        const int l = src_labels[i] != kUnlabeled ? src_labels[i] : tgt_labels[i];
        if (l != kUnlabeled && known.contains(l)) hfa_labels[i] = l;
      }
      if (any_labeled(hfa_labels)) {
        EmbeddingMap map;
        map.coords = fc.points;
        map.labels = std::move(hfa_labels);
        map.curvature = k;
        map.height = 1;
        map.width = static_cast<int>(n);
        Rng rng(plan.augmentation_seed);
        const auto sampled = augmentation::interpolate(map, plan.pool, cfg.schedule, plan.t_frac, rng);
        const auto mixed = cfg.use_mixup ? augmentation::hyperbolic_mixup(map, cfg.mixup, rng)
                                         : augmentation::AugmentedSet{};
        const auto reint = augmentation::reintegrate(map, sampled, mixed, rng);
        augmentation::HfaLossConfig hcfg = cfg.hfa;
        hcfg.focal_gamma = gamma;
        hcfg.lambda_hfa = cfg.lambda_hfa;
        augmentation::HfaGradient hg;
        rep.hfa_parts = augmentation::hfa_loss(map, reint, plan.distributions, plan.pool,
                                               model.classifier, hcfg, grad ? &hg : nullptr);
        rep.l_hfa = rep.hfa_parts.total;
        rep.hfa_applied = true;
        if (grad) {
          d_points += cfg.lambda_hfa * hg.d_coords;
          grad->classifier.offsets += cfg.lambda_hfa * hg.d_offsets;
          grad->classifier.normals += cfg.lambda_hfa * hg.d_normals;
        }
      }
    }
    if (grad) backward(model, fc, d_points, d_logits, *grad);
  }

  if (plan.mix && plan.mix->features.cols() > 0 && any_labeled(plan.mix->labels)) {
    const ForwardCache fc = forward(model, plan.mix->features);
    rep.l_mix = augmentation::focal_loss(fc.probs, plan.mix->labels, gamma);
    rep.mix_applied = true;
    if (grad) {
      backward(model, fc, Matrix(), augmentation::focal_loss_logit_grad(fc.probs, plan.mix->labels, gamma),
               *grad);
    }
  }
  rep.total = rep.recomputed_total();
  return rep;
}

// ---------------------------------------------------------------------------
// Optimisation.

TrainState make_state(const TrainingConfig& cfg) {
  cfg.validate();
  const Rng base = Rng(cfg.seed).fork("init");
  Rng model_rng = base.fork("model");
  Rng flow_rng = base.fork("flow");
  TrainState s;
  s.model = Model::create(cfg.modality, cfg.hidden, cfg.embedding_dim, cfg.num_classes,
                          Curvature(cfg.kappa), model_rng);
  s.velocity = s.model.zeros_like();
  s.flow = distributions::FlowNetwork(cfg.embedding_dim, flow_rng);
  return s;
}

void apply_gradient(TrainState& state, const Model& grad, const TrainingConfig& cfg) {
  Vector g = grad.flatten();
  if (!g.allFinite()) throw NumericalError("non-finite gradient at step " + std::to_string(state.step));
  const double norm = g.norm();
  if (norm > cfg.grad_clip) g *= cfg.grad_clip / norm;
  Vector v = state.velocity.flatten();
  v = cfg.momentum * v + g;
  state.velocity.unflatten(v);
  Vector p = state.model.flatten();
  p -= cfg.learning_rate * v;
  state.model.unflatten(p);
  Matrix& offsets = state.model.classifier.offsets;
  for (Eigen::Index c = 0; c < offsets.cols(); ++c) {
    offsets.col(c) = gk::project(offsets.col(c), state.model.classifier.curvature);
  }
}

namespace {

constexpr std::size_t kMaxPerClass = 256;

distributions::ClassEmbeddings class_embeddings(const Matrix& points, const std::vector<int>& labels) {
  std::map<int, std::vector<int>> cells;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != kUnlabeled) cells[labels[i]].push_back(static_cast<int>(i));
  }
  distributions::ClassEmbeddings out;
  for (const auto& [cls, idx] : cells) {
    const std::size_t stride = (idx.size() + kMaxPerClass - 1) / kMaxPerClass;
    auto& dst = out[cls];
    for (std::size_t i = 0; i < idx.size(); i += stride) dst.push_back(points.col(idx[i]));
  }
  return out;
}

}  // namespace

void refresh_distributions(TrainState& state, const Matrix& points, const std::vector<int>& labels,
                           const TrainingConfig& cfg) {
  const auto split = class_embeddings(points, labels);
  state.distributions =
      distributions::estimate_all(split, state.flow, cfg.solver, state.model.classifier.curvature)
          .distributions;
  state.distributions_step = state.step;
}

void meta_update_flow(TrainState& state, const Matrix& points, const std::vector<int>& labels,
                      const TrainingConfig& cfg, Rng& rng) {
  const auto all = class_embeddings(points, labels);
  distributions::ClassEmbeddings train;
  distributions::ClassEmbeddings val;
  for (const auto& [cls, pts] : all) {
    if (pts.size() < 2) continue;
    for (std::size_t i = 0; i < pts.size(); ++i) (i % 2 == 0 ? train : val)[cls].push_back(pts[i]);
  }
  if (train.empty()) return;
  distributions::MetaHooks hooks;
  const auto result = distributions::meta_update(state.flow, train, val, cfg.solver, hooks,
                                                 state.model.classifier.curvature, rng);
  state.flow = result.net;
}

namespace {

std::vector<int> classes_present(const std::vector<int>& a, const std::vector<int>& b) {
  std::set<int> s;
  for (int l : a) {
    if (l != kUnlabeled) s.insert(l);
  }
  for (int l : b) {
    if (l != kUnlabeled) s.insert(l);
  }
  return {s.begin(), s.end()};
}

/// Fills the HFA part of a plan, refreshing the distributions when stale or
/// missing a class.
void plan_hfa(TrainState& state, StepPlan& plan, const TrainingConfig& cfg, Rng& rng) {
  const std::vector<int> src = plan.source_term ? plan.source.labels : std::vector<int>{};
  const std::vector<int> present = classes_present(src, plan.target.labels);
  if (present.empty()) return;
  std::set<int> known;
  for (const auto& d : state.distributions) known.insert(d.class_id);
  const bool stale = state.distributions_step < 0 ||
                     state.step - state.distributions_step >= cfg.refresh_every ||
                     std::any_of(present.begin(), present.end(), [&](int c) { return !known.contains(c); });
  if (stale) {
    const Eigen::Index ns = plan.source.features.cols();
    const Eigen::Index nt = plan.target.features.cols();
    Matrix x(plan.source.features.rows() > 0 ? plan.source.features.rows() : plan.target.features.rows(),
             ns + nt);
    if (ns > 0) x.leftCols(ns) = plan.source.features;
    if (nt > 0) x.rightCols(nt) = plan.target.features;
    std::vector<int> labels(static_cast<std::size_t>(ns + nt), kUnlabeled);
    std::copy(src.begin(), src.end(), labels.begin());
    std::copy(plan.target.labels.begin(), plan.target.labels.end(), labels.begin() + ns);
    refresh_distributions(state, forward(state.model, x).points, labels, cfg);
    known.clear();
    for (const auto& d : state.distributions) known.insert(d.class_id);
  }
  std::vector<int> pooled;
  for (int c : present) {
    if (known.contains(c)) pooled.push_back(c);
  }
  plan.distributions = state.distributions;
  plan.pool = augmentation::build_pool(state.distributions, pooled, cfg.modality, rng);
  plan.augmentation_seed = rng.engine()();
  plan.apply_hfa = true;
}

LossReport run_plan(TrainState& state, const StepPlan& plan, const TrainingConfig& cfg) {
  Model grad;
  LossReport rep = evaluate_step(state.model, plan, cfg, &grad);
  rep.step = state.step;
  if (rep.total != 0.0 || rep.hfa_applied || rep.mix_applied) apply_gradient(state, grad, cfg);
  ++state.step;
  return rep;
}

CellBatch empty_batch(Modality m) { return {Matrix(feature_size(m), 0), {}}; }

mixing::PseudoLabels halo_pseudo_labels(const Model& model, const Matrix& features, double tau) {
  const ForwardCache fc = forward(model, features);
  const auto scores = acquisition::halo_scores(fc.points, fc.probs, model.classifier.curvature);
  return mixing::pseudo_label(fc.probs, scores, tau);
}

}  // namespace

LossReport train_step_rgb(TrainState& state, const LabeledImage& source, const LabeledImage& target,
                          const TrainingConfig& cfg, double t_frac) {
  Rng rng = Rng(cfg.seed).fork("step").fork(static_cast<std::uint64_t>(state.step));
  StepPlan plan;
  plan.source = {rgb_features(source), source.labels};
  plan.target = {rgb_features(target), target.labels};
  plan.t_frac = std::clamp(t_frac, 0.0, 1.0);

  if (cfg.use_mixing) {
    mixing::PseudoLabels pseudo = halo_pseudo_labels(state.model, plan.target.features, cfg.tau_percentile);
    // Revealed annotations take precedence over pseudo-labels.
    for (std::size_t i = 0; i < pseudo.labels.size(); ++i) {
      if (pseudo.mask[i] && target.labels[i] != kUnlabeled) pseudo.labels[i] = target.labels[i];
    }
    const auto mixed = mixing::dacs_mix(source, target, pseudo, rng, cfg.dacs_direction);
    const bool pasted_any = std::any_of(mixed.paste_mask.begin(), mixed.paste_mask.end(), [](auto m) { return m != 0; });
    // Each pixel keeps the neighbourhood of the image it was cut from, so
    // scattered pastes do not produce patches straddling two scenes.
    const bool onto_source = cfg.dacs_direction == mixing::DacsDirection::kTargetOntoSource;
    const Matrix& pasted = onto_source ? plan.target.features : plan.source.features;
    Matrix features = onto_source ? plan.source.features : plan.target.features;
    for (std::size_t i = 0; i < mixed.paste_mask.size(); ++i) {
      if (mixed.paste_mask[i]) features.col(static_cast<Eigen::Index>(i)) = pasted.col(static_cast<Eigen::Index>(i));
    }
    // An empty mask leaves the source image, already covered by L_src.
    if (pasted_any) plan.mix = CellBatch{std::move(features), mixed.mixed.labels};
  }
  if (cfg.use_hfa) plan_hfa(state, plan, cfg, rng);
  return run_plan(state, plan, cfg);
}

LossReport train_step_lidar(TrainState& state, const LabeledCloud& source, const LabeledCloud& target,
                            const TrainingConfig& cfg, int step_index, int total_steps) {
  if (total_steps < 1 || step_index < 0) throw InvalidArgument("train_step_lidar: bad step index");
  Rng rng = Rng(cfg.seed).fork("step").fork(static_cast<std::uint64_t>(state.step));
  StepPlan plan;
  plan.target = {lidar_features(target, cfg.voxel_size), target.labels};
  const bool target_only =
      static_cast<double>(step_index) >= cfg.target_only_phase_start * static_cast<double>(total_steps);
  if (target_only) {
    plan.source = empty_batch(Modality::kLidar);
    plan.source_term = false;
    return run_plan(state, plan, cfg);
  }
  plan.source = {lidar_features(source, cfg.voxel_size), source.labels};
  plan.t_frac = static_cast<double>(step_index) / total_steps;
  const bool even = step_index % 2 == 0;
  const bool hfa_now = cfg.use_hfa && (!cfg.lidar_alternate || even);
  const bool mix_now = cfg.use_mixing && (!cfg.lidar_alternate || !even);
  if (mix_now) {
    // Target points carry their revealed label, else a pseudo-label (gated
    // by HALO certainty when polarmix_gate is set).
    LabeledCloud pseudo_target = target;
    const double tau = cfg.polarmix_gate ? cfg.tau_percentile : 100.0;
    const auto pseudo = halo_pseudo_labels(state.model, plan.target.features, tau);
    for (std::size_t i = 0; i < pseudo_target.size(); ++i) {
      if (pseudo_target.labels[i] == kUnlabeled) pseudo_target.labels[i] = pseudo.labels[i];
    }
    const auto sector = mixing::sample_sector(rng);
    const auto swapped = mixing::polarmix_sector_swap(source, pseudo_target, sector.theta0, sector.sigma);
    const std::vector<LabeledCloud> sources{source};
    const auto rare = mixing::rare_classes(sources, cfg.num_classes);
    const auto rotations = mixing::sample_rotations(rng, cfg.polarmix_rotations);
    const auto pasted = mixing::polarmix_instance_paste(swapped.cloud, pseudo_target, rare, rotations);
    plan.mix = CellBatch{lidar_features(pasted.cloud, cfg.voxel_size), pasted.cloud.labels};
  }
  if (hfa_now) plan_hfa(state, plan, cfg, rng);
  return run_plan(state, plan, cfg);
}

LossReport pretrain_step(TrainState& state, const CellBatch& source, const TrainingConfig& cfg) {
  StepPlan plan;
  plan.source = source;
  plan.target = empty_batch(cfg.modality);
  return run_plan(state, plan, cfg);
}

// ---------------------------------------------------------------------------
// Evaluation.

MiouResult miou_from_confusion(const std::vector<std::vector<std::uint64_t>>& confusion,
                               const std::vector<std::uint8_t>& subset) {
  const std::size_t c = confusion.size();
  if (!subset.empty() && subset.size() != c) throw InvalidArgument("class subset size mismatch");
  MiouResult r;
  r.confusion = confusion;
  r.iou.assign(c, 0.0);
  r.evaluated.assign(c, 0);
  double sum = 0.0;
  int counted = 0;
  for (std::size_t i = 0; i < c; ++i) {
    if (confusion[i].size() != c) throw InvalidArgument("confusion matrix is not square");
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == i) continue;
      fn += confusion[i][j];
      fp += confusion[j][i];
    }
    const std::uint64_t tp = confusion[i][i];
    const std::uint64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    r.iou[i] = static_cast<double>(tp) / static_cast<double>(denom);
    if (!subset.empty() && !subset[i]) continue;
    r.evaluated[i] = 1;
    sum += r.iou[i];
    ++counted;
  }
  r.mean = counted ? sum / counted : 0.0;
  return r;
}

namespace {

void accumulate(std::vector<std::vector<std::uint64_t>>& confusion, const std::vector<int>& predictions,
                const std::vector<int>& truth) {
  if (predictions.size() != truth.size()) throw InvalidArgument("prediction/truth size mismatch");
  const int c = static_cast<int>(confusion.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i];
    if (t == kUnlabeled) continue;
    const int p = predictions[i];
    if (t < 0 || t >= c || p < 0 || p >= c) throw InvalidArgument("label outside the class range");
    ++confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
}

using Confusion = std::vector<std::vector<std::uint64_t>>;

Confusion empty_confusion(int classes) {
  return Confusion(static_cast<std::size_t>(classes), std::vector<std::uint64_t>(static_cast<std::size_t>(classes), 0));
}

void require_truth(const Confusion& confusion) {
  for (const auto& row : confusion) {
    for (auto v : row) {
      if (v) return;
    }
  }
  throw InvalidArgument("evaluate_miou: ground truth has no labeled cells");
}

}  // namespace

MiouResult evaluate_miou(const std::vector<int>& predictions, const std::vector<int>& truth,
                         int num_classes, const std::vector<std::uint8_t>& subset) {
  if (num_classes < 1) throw InvalidArgument("evaluate_miou: need at least one class");
  Confusion confusion = empty_confusion(num_classes);
  accumulate(confusion, predictions, truth);
  require_truth(confusion);
  return miou_from_confusion(confusion, subset);
}

void to_json(nlohmann::json& j, const MiouResult& r) {
  j = nlohmann::json{{"mean_iou", r.mean},
                     {"iou", r.iou},
                     {"evaluated", r.evaluated},
                     {"confusion", r.confusion}};
}

MiouResult evaluate_rgb(const Model& model, const std::vector<LabeledImage>& images, int num_classes) {
  Confusion confusion = empty_confusion(num_classes);
  for (const LabeledImage& img : images) accumulate(confusion, predict(model, rgb_features(img)), img.labels);
  require_truth(confusion);
  return miou_from_confusion(confusion);
}

MiouResult evaluate_lidar(const Model& model, const std::vector<LabeledCloud>& clouds, int num_classes,
                          double voxel_size) {
  Confusion confusion = empty_confusion(num_classes);
  for (const LabeledCloud& c : clouds) {
    accumulate(confusion, predict(model, lidar_features(c, voxel_size)), c.labels);
  }
  require_truth(confusion);
  return miou_from_confusion(confusion);
}

// ---------------------------------------------------------------------------
// Loops.

namespace {

template <typename T, typename Gen>
Datasets<T> split_world(io::SyntheticWorldConfig world, const DatasetSizes& sizes, Gen&& generate) {
  if (sizes.source < 1 || sizes.target_train < 1 || sizes.target_eval < 1) {
    throw InvalidArgument("every dataset split needs at least one scene");
  }
  world.scene_count = sizes.source + sizes.target_train + sizes.target_eval;
  Datasets<T> d;
  for (int i = 0; i < world.scene_count; ++i) {
    auto pair = generate(world, i);
    if (i < sizes.source) d.source.push_back(std::move(pair.source));
    else if (i < sizes.source + sizes.target_train) d.target_train.push_back(std::move(pair.target));
    else d.target_eval.push_back(std::move(pair.target));
  }
  return d;
}

}  // namespace

RgbDatasets build_rgb_datasets(io::SyntheticWorldConfig world, const DatasetSizes& sizes) {
  return split_world<LabeledImage>(world, sizes, io::generate_rgb_scene);
}

LidarDatasets build_lidar_datasets(io::SyntheticWorldConfig world, const DatasetSizes& sizes) {
  return split_world<LabeledCloud>(world, sizes, io::generate_lidar_scene);
}

TrainState pretrain_rgb(const TrainingConfig& cfg, const RgbDatasets& data) {
  if (data.source.empty()) throw InvalidArgument("pretraining needs source images");
  TrainState state = make_state(cfg);
  std::vector<CellBatch> batches;
  for (const auto& img : data.source) batches.push_back({rgb_features(img), img.labels});
  for (int s = 0; s < cfg.pretrain_steps; ++s) {
    pretrain_step(state, batches[static_cast<std::size_t>(s) % batches.size()], cfg);
  }
  return state;
}

TrainState pretrain_lidar(const TrainingConfig& cfg, const LidarDatasets& data) {
  if (data.source.empty()) throw InvalidArgument("pretraining needs source scans");
  TrainState state = make_state(cfg);
  std::vector<CellBatch> batches;
  for (const auto& c : data.source) batches.push_back({lidar_features(c, cfg.voxel_size), c.labels});
  for (int s = 0; s < cfg.pretrain_steps; ++s) {
    pretrain_step(state, batches[static_cast<std::size_t>(s) % batches.size()], cfg);
  }
  return state;
}

namespace {

template <typename T>
void check_loop_inputs(const TrainingConfig& cfg, const Datasets<T>& data,
                       const acquisition::BudgetPolicy& policy, acquisition::Strategy strategy,
                       Modality m) {
  cfg.validate();
  policy.validate();
  if (cfg.modality != m) throw InvalidArgument("training config modality does not match the data");
  if (policy.modality != m) {
    throw InvalidArgument("budget policy is for " + to_string(policy.modality) + " but the data is " +
                          to_string(m));
  }
  acquisition::check_strategy(strategy, m);
  if (data.source.empty() || data.target_train.empty() || data.target_eval.empty()) {
    throw InvalidArgument("active DA loop needs source, target-train and target-eval sets");
  }
}

/// Labeled embeddings of one source item and every revealed target cell.
template <typename FeatureFn, typename T>
std::pair<Matrix, std::vector<int>> meta_batch(const Model& model, const T& source,
                                               const std::vector<T>& acquired, FeatureFn&& features) {
  std::vector<Matrix> blocks{features(source)};
  std::vector<int> labels = source.labels;
  for (const T& a : acquired) {
    if (!any_labeled(a.labels)) continue;
    blocks.push_back(features(a));
    labels.insert(labels.end(), a.labels.begin(), a.labels.end());
  }
  Eigen::Index n = 0;
  for (const auto& b : blocks) n += b.cols();
  Matrix x(blocks.front().rows(), n);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    x.middleCols(at, b.cols()) = b;
    at += b.cols();
  }
  return {forward(model, x).points, std::move(labels)};
}

}  // namespace

LoopResult active_da_loop_rgb(const TrainingConfig& cfg, const RgbDatasets& data,
                              const acquisition::BudgetPolicy& policy, acquisition::Strategy strategy,
                              const TrainState* pretrained) {
  check_loop_inputs(cfg, data, policy, strategy, Modality::kRgb);
  LoopResult res;
  res.state = pretrained ? *pretrained : pretrain_rgb(cfg, data);
  res.initial_miou = evaluate_rgb(res.state.model, data.target_eval, cfg.num_classes).mean;

  const Rng loop_rng = Rng(cfg.seed).fork("loop");
  const std::size_t n_src = data.source.size();
  const std::size_t n_tgt = data.target_train.size();
  std::vector<LabeledImage> acquired;
  std::vector<acquisition::ScoreMap> maps;
  std::vector<Matrix> target_features;
  for (const auto& img : data.target_train) {
    LabeledImage a = img;
    std::fill(a.labels.begin(), a.labels.end(), kUnlabeled);
    acquired.push_back(std::move(a));
    maps.emplace_back(std::vector<double>(img.pixels(), 0.0));
    target_features.push_back(rgb_features(img));
  }
  const int total_steps = policy.rounds * cfg.steps_per_round;
  const Curvature& k = res.state.model.classifier.curvature;

  for (int r = 0; r < policy.rounds; ++r) {
    Rng round_rng = loop_rng.fork(static_cast<std::uint64_t>(r));
    for (std::size_t i = 0; i < n_tgt; ++i) {
      const ForwardCache fc = forward(res.state.model, target_features[i]);
      std::vector<double> scores;
      if (strategy == acquisition::Strategy::kRandom) {
        scores.resize(data.target_train[i].pixels());
        for (double& s : scores) s = round_rng.uniform();
      } else {
        scores = acquisition::halo_scores(fc.points, fc.probs, k);
      }
      maps[i].scores = scores;
      acquisition::RoundLog log{r, "image", static_cast<int>(i), {}, {}};
      log.ids = acquisition::select_cells(maps[i], policy, r);
      for (int id : log.ids) {
        const auto idx = static_cast<std::size_t>(id);
        acquired[i].labels[idx] = data.target_train[i].labels[idx];
        log.scores.push_back(scores[idx]);
        ++res.revealed;
        ++res.revealed_units;
      }
      res.logs.push_back(std::move(log));
    }
    if (cfg.use_hfa) {
      const auto [points, labels] = meta_batch(res.state.model, data.source[static_cast<std::size_t>(r) % n_src],
                                               acquired, [](const LabeledImage& img) { return rgb_features(img); });
      Rng meta_rng = round_rng.fork("meta");
      meta_update_flow(res.state, points, labels, cfg, meta_rng);
      res.state.distributions_step = -1;
    }
    for (int s = 0; s < cfg.steps_per_round; ++s) {
      const int g = r * cfg.steps_per_round + s;
      const auto gi = static_cast<std::size_t>(g);
      res.losses.push_back(train_step_rgb(res.state, data.source[gi % n_src], acquired[gi % n_tgt], cfg,
                                          static_cast<double>(g) / total_steps));
    }
    res.round_miou.push_back(evaluate_rgb(res.state.model, data.target_eval, cfg.num_classes).mean);
  }
  res.final_miou = evaluate_rgb(res.state.model, data.target_eval, cfg.num_classes);
  return res;
}

LoopResult active_da_loop_lidar(const TrainingConfig& cfg, const LidarDatasets& data,
                                const acquisition::BudgetPolicy& policy, acquisition::Strategy strategy,
                                const TrainState* pretrained) {
  check_loop_inputs(cfg, data, policy, strategy, Modality::kLidar);
  LoopResult res;
  res.state = pretrained ? *pretrained : pretrain_lidar(cfg, data);
  res.initial_miou = evaluate_lidar(res.state.model, data.target_eval, cfg.num_classes, cfg.voxel_size).mean;

  const Rng loop_rng = Rng(cfg.seed).fork("loop");
  const std::size_t n_src = data.source.size();
  const std::size_t n_tgt = data.target_train.size();
  std::vector<LabeledCloud> acquired;
  std::vector<acquisition::VoxelGrid> grids;
  std::vector<Matrix> target_features;
  for (const auto& c : data.target_train) {
    LabeledCloud a = c;
    std::fill(a.labels.begin(), a.labels.end(), kUnlabeled);
    acquired.push_back(std::move(a));
    grids.push_back(acquisition::VoxelGrid::build(c.points, cfg.voxel_size));
    target_features.push_back(lidar_features(c, cfg.voxel_size));
  }
  const int total_steps = policy.rounds * cfg.steps_per_round;
  const Curvature& k = res.state.model.classifier.curvature;
  auto features = [&](const LabeledCloud& c) { return lidar_features(c, cfg.voxel_size); };

  for (int r = 0; r < policy.rounds; ++r) {
    Rng round_rng = loop_rng.fork(static_cast<std::uint64_t>(r));
    for (std::size_t i = 0; i < n_tgt; ++i) {
      const ForwardCache fc = forward(res.state.model, target_features[i]);
      const auto scores = acquisition::voxel_scores(strategy, grids[i], fc.points, fc.probs, k, round_rng);
      acquisition::RoundLog log{r, "scan", static_cast<int>(i), {}, {}};
      log.ids = acquisition::select_voxels(grids[i], scores, policy, r);
      for (int v : log.ids) {
        log.scores.push_back(scores[static_cast<std::size_t>(v)]);
        ++res.revealed_units;
        for (int p : grids[i].voxels[static_cast<std::size_t>(v)]) {
          const auto idx = static_cast<std::size_t>(p);
          acquired[i].labels[idx] = data.target_train[i].labels[idx];
          ++res.revealed;
        }
      }
      res.logs.push_back(std::move(log));
    }
    if (cfg.use_hfa) {
      const auto [points, labels] =
          meta_batch(res.state.model, data.source[static_cast<std::size_t>(r) % n_src], acquired, features);
      Rng meta_rng = round_rng.fork("meta");
      meta_update_flow(res.state, points, labels, cfg, meta_rng);
      res.state.distributions_step = -1;
    }
    for (int s = 0; s < cfg.steps_per_round; ++s) {
      const int g = r * cfg.steps_per_round + s;
      const auto gi = static_cast<std::size_t>(g);
      res.losses.push_back(
          train_step_lidar(res.state, data.source[gi % n_src], acquired[gi % n_tgt], cfg, g, total_steps));
    }
    res.round_miou.push_back(
        evaluate_lidar(res.state.model, data.target_eval, cfg.num_classes, cfg.voxel_size).mean);
  }
  res.final_miou = evaluate_lidar(res.state.model, data.target_eval, cfg.num_classes, cfg.voxel_size);
  return res;
}

// ---------------------------------------------------------------------------
// Hashing and checkpoints.

std::string sha256_hex(std::string_view text) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

namespace {

constexpr std::array<std::uint8_t, 4> kCheckpointMagic{'H', 'Y', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(io::Bytes& out, T v) {
  std::array<std::uint8_t, sizeof(T)> buf;
  std::memcpy(buf.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
  out.insert(out.end(), buf.begin(), buf.end());
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  template <typename T>
  T get(const char* what) {
    if (bytes_.size() - pos_ < sizeof(T)) {
      throw FormatError(std::string("checkpoint truncated reading ") + what, pos_);
    }
    std::array<std::uint8_t, sizeof(T)> buf;
    std::memcpy(buf.data(), bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
    T v;
    std::memcpy(&v, buf.data(), sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Model& model,
                      const std::string& config_hash_hex) {
  if (config_hash_hex.size() != 64) throw InvalidArgument("config hash must be 64 hex digits");
  io::Bytes out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  put(out, kCheckpointVersion);
  for (std::size_t i = 0; i < 64; i += 2) {
    const int hi = hex_value(config_hash_hex[i]);
    const int lo = hex_value(config_hash_hex[i + 1]);
    if (hi < 0 || lo < 0) throw InvalidArgument("config hash is not hexadecimal");
    out.push_back(static_cast<std::uint8_t>(hi * 16 + lo));
  }
  put(out, model.classifier.curvature.kappa());
  const Matrix b1 = model.encoder.b1;
  const Matrix b2 = model.encoder.b2;
  const std::array<const Matrix*, 6> all{&model.encoder.w1, &b1, &model.encoder.w2, &b2,
                                         &model.classifier.offsets, &model.classifier.normals};
  put(out, static_cast<std::uint32_t>(all.size()));
  for (const Matrix* m : all) {
    put(out, static_cast<std::uint32_t>(m->rows()));
    put(out, static_cast<std::uint32_t>(m->cols()));
    for (Eigen::Index i = 0; i < m->size(); ++i) put(out, m->data()[i]);
  }
  io::write_file(path, out);
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  for (std::size_t i = 0; i < kCheckpointMagic.size(); ++i) {
    if (in.get<std::uint8_t>("magic") != kCheckpointMagic[i]) throw FormatError("bad checkpoint magic", i);
  }
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  Checkpoint ck;
  static constexpr char kHex[] = "0123456789abcdef";
  for (int i = 0; i < 32; ++i) {
    const auto b = in.get<std::uint8_t>("config hash");
    ck.config_hash_hex.push_back(kHex[b >> 4]);
    ck.config_hash_hex.push_back(kHex[b & 0xF]);
  }
  const std::size_t kappa_at = in.pos();
  const auto kappa = in.get<double>("kappa");
  if (!(kappa < 0.0) || !std::isfinite(kappa)) throw FormatError("checkpoint curvature must be negative", kappa_at);
  const std::size_t count_at = in.pos();
  if (in.get<std::uint32_t>("block count") != 6) throw FormatError("checkpoint must hold 6 blocks", count_at);
  std::array<Matrix, 6> m;
  for (auto& block : m) {
    const std::size_t at = in.pos();
    const auto rows = in.get<std::uint32_t>("rows");
    const auto cols = in.get<std::uint32_t>("cols");
    const std::uint64_t n = static_cast<std::uint64_t>(rows) * cols;
    if (n * 8 > in.remaining()) throw FormatError("checkpoint block larger than the file", at);
    block.resize(rows, cols);
    for (std::uint64_t i = 0; i < n; ++i) block.data()[i] = in.get<double>("parameter");
  }
  if (in.remaining() != 0) throw FormatError("trailing bytes after checkpoint", in.pos());
  const auto hidden = m[0].rows();
  const auto dim = m[2].rows();
  if (m[1].rows() != hidden || m[1].cols() != 1 || m[2].cols() != hidden || m[3].rows() != dim ||
      m[3].cols() != 1 || m[4].rows() != dim || m[5].rows() != dim || m[4].cols() != m[5].cols() ||
      m[4].cols() < 2) {
    throw FormatError("checkpoint block shapes are inconsistent", count_at);
  }
  ck.model.encoder.w1 = m[0];
  ck.model.encoder.b1 = m[1].col(0);
  ck.model.encoder.w2 = m[2];
  ck.model.encoder.b2 = m[3].col(0);
  ck.model.classifier.curvature = Curvature(kappa);
  ck.model.classifier.offsets = m[4];
  ck.model.classifier.normals = m[5];
  return ck;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const io::Bytes bytes = io::read_file(path);
  try {
    return parse_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

}  // namespace hyperada::trainer
