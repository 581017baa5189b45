// End-to-end acceptance run: one PASS/FAIL line per criterion, exit 0 iff
// all pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyperada/acquisition.hpp"
#include "hyperada/augmentation.hpp"
#include "hyperada/data_io.hpp"
#include "hyperada/errors.hpp"
#include "hyperada/geometry.hpp"
#include "hyperada/mixing.hpp"
#include "hyperada/trainer.hpp"
#include "pipeline.hpp"
#include "run_config.hpp"
#include "selftest.hpp"

namespace {

using namespace hyperada;
namespace kern = geometry::kernel;
using geometry::Curvature;
using geometry::Matrix;
using geometry::Vector;
using Clock = std::chrono::steady_clock;
constexpr double kPi = std::numbers::pi;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

double rel_err(double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-300); }

void note_suite(const cli::SuiteReport& s, std::string& detail) {
  for (const auto& c : s.checks) {
    if (!c.passed) detail += " [" + c.name + ": " + c.detail + "]";
  }
}

// 1. Geometry property suite on 1000 randomized instances.
Outcome criterion_geometry() {
  cli::GeometrySuiteOptions opts;
  opts.instances = 1000;
  const auto t0 = Clock::now();
  const auto s = cli::geometry_suite(opts);
  const double t = seconds_since(t0);
  std::string detail = std::to_string(s.checks.size()) + " invariants, " + std::to_string(t) + " s";
  note_suite(s, detail);
  return {s.passed() && t < 10.0, detail};
}

// 2. Library operations against scalar formulas derived independently.
Outcome criterion_closed_forms() {
  Rng rng(202);
  double worst = 0.0;
  std::string where = "none";
  auto track = [&](double e, const char* what) {
    if (!(e <= worst)) {
      worst = std::isfinite(e) ? e : INFINITY;
      where = what;
    }
  };
  for (int t = 0; t < 1000; ++t) {
    const double c = std::exp(rng.uniform(std::log(0.25), std::log(4.0)));
    const Curvature k(-c);
    const double sc = std::sqrt(c);

    // Collinear weighted gyromidpoint. With x_i = tanh(u_i)/sqrt(c) on one
    // line, lambda_i x_i ~ sinh(2u_i) and lambda_i - 1 = cosh(2u_i), and the
    // half-scaling maps q to tanh(artanh(q)/2).
    Vector dir(3);
    for (auto& v : dir) v = rng.normal();
    dir.normalize();
    const int n = 2 + static_cast<int>(rng.index(4));
    std::vector<Vector> pts;
    std::vector<double> w;
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n; ++i) {
      const double u = rng.uniform(-2.0, 2.0);
      pts.push_back(dir * (std::tanh(u) / sc));
      w.push_back(rng.uniform(0.1, 2.0));
      num += w.back() * std::sinh(2 * u);
      den += w.back() * std::cosh(2 * u);
    }
    const double m_oracle = std::tanh(0.5 * std::atanh(num / den)) / sc;
    const Vector m = kern::gyromidpoint(pts, w, k);
    track(rel_err(m.dot(dir), m_oracle), "gyromidpoint");
    track((m - dir * m.dot(dir)).norm() / std::max(std::abs(m_oracle), 1e-12), "gyromidpoint off-line");

    // Moebius addition in the disk is the complex map (a + b) / (1 + conj(a) b)
    // after scaling by sqrt(c).
    const double ra = 0.95 * rng.uniform(), rb = 0.95 * rng.uniform();
    const std::complex<double> a = std::polar(ra, rng.uniform(0.0, 2 * kPi));
    const std::complex<double> b = std::polar(rb, rng.uniform(0.0, 2 * kPi));
    const std::complex<double> sum = (a + b) / (1.0 + std::conj(a) * b);
    const Vector x = Vector{{a.real() / sc, a.imag() / sc}};
    const Vector y = Vector{{b.real() / sc, b.imag() / sc}};
    const Vector s = kern::mobius_add(x, y, k);
    track(std::abs(std::complex<double>(s[0], s[1]) * sc - sum) / std::abs(sum), "mobius_add");

    // Distance through the arccosh form.
    const double dx = (x - y).squaredNorm();
    const double d_oracle =
        std::acosh(1.0 + 2.0 * c * dx / ((1.0 - c * x.squaredNorm()) * (1.0 - c * y.squaredNorm()))) / sc;
    track(rel_err(kern::distance(x, y, k), d_oracle), "distance");
  }

  for (int t = 0; t < 300; ++t) {
    // Focal loss and entropy on random distributions.
    const int classes = 2 + static_cast<int>(rng.index(6));
    const int cells = 1 + static_cast<int>(rng.index(20));
    Matrix probs(classes, cells);
    std::vector<int> targets(cells);
    for (int j = 0; j < cells; ++j) {
      for (int i = 0; i < classes; ++i) probs(i, j) = rng.uniform(0.01, 1.0);
      probs.col(j) /= probs.col(j).sum();
      targets[j] = static_cast<int>(rng.index(classes));
    }
    const double gamma = std::vector<double>{0.0, 0.5, 1.0, 2.0, 5.0}[rng.index(5)];
    long double focal = 0.0L;
    for (int j = 0; j < cells; ++j) {
      const long double p = probs(targets[j], j);
      focal += -std::exp(static_cast<long double>(gamma) * std::log1p(-p)) * std::log(p);
    }
    focal /= cells;
    track(rel_err(augmentation::focal_loss(probs, targets, gamma), static_cast<double>(focal)), "focal");
    long double h = 0.0L;
    for (int i = 0; i < classes; ++i) h -= static_cast<long double>(probs(i, 0)) * std::log(static_cast<long double>(probs(i, 0)));
    track(rel_err(acquisition::entropy(probs.col(0)), static_cast<double>(h)), "entropy");

    // VCD via log n - (1/n) sum c log c over sorted runs of labels.
    std::vector<CloudPoint> pts;
    std::vector<int> pred;
    for (int i = 0; i < 200; ++i) {
      pts.push_back({rng.uniform(0, 1), rng.uniform(0, 1), 0.1, 0.0});
      pred.push_back(static_cast<int>(rng.index(1 + t % 5)));
    }
    const auto grid = acquisition::VoxelGrid::build(pts, 0.5);
    const auto v = acquisition::vcd(grid, pred);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      std::vector<int> labels;
      for (int p : grid.voxels[g]) labels.push_back(pred[p]);
      std::sort(labels.begin(), labels.end());
      const double nv = static_cast<double>(labels.size());
      double acc = 0.0;
      for (std::size_t i = 0; i < labels.size();) {
        std::size_t j = i;
        while (j < labels.size() && labels[j] == labels[i]) ++j;
        const double cnt = static_cast<double>(j - i);
        acc += cnt * std::log(cnt);
        i = j;
      }
      const double oracle = std::log(nv) - acc / nv;
      track(oracle < 1e-12 ? std::abs(v[g] - oracle) : rel_err(v[g], oracle), "vcd");
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "worst relative error %.3e (%s)", worst, where.c_str());
  return {worst <= 1e-9, buf};
}

// 3. Solver convergence orders and the fixed Euler closed form.
Outcome criterion_solvers() {
  const auto s = cli::solver_suite();
  std::string detail = std::to_string(s.checks.size()) + " checks";
  note_suite(s, detail);
  return {s.passed(), detail};
}

// 4. MLR head and end-to-end total-loss gradients by central differences.
double end_to_end_gradient_error(Modality m, std::uint64_t seed) {
  using namespace trainer;
  TrainingConfig cfg = m == Modality::kRgb ? TrainingConfig::rgb_default() : TrainingConfig::lidar_default();
  cfg.seed = seed;
  TrainState state = make_state(cfg);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < state.model.classifier.offsets.size(); ++i) {
    state.model.classifier.offsets.data()[i] = 0.1 * rng.normal();
  }
  auto batch = [&](bool half_labeled) {
    CellBatch b;
    if (m == Modality::kRgb) {
      LabeledImage img(4, 4, 3);
      for (float& v : img.data) v = static_cast<float>(rng.uniform());
      for (int& l : img.labels) l = static_cast<int>(rng.index(5));
      b = {rgb_features(img), img.labels};
    } else {
      LabeledCloud c;
      for (int i = 0; i < 64; ++i) {
        c.points.push_back({rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-1, 1), rng.uniform()});
        c.labels.push_back(static_cast<int>(rng.index(5)));
      }
      b = {lidar_features(c), c.labels};
    }
    if (half_labeled) {
      for (std::size_t i = 0; i < b.labels.size(); i += 2) b.labels[i] = kUnlabeled;
    }
    return b;
  };
  StepPlan plan;
  plan.source = batch(false);
  plan.target = batch(true);
  plan.mix = batch(false);
  Matrix all(plan.source.features.rows(), plan.source.features.cols() + plan.target.features.cols());
  all << plan.source.features, plan.target.features;
  std::vector<int> labels = plan.source.labels;
  labels.insert(labels.end(), plan.target.labels.begin(), plan.target.labels.end());
  refresh_distributions(state, forward(state.model, all).points, labels, cfg);
  std::vector<int> present;
  for (const auto& d : state.distributions) present.push_back(d.class_id);
  plan.distributions = state.distributions;
  plan.pool = augmentation::build_pool(state.distributions, present, m, rng);
  plan.augmentation_seed = seed + 1;
  plan.apply_hfa = true;
  plan.t_frac = 0.3;

  Model grad;
  const LossReport rep = evaluate_step(state.model, plan, cfg, &grad);
  if (!rep.hfa_applied || !rep.mix_applied) return INFINITY;
  const Vector analytic = grad.flatten();
  const Vector base = state.model.flatten();
  Vector numeric(base.size());
  Model probe = state.model;
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < base.size(); ++i) {
    Vector p = base;
    p[i] += h;
    probe.unflatten(p);
    const double up = evaluate_step(probe, plan, cfg).total;
    p[i] -= 2 * h;
    probe.unflatten(p);
    numeric[i] = (up - evaluate_step(probe, plan, cfg).total) / (2 * h);
  }
  return (analytic - numeric).norm() / numeric.norm();
}

Outcome criterion_gradients() {
  const auto s = cli::loss_suite();
  double worst = 0.0;
  for (Modality m : {Modality::kRgb, Modality::kLidar}) {
    for (std::uint64_t seed : {1, 2, 3}) worst = std::max(worst, end_to_end_gradient_error(m, seed));
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "head checks %s, end-to-end worst relative error %.3e",
                s.passed() ? "pass" : "fail", worst);
  std::string detail = buf;
  note_suite(s, detail);
  return {s.passed() && worst <= 1e-4, detail};
}

// 5. Budget arithmetic and reselection.
Outcome criterion_budget() {
  Rng rng(505);
  std::string detail;
  bool ok = true;
  for (std::size_t n : {97u, 1000u, 12345u}) {
    acquisition::ScoreMap map(std::vector<double>(n, 0.0));
    const auto policy = acquisition::BudgetPolicy::rgb_default();
    std::set<int> seen;
    std::size_t total = 0;
    for (int r = 0; r < policy.rounds; ++r) {
      for (auto& s : map.scores) s = rng.uniform();
      const auto ids = acquisition::select_cells(map, policy, r);
      total += ids.size();
      seen.insert(ids.begin(), ids.end());
    }
    const auto want = static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(n)));
    ok = ok && total == want && seen.size() == want;
    detail += "N=" + std::to_string(n) + ": " + std::to_string(total) + "/" + std::to_string(want) + " ";
  }
  int scans_ok = 0;
  for (int scan = 0; scan < 20; ++scan) {
    std::vector<CloudPoint> pts;
    for (int i = 0; i < 400; ++i) pts.push_back({rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-1, 1), 0.0});
    auto grid = acquisition::VoxelGrid::build(pts);
    const auto policy = acquisition::BudgetPolicy::lidar_default();
    std::set<int> chosen;
    std::size_t total = 0;
    for (int r = 0; r < policy.rounds; ++r) {
      std::vector<double> scores(grid.size());
      for (auto& s : scores) s = rng.uniform();
      const auto ids = acquisition::select_voxels(grid, scores, policy, r);
      total += ids.size();
      chosen.insert(ids.begin(), ids.end());
    }
    scans_ok += total == 5 && chosen.size() == 5;
  }
  ok = ok && scans_ok == 20;
  detail += "| " + std::to_string(scans_ok) + "/20 scans with 5 distinct voxels";
  return {ok, detail};
}

// 6. Brute-force audits of DACS provenance and PolarMix membership.
Outcome criterion_mixing() {
  Rng rng(606);
  std::size_t dacs_bad = 0, sector_bad = 0;
  for (int pair = 0; pair < 100; ++pair) {
    const int h = 2 + static_cast<int>(rng.index(12)), w = 2 + static_cast<int>(rng.index(12));
    LabeledImage src(h, w, 3), tgt(h, w, 3);
    for (LabeledImage* img : {&src, &tgt}) {
      for (float& v : img->data) v = static_cast<float>(rng.uniform());
      for (int& l : img->labels) l = rng.uniform() < 0.1 ? kUnlabeled : static_cast<int>(rng.index(5));
    }
    Matrix probs(5, h * w);
    for (auto& x : probs.reshaped()) x = rng.uniform(0.01, 1.0);
    for (int i = 0; i < h * w; ++i) probs.col(i) /= probs.col(i).sum();
    std::vector<double> scores(h * w);
    for (auto& s : scores) s = rng.uniform();
    const auto pseudo = mixing::pseudo_label(probs, scores, rng.uniform(0, 100));
    const auto out = mixing::dacs_mix(src, tgt, pseudo, rng);
    for (int i = 0; i < h * w; ++i) {
      const bool pasted = pseudo.mask[i] != 0;
      const LabeledImage& from = pasted ? tgt : src;
      dacs_bad += out.paste_mask[i] != pseudo.mask[i];
      for (int ch = 0; ch < 3; ++ch) dacs_bad += out.mixed.data[i * 3 + ch] != from.data[i * 3 + ch];
      dacs_bad += out.mixed.labels[i] != (pasted ? pseudo.labels[i] : src.labels[i]);
    }
  }
  for (int pair = 0; pair < 100; ++pair) {
    LabeledCloud a, b;
    for (LabeledCloud* c : {&a, &b}) {
      const int n = static_cast<int>(rng.index(300));
      for (int i = 0; i < n; ++i) {
        c->points.push_back({rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(-2, 2), rng.uniform()});
        c->labels.push_back(static_cast<int>(rng.index(19)));
      }
    }
    const double theta0 = rng.uniform(-kPi, 3 * kPi);
    const double sigma = rng.uniform(1e-3, 2 * kPi - 1e-3);
    const auto out = mixing::polarmix_sector_swap(a, b, theta0, sigma);
    auto inside = [&](const CloudPoint& p) {
      double rel = std::atan2(p.y, p.x) - theta0;
      while (rel < 0) rel += 2 * kPi;
      while (rel >= 2 * kPi) rel -= 2 * kPi;
      return rel < sigma;
    };
    std::size_t expected = 0;
    for (const auto& p : a.points) expected += !inside(p);
    for (const auto& p : b.points) expected += inside(p);
    sector_bad += out.cloud.size() != expected;
    for (std::size_t i = 0; i < out.cloud.size(); ++i) {
      const auto& o = out.origin[i];
      const LabeledCloud& from = o.input == 0 ? a : b;
      sector_bad += !(from.points[o.index] == out.cloud.points[i]);
      sector_bad += from.labels[o.index] != out.cloud.labels[i];
      sector_bad += inside(out.cloud.points[i]) != (o.input == 1);
    }
  }
  LabeledCloud inst;
  for (int i = 0; i < 2000; ++i) {
    inst.points.push_back({rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-3, 3), rng.uniform()});
    inst.labels.push_back(static_cast<int>(rng.index(4)));
  }
  const auto pasted = mixing::polarmix_instance_paste(LabeledCloud{}, inst, {0, 1, 2, 3},
                                                      mixing::sample_rotations(rng, 5));
  double z_err = 0.0, r_err = 0.0;
  for (std::size_t i = 0; i < pasted.cloud.size(); ++i) {
    const auto& p = pasted.cloud.points[i];
    const auto& s = inst.points[pasted.origin[i].index];
    z_err = std::max(z_err, std::abs(p.z - s.z));
    r_err = std::max(r_err, std::abs(std::hypot(p.x, p.y) - std::hypot(s.x, s.y)));
  }
  char buf[200];
  std::snprintf(buf, sizeof buf, "dacs violations %zu, sector violations %zu, rotation |dz| %.1e |dr| %.1e",
                dacs_bad, sector_bad, z_err, r_err);
  return {dacs_bad == 0 && sector_bad == 0 && z_err <= 1e-12 && r_err <= 1e-12 &&
              pasted.cloud.size() == 5 * inst.size(),
          buf};
}

// 7. Bit-exact round trips and reader fuzzing.
Outcome criterion_formats() {
  Rng rng(707);
  auto random_bytes = [&](std::size_t n) {
    io::Bytes b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng.index(256));
    return b;
  };
  std::size_t roundtrip_bad = 0;
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = rng.index(100);
    io::Bytes points(n * 16);
    for (std::size_t i = 0; i < n * 4; ++i) {
      const float f = static_cast<float>(rng.normal(0.0, 40.0));
      std::memcpy(points.data() + 4 * i, &f, 4);
    }
    const io::Bytes labels = random_bytes(n * 4);
    const auto [p2, l2] = io::serialize_cloud(io::parse_cloud(points, labels));
    roundtrip_bad += p2 != points || l2 != labels;

    std::vector<std::uint64_t> shape(1 + rng.index(3));
    std::uint64_t count = 1;
    for (auto& s : shape) count *= (s = rng.index(5));
    std::vector<double> values(count);
    for (auto& v : values) v = rng.normal();
    const io::Bytes bytes = io::serialize_tensor(io::Tensor::from_f64(shape, values));
    roundtrip_bad += io::serialize_tensor(io::parse_tensor(bytes)) != bytes;
  }

  std::size_t crashes = 0, undiagnosed = 0, tensor_accepted = 0, cloud_rejected = 0, cloud_accepted_bad = 0;
  for (int t = 0; t < 100000; ++t) {
    const io::Bytes b = random_bytes(rng.index(96));
    try {
      io::parse_tensor(b);
      ++tensor_accepted;
    } catch (const FormatError& e) {
      undiagnosed += std::string(e.what()).find("byte offset") == std::string::npos;
    } catch (...) {
      ++crashes;
    }
    const io::Bytes labels = random_bytes(4 * rng.index(7));
    try {
      const auto cloud = io::parse_cloud(b, labels);
      const auto [p2, l2] = io::serialize_cloud(cloud);
      cloud_accepted_bad += p2 != b || l2 != labels;
    } catch (const FormatError& e) {
      ++cloud_rejected;
      undiagnosed += std::string(e.what()).find("byte offset") == std::string::npos;
    } catch (...) {
      ++crashes;
    }
  }
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "round-trip mismatches %zu; fuzz 1e5: crashes %zu, tensor accepted %zu, cloud rejected %zu "
                "(accepted ones are valid files, %zu failed to round-trip), undiagnosed %zu",
                roundtrip_bad, crashes, tensor_accepted, cloud_rejected, cloud_accepted_bad, undiagnosed);
  return {roundtrip_bad == 0 && crashes == 0 && tensor_accepted == 0 && cloud_accepted_bad == 0 && undiagnosed == 0,
          buf};
}

// 8. Component ladder on the synthetic worlds.
const cli::AblationRow& row(const std::vector<cli::AblationRow>& rows, const std::string& name) {
  return *std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.name == name; });
}

Outcome criterion_end_to_end() {
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  char buf[512];

  const auto t0 = Clock::now();
  const cli::RunConfig rgb = cli::RunConfig::defaults(Modality::kRgb);
  auto rgb_rows = cli::ablation_rows(rgb);
  cli::run_ablation(rgb, rgb_rows, seeds, 1);
  const double rgb_seconds = seconds_since(t0);
  const double al = row(rgb_rows, "al_only").median_final;
  const double pa = row(rgb_rows, "partial_a").median_final;
  const double pb = row(rgb_rows, "partial_b").median_final;
  const double full = row(rgb_rows, "full").median_final;
  const bool rgb_ok = full >= pb && pb >= al - 0.5 && full - al >= 1.0 && rgb_seconds < 300.0;

  const cli::RunConfig lidar = cli::RunConfig::defaults(Modality::kLidar);
  auto lidar_rows = cli::ablation_rows(lidar);
  lidar_rows.erase(std::remove_if(lidar_rows.begin(), lidar_rows.end(),
                                  [](const auto& r) { return r.name != "al_only" && r.name != "full"; }),
                   lidar_rows.end());
  cli::run_ablation(lidar, lidar_rows, seeds, 1);
  const double vcd_only = row(lidar_rows, "al_only").median_final;
  const double lidar_full = row(lidar_rows, "full").median_final;
  const bool lidar_ok = lidar_full - vcd_only >= 1.0;

  std::snprintf(buf, sizeof buf,
                "rgb medians al_only %.2f partial_a %.2f partial_b %.2f full %.2f (%.0f s); "
                "lidar vcd-only %.2f full %.2f",
                al, pa, pb, full, rgb_seconds, vcd_only, lidar_full);
  return {rgb_ok && lidar_ok, buf};
}

// 9. Repeated simulate runs give byte-identical metrics.
Outcome criterion_determinism() {
  bool ok = true;
  std::string detail;
  for (Modality m : {Modality::kRgb, Modality::kLidar}) {
    cli::RunConfig cfg = cli::RunConfig::defaults(m);
    cfg.seed = 7;
    cfg.finalize();
    const std::string a = cli::metrics_json(cfg, cli::simulate(cfg)).dump();
    const std::string b = cli::metrics_json(cfg, cli::simulate(cfg)).dump();
    ok = ok && a == b;
    detail += to_string(m) + (a == b ? " identical " : " DIFFER ");
  }
  return {ok, detail};
}

}  // namespace

int main() {
  const std::vector<std::function<Outcome()>> criteria{
      criterion_geometry, criterion_closed_forms, criterion_solvers,  criterion_gradients,  criterion_budget,
      criterion_mixing,   criterion_formats,      criterion_end_to_end, criterion_determinism};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = criteria[i]();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %zu: %s  (%s; %.1f s)\n", i + 1, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
