#include "commands.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "hyperada/errors.hpp"
#include "pipeline.hpp"
#include "run_config.hpp"
#include "selftest.hpp"

namespace hyperada::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  int threads = 1;

  std::optional<std::string> config_path;
  Overrides overrides;

  // selftest
  int instances = 1000;
  std::string inject_fault;

  // simulate
  std::optional<std::string> out_dir;
  bool ablate = false;
  std::vector<std::uint64_t> seeds;
  std::optional<std::string> export_world;

  // augment / select
  std::string kind;
  int scene = 0;
  std::optional<std::string> checkpoint;
  std::optional<std::string> a_points, a_labels, b_points, b_labels;
  std::optional<std::string> source_channels, source_labels, target_channels;
  std::optional<double> theta0;
  std::optional<double> sigma;
  std::optional<double> tau;
  std::vector<int> paste_classes;
  std::optional<std::vector<double>> angles;

  // report
  std::string report_dir;
};

void add_config_options(CLI::App* cmd, Options& o) {
  auto& ov = o.overrides;
  cmd->add_option("--config", o.config_path, "JSON run configuration");
  cmd->add_option("--modality", ov.modality, "rgb or lidar");
  cmd->add_option("--strategy", ov.strategy, "halo, vcd, halo_vcd or random");
  cmd->add_option("--seed", ov.seed, "Run seed (overrides config and HYPERADA_SEED)");
  cmd->add_option("--fraction", ov.fraction, "Image labeling budget as a share of pixels");
  cmd->add_option("--rounds", ov.rounds, "Acquisition rounds");
  cmd->add_option("--voxels-per-round", ov.voxels_per_round, "Voxels selected per scan per round");
  cmd->add_option("--pretrain-steps", ov.pretrain_steps, "Source-only pretraining steps");
  cmd->add_option("--steps-per-round", ov.steps_per_round, "Training steps after each round");
  cmd->add_option("--height", ov.height, "Synthetic image height");
  cmd->add_option("--width", ov.width, "Synthetic image width");
  cmd->add_option("--data", ov.data_dir, "Dataset directory instead of the synthetic world");
  cmd->add_option("--class-map", ov.class_map, "Class map JSON applied to loaded clouds");
  cmd->add_flag("--no-hfa", ov.no_hfa, "Disable hyperbolic feature augmentation");
  cmd->add_flag("--no-mixup", ov.no_mixup, "Disable hyperbolic mixup");
  cmd->add_flag("--no-focal", ov.no_focal, "Use cross-entropy instead of focal loss");
  cmd->add_flag("--no-mixing", ov.no_mixing, "Disable DACS / PolarMix");
}

void write_text(const fs::path& path, const std::string& text) {
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------------------

int cmd_selftest(const Options& o, std::ostream& out) {
  GeometrySuiteOptions g;
  g.instances = o.instances;
  if (o.inject_fault == "ball-epsilon-zero") {
    g.ball_epsilon = 0.0;
  } else if (!o.inject_fault.empty()) {
    throw InvalidArgument("unknown fault '" + o.inject_fault + "'");
  }
  const std::vector<SuiteReport> suites{geometry_suite(g), solver_suite(), loss_suite()};

  bool ok = true;
  char line[512];
  std::snprintf(line, sizeof line, "%-9s %-42s %-6s %s\n", "suite", "invariant", "status", "detail");
  out << line;
  for (const auto& s : suites) {
    for (const auto& c : s.checks) {
      std::snprintf(line, sizeof line, "%-9s %-42s %-6s %s\n", s.name.c_str(), c.name.c_str(),
                    c.passed ? "PASS" : "FAIL", c.detail.c_str());
      out << line;
    }
    ok = ok && s.passed();
  }
  out << "\n";
  for (const auto& s : suites) {
    std::snprintf(line, sizeof line, "%-9s %s in %.3f s\n", s.name.c_str(), s.passed() ? "passed" : "FAILED",
                  s.seconds);
    out << line;
  }
  return ok ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------

std::vector<RunConfig> ablation_bases(const Options& o) {
  Overrides ov = o.overrides;
  std::vector<std::string> modalities;
  if (ov.modality && *ov.modality == "both") {
    modalities = {"rgb", "lidar"};
  } else {
    modalities = {ov.modality.value_or("")};
  }
  std::vector<RunConfig> out;
  for (const auto& m : modalities) {
    if (!m.empty()) ov.modality = m;
    out.push_back(load_and_resolve(o.config_path, ov));
  }
  return out;
}

int cmd_simulate(const Options& o, std::ostream& out) {
  if (o.ablate) {
    std::vector<AblationRow> all;
    for (const RunConfig& base : ablation_bases(o)) {
      auto rows = ablation_rows(base);
      run_ablation(base, rows, o.seeds.empty() ? std::vector<std::uint64_t>{base.seed} : o.seeds, o.threads);
      all.insert(all.end(), rows.begin(), rows.end());
    }
    const std::string table = ablation_table(all);
    out << table;
    const fs::path dir = o.out_dir.value_or("runs/ablation");
    write_text(dir / "ablation.json", to_json(all).dump(2) + "\n");
    write_text(dir / "ablation.txt", table);
    out << "wrote " << (dir / "ablation.json").string() << "\n";
    return kExitOk;
  }

  const RunConfig cfg = load_and_resolve(o.config_path, o.overrides);
  if (o.export_world) {
    export_world(cfg, *o.export_world);
    out << "wrote synthetic " << to_string(cfg.modality) << " world to " << *o.export_world << "\n";
    return kExitOk;
  }
  const Simulation sim = simulate(cfg);
  const fs::path dir = o.out_dir.value_or("runs/" + to_string(cfg.modality) + "_" +
                                         acquisition::to_string(cfg.strategy) + "_s" +
                                         std::to_string(cfg.seed));
  write_run_dir(cfg, sim, dir);
  char line[256];
  std::snprintf(line, sizeof line, "%s/%s seed %llu: target mIoU %.2f -> %.2f after %d rounds\n",
                to_string(cfg.modality).c_str(), acquisition::to_string(cfg.strategy).c_str(),
                static_cast<unsigned long long>(cfg.seed), 100.0 * sim.loop.initial_miou,
                100.0 * sim.loop.final_miou.mean, cfg.budget.rounds);
  out << line << "wrote " << dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

trainer::Model scoring_model(const Options& o, const RunConfig& cfg) {
  if (o.checkpoint) return trainer::read_checkpoint(*o.checkpoint).model;
  if (cfg.modality == Modality::kRgb) return trainer::pretrain_rgb(cfg.training, rgb_datasets(cfg)).model;
  return trainer::pretrain_lidar(cfg.training, lidar_datasets(cfg)).model;
}

LabeledCloud load_cloud(const std::optional<std::string>& points, const std::optional<std::string>& labels,
                        const char* which) {
  if (!points || !labels) {
    throw InvalidArgument(std::string("cloud ") + which + " needs both --" + which + "-points and --" + which +
                          "-labels");
  }
  return io::read_cloud({*points, *labels});
}

std::vector<std::uint32_t> origin_words(const std::vector<mixing::PointOrigin>& origin) {
  std::vector<std::uint32_t> out;
  out.reserve(origin.size() * 2);
  for (const auto& p : origin) {
    out.push_back(p.input);
    out.push_back(p.index);
  }
  return out;
}

int augment_polarmix(const Options& o, const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  LabeledCloud a;
  LabeledCloud b;
  std::string a_name;
  std::string b_name;
  const bool from_files = o.a_points || o.b_points;
  if (from_files) {
    a = load_cloud(o.a_points, o.a_labels, "a");
    b = load_cloud(o.b_points, o.b_labels, "b");
    a_name = *o.a_points;
    b_name = *o.b_points;
  } else {
    auto pair = io::generate_lidar_scene(cfg.world, o.scene);
    a = std::move(pair.source);
    b = std::move(pair.target);
    a_name = "synthetic scene " + std::to_string(o.scene) + " (source)";
    b_name = "synthetic scene " + std::to_string(o.scene) + " (target)";
  }

  Rng rng = Rng(cfg.seed).fork("augment").fork("polarmix");
  mixing::SectorParams sector = mixing::sample_sector(rng);
  if (o.theta0) sector.theta0 = *o.theta0;
  if (o.sigma) sector.sigma = *o.sigma;
  const auto swapped = mixing::polarmix_sector_swap(a, b, sector.theta0, sector.sigma);

  std::set<int> classes(o.paste_classes.begin(), o.paste_classes.end());
  if (classes.empty()) {
    const std::vector<LabeledCloud> both{a, b};
    classes = mixing::rare_classes(both, cfg.training.num_classes);
  }
  const std::vector<double> angles =
      o.angles ? *o.angles : mixing::sample_rotations(rng, cfg.training.polarmix_rotations);
  const auto pasted = mixing::polarmix_instance_paste(swapped.cloud, b, classes, angles);

  // Input 0 of the paste is the swapped cloud; resolve it to a or b.
  std::vector<mixing::PointOrigin> origin;
  origin.reserve(pasted.origin.size());
  for (const auto& p : pasted.origin) origin.push_back(p.input == 0 ? swapped.origin[p.index] : p);

  io::write_cloud(pasted.cloud, {dir / "mixed.bin", dir / "mixed.label"});
  io::write_tensor(io::Tensor::from_u32({origin.size(), 2}, origin_words(origin)), dir / "mixed.provenance.hyts");
  std::size_t from_a = 0;
  for (const auto& p : origin) from_a += p.input == 0 ? 1 : 0;
  const json meta{
      {"kind", "polarmix"},
      {"inputs", {a_name, b_name}},
      {"theta0", sector.theta0},
      {"sigma", sector.sigma},
      {"paste_classes", classes},
      {"rotations", angles},
      {"points", origin.size()},
      {"points_from_a", from_a},
      {"points_from_b", origin.size() - from_a},
      {"provenance", "mixed.provenance.hyts: u32 [N, 2] rows of (input, index), input 0 = a, 1 = b"},
  };
  write_text(dir / "provenance.json", meta.dump(2) + "\n");
  out << "polarmix: " << origin.size() << " points (" << from_a << " from a, " << origin.size() - from_a
      << " from b) -> " << dir.string() << "\n";
  return kExitOk;
}

int augment_dacs(const Options& o, const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  LabeledImage source;
  LabeledImage target;
  if (o.source_channels || o.target_channels) {
    if (!o.source_channels || !o.source_labels || !o.target_channels) {
      throw InvalidArgument("dacs needs --source-channels, --source-labels and --target-channels");
    }
    source = io::image_from_tensors(io::read_tensor(*o.source_channels), io::read_tensor(*o.source_labels));
    const auto tc = io::read_tensor(*o.target_channels);
    if (tc.shape.size() != 3) throw InvalidArgument("target channels must be an H x W x C tensor");
    const std::vector<std::uint32_t> none(tc.shape[0] * tc.shape[1], 0xFFFFFFFFu);
    target = io::image_from_tensors(tc, io::Tensor::from_u32({tc.shape[0], tc.shape[1]}, none));
  } else {
    source = io::generate_rgb_scene(cfg.world, o.scene).source;
    target = io::generate_rgb_scene(cfg.world, o.scene + 1).target;
  }

  const trainer::Model model = scoring_model(o, cfg);
  const auto features = trainer::rgb_features(target);
  const auto fc = trainer::forward(model, features);
  const auto scores = acquisition::halo_scores(fc.points, fc.probs, model.classifier.curvature);
  const double tau = o.tau.value_or(cfg.training.tau_percentile);
  const auto pseudo = mixing::pseudo_label(fc.probs, scores, tau);
  Rng rng = Rng(cfg.seed).fork("augment").fork("dacs");
  const auto mixed = mixing::dacs_mix(source, target, pseudo, rng, cfg.training.dacs_direction);

  io::write_tensor(io::image_channels_tensor(mixed.mixed), dir / "mixed.channels.hyts");
  io::write_tensor(io::image_labels_tensor(mixed.mixed), dir / "mixed.labels.hyts");
  io::write_tensor(io::Tensor::from_u8({static_cast<std::uint64_t>(mixed.mixed.height),
                                        static_cast<std::uint64_t>(mixed.mixed.width)},
                                       mixed.paste_mask),
                   dir / "mixed.provenance.hyts");
  std::size_t pasted = 0;
  for (auto m : mixed.paste_mask) pasted += m;
  const bool onto_source = cfg.training.dacs_direction == mixing::DacsDirection::kTargetOntoSource;
  const json meta{
      {"kind", "dacs"},
      {"direction", onto_source ? "target_onto_source" : "source_onto_target"},
      {"tau_percentile", tau},
      {"pixels", mixed.paste_mask.size()},
      {"pasted_pixels", pasted},
      {"provenance", std::string("mixed.provenance.hyts: u8 [H, W], 1 where the pixel came from the ") +
                         (onto_source ? "target" : "source") + " image"},
  };
  write_text(dir / "provenance.json", meta.dump(2) + "\n");
  out << "dacs: pasted " << pasted << " of " << mixed.paste_mask.size() << " pixels -> " << dir.string() << "\n";
  return kExitOk;
}

int augment_hfa_preview(const Options& o, const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const trainer::Model model = scoring_model(o, cfg);
  trainer::CellBatch batch;
  int height = 1;
  int width = 0;
  if (cfg.modality == Modality::kRgb) {
    const auto image = io::generate_rgb_scene(cfg.world, o.scene).source;
    batch = {trainer::rgb_features(image), image.labels};
    height = image.height;
    width = image.width;
  } else {
    const auto cloud = io::generate_lidar_scene(cfg.world, o.scene).source;
    batch = {trainer::lidar_features(cloud, cfg.training.voxel_size), cloud.labels};
    width = static_cast<int>(cloud.size());
  }
  const auto fc = trainer::forward(model, batch.features);
  const auto& k = model.classifier.curvature;

  augmentation::EmbeddingMap map{fc.points, batch.labels, k, height, width};
  distributions::ClassEmbeddings split;
  for (const auto& [cls, cells] : augmentation::cells_by_class(map)) {
    for (int c : cells) split[cls].push_back(fc.points.col(c));
  }
  Rng rng = Rng(cfg.seed).fork("augment").fork("hfa");
  Rng flow_rng = rng.fork("flow");
  const distributions::FlowNetwork flow(model.encoder.dim(), flow_rng);
  const auto estimated = distributions::estimate_all(split, flow, cfg.training.solver, k);
  std::vector<int> present;
  for (const auto& d : estimated.distributions) present.push_back(d.class_id);
  const auto pool = augmentation::build_pool(estimated.distributions, present, cfg.modality, rng);
  const auto sampled = augmentation::interpolate(map, pool, cfg.training.schedule, 0.0, rng);
  const auto mixed = augmentation::hyperbolic_mixup(map, cfg.training.mixup, rng);
  const auto reint = augmentation::reintegrate(map, sampled, mixed, rng);

  auto coords = [](const geometry::Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  json classes = json::array();
  for (const auto& d : estimated.distributions) {
    json samples = json::array();
    for (const auto& p : pool.sampled(d.class_id)) samples.push_back(coords(p.coords));
    classes.push_back({{"class", d.class_id},
                       {"cells", split.at(d.class_id).size()},
                       {"distribution", d},
                       {"k_sampled", samples.size()},
                       {"samples", samples}});
  }
  json provenance = json::array();
  for (const auto& a : reint.applied) {
    provenance.push_back({{"cell", a.cell},
                          {"kind", a.kind == augmentation::PoolKind::kSampled ? "interpolated" : "mixup"},
                          {"partner_cell", a.partner_cell},
                          {"w_self", a.w_self},
                          {"w_partner", a.w_partner}});
  }
  write_text(dir / "hfa_preview.json", json{{"kind", "hfa-preview"},
                                            {"modality", to_string(cfg.modality)},
                                            {"scene", o.scene},
                                            {"samples_per_class", augmentation::samples_per_class(cfg.modality)},
                                            {"skipped_classes", estimated.skipped_classes},
                                            {"classes", classes}}
                                                .dump(2) + "\n");
  write_text(dir / "provenance.json", json{{"kind", "hfa-preview"},
                                           {"replaced_cells", reint.applied.size()},
                                           {"cells", provenance}}
                                               .dump(1) + "\n");
  out << "hfa-preview: " << classes.size() << " classes x " << augmentation::samples_per_class(cfg.modality)
      << " samples, " << reint.applied.size() << " cells augmented -> " << dir.string() << "\n";
  return kExitOk;
}

int cmd_augment(const Options& o, std::ostream& out) {
  Overrides ov = o.overrides;
  if (!ov.modality) {
    if (o.kind == "polarmix") ov.modality = "lidar";
    if (o.kind == "dacs") ov.modality = "rgb";
  }
  const RunConfig cfg = load_and_resolve(o.config_path, ov);
  const fs::path dir = o.out_dir.value_or("runs/augment_" + o.kind);
  if (o.kind == "polarmix") {
    if (cfg.modality != Modality::kLidar) throw InvalidArgument("polarmix works on lidar clouds");
    return augment_polarmix(o, cfg, dir, out);
  }
  if (o.kind == "dacs") {
    if (cfg.modality != Modality::kRgb) throw InvalidArgument("dacs works on rgb images");
    return augment_dacs(o, cfg, dir, out);
  }
  return augment_hfa_preview(o, cfg, dir, out);
}

// ---------------------------------------------------------------------------

json select_document(const Options& o, const RunConfig& cfg) {
  const trainer::Model model = scoring_model(o, cfg);
  const auto& k = model.classifier.curvature;
  std::vector<acquisition::RoundLog> logs;
  json items = json::array();
  std::size_t total = 0;

  if (cfg.modality == Modality::kRgb) {
    const auto data = rgb_datasets(cfg);
    for (std::size_t i = 0; i < data.target_train.size(); ++i) {
      const auto fc = trainer::forward(model, trainer::rgb_features(data.target_train[i]));
      std::vector<double> scores;
      if (cfg.strategy == acquisition::Strategy::kRandom) {
        Rng rng = Rng(cfg.seed).fork("select").fork(i);
        for (Eigen::Index c = 0; c < fc.points.cols(); ++c) scores.push_back(rng.uniform());
      } else {
        scores = acquisition::halo_scores(fc.points, fc.probs, k);
      }
      acquisition::ScoreMap map(scores);
      for (int r = 0; r < cfg.budget.rounds; ++r) {
        const auto ids = acquisition::select_cells(map, cfg.budget, r);
        std::vector<double> picked;
        for (int id : ids) picked.push_back(map.scores[id]);
        logs.push_back({r, "image", static_cast<int>(i), ids, picked});
      }
      total += map.labeled_count();
      items.push_back({{"image", i}, {"cells", map.size()}, {"selected", map.labeled_count()}});
    }
  } else {
    const auto data = lidar_datasets(cfg);
    for (std::size_t i = 0; i < data.target_train.size(); ++i) {
      const auto& cloud = data.target_train[i];
      const auto fc = trainer::forward(model, trainer::lidar_features(cloud, cfg.training.voxel_size));
      auto grid = acquisition::VoxelGrid::build(cloud.points, cfg.training.voxel_size);
      Rng rng = Rng(cfg.seed).fork("select").fork(i);
      const auto scores = acquisition::voxel_scores(cfg.strategy, grid, fc.points, fc.probs, k, rng);
      for (int r = 0; r < cfg.budget.rounds; ++r) {
        const auto ids = acquisition::select_voxels(grid, scores, cfg.budget, r);
        std::vector<double> picked;
        for (int id : ids) picked.push_back(scores[id]);
        logs.push_back({r, "scan", static_cast<int>(i), ids, picked});
      }
      std::size_t selected = 0;
      for (auto f : grid.labeled) selected += f;
      total += selected;
      items.push_back({{"scan", i}, {"voxels", grid.size()}, {"selected", selected}});
    }
  }
  return json{{"config_sha256", config_hash(cfg)},
              {"modality", to_string(cfg.modality)},
              {"strategy", acquisition::to_string(cfg.strategy)},
              {"seed", cfg.seed},
              {"rounds", logs},
              {"items", items},
              {"total_selected", total}};
}

int cmd_select(const Options& o, std::ostream& out) {
  const RunConfig cfg = load_and_resolve(o.config_path, o.overrides);
  const json doc = select_document(o, cfg);
  const fs::path path = o.out_dir.value_or("runs/select_" + to_string(cfg.modality) + ".json");
  write_text(path, doc.dump(2) + "\n");
  out << "selected " << doc["total_selected"].get<std::size_t>() << " "
      << (cfg.modality == Modality::kRgb ? "pixels" : "voxels") << " over " << doc["items"].size() << " "
      << (cfg.modality == Modality::kRgb ? "images" : "scans") << " -> " << path.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

int cmd_report(const Options& o, std::ostream& out) {
  const fs::path dir = o.report_dir;
  if (!fs::is_directory(dir)) throw InvalidArgument("run directory not found: " + dir.string());
  char line[256];
  if (fs::exists(dir / "ablation.json")) {
    const json rows = read_json(dir / "ablation.json");
    std::snprintf(line, sizeof line, "%-8s %-10s %-9s %8s  %s\n", "modality", "config", "strategy", "median",
                  "per-seed final mIoU");
    out << line;
    for (const auto& r : rows) {
      std::string per_seed;
      for (const auto& v : r.at("final_miou")) {
        char buf[32];
        std::snprintf(buf, sizeof buf, " %.2f", v.get<double>());
        per_seed += buf;
      }
      std::snprintf(line, sizeof line, "%-8s %-10s %-9s %8.2f  %s\n", r.at("modality").get<std::string>().c_str(),
                    r.at("name").get<std::string>().c_str(), r.at("strategy").get<std::string>().c_str(),
                    r.at("median_final_miou").get<double>(), per_seed.c_str() + 1);
      out << line;
    }
    return kExitOk;
  }
  if (!fs::exists(dir / "metrics.json")) {
    throw InvalidArgument("no metrics.json or ablation.json in " + dir.string());
  }
  const json m = read_json(dir / "metrics.json");
  out << "run " << dir.string() << ": " << m.at("modality").get<std::string>() << " / "
      << m.at("strategy").get<std::string>() << ", seed " << m.at("seed").get<std::uint64_t>() << "\n";
  out << "config sha256 " << m.at("config_sha256").get<std::string>() << "\n\n";
  std::snprintf(line, sizeof line, "%-6s %8s\n", "round", "mIoU");
  out << line;
  std::snprintf(line, sizeof line, "%-6d %8.2f\n", 0, 100.0 * m.at("initial_miou").get<double>());
  out << line;
  int r = 1;
  for (const auto& v : m.at("round_miou")) {
    std::snprintf(line, sizeof line, "%-6d %8.2f\n", r++, 100.0 * v.get<double>());
    out << line;
  }
  out << "\n";
  std::snprintf(line, sizeof line, "%-6s %8s\n", "class", "IoU");
  out << line;
  const auto& fin = m.at("final");
  const auto& iou = fin.at("iou");
  const auto& evaluated = fin.at("evaluated");
  for (std::size_t c = 0; c < iou.size(); ++c) {
    if (evaluated.at(c).get<int>() != 0) {
      std::snprintf(line, sizeof line, "%-6zu %8.2f\n", c, 100.0 * iou.at(c).get<double>());
    } else {
      std::snprintf(line, sizeof line, "%-6zu %8s\n", c, "-");
    }
    out << line;
  }
  std::snprintf(line, sizeof line, "%-6s %8.2f\n", "mean", 100.0 * fin.at("mean_iou").get<double>());
  out << line;
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Hyperbolic active domain adaptation toolkit"};
  app.name("hyperada");
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--threads", o.threads, "Worker threads for independent runs")->check(CLI::PositiveNumber);

  auto* selftest = app.add_subcommand("selftest", "Run the geometry, solver and loss property suites");
  selftest->add_option("--instances", o.instances, "Random instances per geometry property")
      ->check(CLI::PositiveNumber);
  selftest->add_option("--inject-fault", o.inject_fault, "Test hook: ball-epsilon-zero");

  auto* simulate_cmd = app.add_subcommand("simulate", "Active domain adaptation on a synthetic or loaded world");
  add_config_options(simulate_cmd, o);
  simulate_cmd->add_option("--out", o.out_dir, "Output directory");
  simulate_cmd->add_flag("--ablate", o.ablate, "Run the four-configuration component ladder");
  simulate_cmd->add_option("--seeds", o.seeds, "Seeds for --ablate")->delimiter(',');
  simulate_cmd->add_option("--export-world", o.export_world, "Write the synthetic world to a directory and exit");

  auto* augment = app.add_subcommand("augment", "Apply one augmentation and write its provenance");
  augment->add_option("kind", o.kind, "polarmix, dacs or hfa-preview")
      ->required()
      ->check(CLI::IsMember({"polarmix", "dacs", "hfa-preview"}));
  add_config_options(augment, o);
  augment->add_option("--out", o.out_dir, "Output directory");
  augment->add_option("--scene", o.scene, "Synthetic scene used when no input files are given");
  augment->add_option("--checkpoint", o.checkpoint, "Model checkpoint (default: pretrain on the source set)");
  augment->add_option("--a-points", o.a_points, "polarmix: first cloud points file");
  augment->add_option("--a-labels", o.a_labels, "polarmix: first cloud labels file");
  augment->add_option("--b-points", o.b_points, "polarmix: second cloud points file");
  augment->add_option("--b-labels", o.b_labels, "polarmix: second cloud labels file");
  augment->add_option("--theta0", o.theta0, "polarmix: sector start (radians)");
  augment->add_option("--sigma", o.sigma, "polarmix: sector width (radians)");
  augment->add_option("--paste-classes", o.paste_classes, "polarmix: classes to paste")->delimiter(',');
  augment->add_option("--angles", o.angles, "polarmix: paste rotations (radians)")->delimiter(',');
  augment->add_option("--source-channels", o.source_channels, "dacs: source image tensor");
  augment->add_option("--source-labels", o.source_labels, "dacs: source label tensor");
  augment->add_option("--target-channels", o.target_channels, "dacs: target image tensor");
  augment->add_option("--tau", o.tau, "dacs: confidence percentile");

  auto* select = app.add_subcommand("select", "Score and select without training");
  add_config_options(select, o);
  select->add_option("--out", o.out_dir, "Output JSON file");
  select->add_option("--checkpoint", o.checkpoint, "Model checkpoint (default: pretrain on the source set)");

  auto* report = app.add_subcommand("report", "Summarise a run or ablation directory");
  report->add_option("dir", o.report_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*selftest) return cmd_selftest(o, out);
    if (*simulate_cmd) return cmd_simulate(o, out);
    if (*augment) return cmd_augment(o, out);
    if (*select) return cmd_select(o, out);
    return cmd_report(o, out);
  } catch (const std::exception& e) {
    err << "hyperada: error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace hyperada::cli
