#include "pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include "hyperada/errors.hpp"
#include "svg.hpp"

namespace hyperada::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* const kSplits[] = {"source", "target_train", "target_eval"};

std::string scene_stem(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return buf;
}

/// Sorted stems of files in `dir` ending with `suffix`.
std::vector<std::string> stems(const fs::path& dir, const std::string& suffix) {
  if (!fs::is_directory(dir)) throw InvalidArgument("data directory not found: " + dir.string());
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > suffix.size() && name.ends_with(suffix)) {
      out.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw InvalidArgument("no '*" + suffix + "' files in " + dir.string());
  return out;
}

template <typename T>
std::vector<T>& split_of(trainer::Datasets<T>& d, int i) {
  return i == 0 ? d.source : (i == 1 ? d.target_train : d.target_eval);
}

template <typename T>
const std::vector<T>& split_of(const trainer::Datasets<T>& d, int i) {
  return i == 0 ? d.source : (i == 1 ? d.target_train : d.target_eval);
}

void require_data_dir(const RunConfig& cfg) {
  if (!fs::is_directory(cfg.data_dir)) {
    throw InvalidArgument("data directory not found: " + cfg.data_dir);
  }
}

}  // namespace

trainer::RgbDatasets rgb_datasets(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) return trainer::build_rgb_datasets(cfg.world, cfg.datasets);
  require_data_dir(cfg);
  trainer::RgbDatasets d;
  for (int s = 0; s < 3; ++s) {
    const fs::path dir = fs::path(cfg.data_dir) / kSplits[s];
    for (const auto& stem : stems(dir, ".channels.hyts")) {
      split_of(d, s).push_back(io::image_from_tensors(io::read_tensor(dir / (stem + ".channels.hyts")),
                                                      io::read_tensor(dir / (stem + ".labels.hyts"))));
    }
  }
  return d;
}

trainer::LidarDatasets lidar_datasets(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) return trainer::build_lidar_datasets(cfg.world, cfg.datasets);
  require_data_dir(cfg);
  std::optional<io::ClassMap> map;
  if (!cfg.class_map.empty()) map = io::read_class_map(cfg.class_map);
  trainer::LidarDatasets d;
  for (int s = 0; s < 3; ++s) {
    const fs::path dir = fs::path(cfg.data_dir) / kSplits[s];
    for (const auto& stem : stems(dir, ".bin")) {
      LabeledCloud cloud = io::read_cloud({dir / (stem + ".bin"), dir / (stem + ".label")});
      if (map) map->apply_to(cloud);
      split_of(d, s).push_back(std::move(cloud));
    }
  }
  return d;
}

void export_world(const RunConfig& cfg, const fs::path& dir) {
  RunConfig generated = cfg;
  generated.data_dir.clear();
  if (cfg.modality == Modality::kRgb) {
    const auto d = rgb_datasets(generated);
    for (int s = 0; s < 3; ++s) {
      const auto& items = split_of(d, s);
      for (std::size_t i = 0; i < items.size(); ++i) {
        const fs::path base = dir / kSplits[s] / scene_stem(i);
        io::write_tensor(io::image_channels_tensor(items[i]), base.string() + ".channels.hyts");
        io::write_tensor(io::image_labels_tensor(items[i]), base.string() + ".labels.hyts");
      }
    }
  } else {
    const auto d = lidar_datasets(generated);
    for (int s = 0; s < 3; ++s) {
      const auto& items = split_of(d, s);
      for (std::size_t i = 0; i < items.size(); ++i) {
        const fs::path base = dir / kSplits[s] / scene_stem(i);
        io::write_cloud(items[i], {base.string() + ".bin", base.string() + ".label"});
      }
    }
  }
}

Simulation simulate(const RunConfig& cfg, const trainer::TrainState* pretrained) {
  Simulation sim;
  sim.config_hash = config_hash(cfg);
  if (cfg.modality == Modality::kRgb) {
    sim.loop = trainer::active_da_loop_rgb(cfg.training, rgb_datasets(cfg), cfg.budget, cfg.strategy,
                                           pretrained);
  } else {
    sim.loop = trainer::active_da_loop_lidar(cfg.training, lidar_datasets(cfg), cfg.budget,
                                             cfg.strategy, pretrained);
  }
  return sim;
}

json metrics_json(const RunConfig& cfg, const Simulation& sim) {
  const auto& loop = sim.loop;
  return json{
      {"config_sha256", sim.config_hash},
      {"modality", to_string(cfg.modality)},
      {"strategy", acquisition::to_string(cfg.strategy)},
      {"seed", cfg.seed},
      {"rounds", cfg.budget.rounds},
      {"initial_miou", loop.initial_miou},
      {"round_miou", loop.round_miou},
      {"final", loop.final_miou},
      {"revealed_cells", loop.revealed},
      {"revealed_units", loop.revealed_units},
      {"optimizer_steps", loop.state.step},
  };
}

void write_run_dir(const RunConfig& cfg, const Simulation& sim, const fs::path& dir) {
  auto put = [&](const char* name, const std::string& text) {
    io::write_file(dir / name, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  };
  put("config.json", canonical_text(cfg));
  put("config.sha256", sim.config_hash + "\n");
  put("rounds.json", json(sim.loop.logs).dump(2) + "\n");
  put("losses.json", json(sim.loop.losses).dump(1) + "\n");
  put("metrics.json", metrics_json(cfg, sim).dump(2) + "\n");

  std::vector<double> curve{100.0 * sim.loop.initial_miou};
  for (double m : sim.loop.round_miou) curve.push_back(100.0 * m);
  put("learning_curve.svg",
      line_chart_svg("Target mIoU by round (" + to_string(cfg.modality) + ", " +
                         acquisition::to_string(cfg.strategy) + ", seed " + std::to_string(cfg.seed) + ")",
                     "round (0 = after pretraining)", "mIoU (%)", {{"target eval", curve}}));
  trainer::write_checkpoint(dir / "checkpoint.bin", sim.loop.state.model, sim.config_hash);
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<AblationRow> ablation_rows(const RunConfig& base) {
  using acquisition::Strategy;
  const bool lidar = base.modality == Modality::kLidar;
  std::vector<AblationRow> rows(4);
  const char* names[] = {"al_only", "partial_a", "partial_b", "full"};
  for (int r = 0; r < 4; ++r) {
    auto& row = rows[r];
    row.name = names[r];
    row.modality = base.modality;
    row.strategy = lidar ? (r == 0 ? Strategy::kVcd : Strategy::kHaloVcd) : Strategy::kHalo;
    row.use_hfa = r >= 1;
    row.use_mixup = r >= 1 && !lidar;  // mixup is part of the RGB recipe only
    row.use_focal = r >= 2;
    row.use_mixing = r >= 3;
  }
  return rows;
}

namespace {

RunConfig row_config(const RunConfig& base, const AblationRow& row, std::uint64_t seed) {
  RunConfig c = base;
  c.seed = seed;
  c.strategy = row.strategy;
  c.training.use_hfa = row.use_hfa;
  c.training.use_mixup = row.use_mixup;
  c.training.use_focal = row.use_focal;
  c.training.use_mixing = row.use_mixing;
  c.finalize();
  return c;
}

template <typename Data, typename Build, typename Pretrain, typename Loop>
void ablate(const RunConfig& base, std::vector<AblationRow>& rows, const std::vector<std::uint64_t>& seeds,
            int threads, Build build, Pretrain pretrain, Loop loop) {
  const std::size_t ns = seeds.size();
  std::vector<Data> data(ns);
  parallel_for(ns, threads, [&](std::size_t i) {
    RunConfig c = base;
    c.seed = seeds[i];
    c.finalize();
    data[i] = build(c);
  });

  // Pretraining depends on the seed and on whether the loss is focal.
  std::vector<std::pair<std::size_t, bool>> keys;
  for (std::size_t i = 0; i < ns; ++i) {
    for (bool focal : {false, true}) {
      if (std::any_of(rows.begin(), rows.end(), [&](const AblationRow& r) { return r.use_focal == focal; })) {
        keys.emplace_back(i, focal);
      }
    }
  }
  std::vector<trainer::TrainState> states(keys.size());
  parallel_for(keys.size(), threads, [&](std::size_t k) {
    const auto [i, focal] = keys[k];
    const AblationRow* row = nullptr;
    for (const auto& r : rows) if (r.use_focal == focal) { row = &r; break; }
    states[k] = pretrain(row_config(base, *row, seeds[i]).training, data[i]);
  });
  auto state_for = [&](std::size_t i, bool focal) -> const trainer::TrainState& {
    for (std::size_t k = 0; k < keys.size(); ++k) {
      if (keys[k].first == i && keys[k].second == focal) return states[k];
    }
    throw InvalidArgument("missing pretrained state");
  };

  for (auto& row : rows) {
    row.seeds = seeds;
    row.initial_miou.assign(ns, 0.0);
    row.final_miou.assign(ns, 0.0);
  }
  parallel_for(rows.size() * ns, threads, [&](std::size_t job) {
    auto& row = rows[job / ns];
    const std::size_t i = job % ns;
    const RunConfig c = row_config(base, row, seeds[i]);
    const auto result = loop(c, data[i], state_for(i, row.use_focal));
    row.initial_miou[i] = 100.0 * result.initial_miou;
    row.final_miou[i] = 100.0 * result.final_miou.mean;
  });
  for (auto& row : rows) row.median_final = median(row.final_miou);
}

}  // namespace

void run_ablation(const RunConfig& base, std::vector<AblationRow>& rows,
                  const std::vector<std::uint64_t>& seeds, int threads) {
  if (seeds.empty()) throw InvalidArgument("ablation needs at least one seed");
  if (base.modality == Modality::kRgb) {
    ablate<trainer::RgbDatasets>(
        base, rows, seeds, threads, [](const RunConfig& c) { return rgb_datasets(c); },
        [](const trainer::TrainingConfig& t, const trainer::RgbDatasets& d) { return trainer::pretrain_rgb(t, d); },
        [](const RunConfig& c, const trainer::RgbDatasets& d, const trainer::TrainState& s) {
          return trainer::active_da_loop_rgb(c.training, d, c.budget, c.strategy, &s);
        });
  } else {
    ablate<trainer::LidarDatasets>(
        base, rows, seeds, threads, [](const RunConfig& c) { return lidar_datasets(c); },
        [](const trainer::TrainingConfig& t, const trainer::LidarDatasets& d) {
          return trainer::pretrain_lidar(t, d);
        },
        [](const RunConfig& c, const trainer::LidarDatasets& d, const trainer::TrainState& s) {
          return trainer::active_da_loop_lidar(c.training, d, c.budget, c.strategy, &s);
        });
  }
}

json to_json(const std::vector<AblationRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({
        {"name", r.name},
        {"modality", to_string(r.modality)},
        {"strategy", acquisition::to_string(r.strategy)},
        {"use_hfa", r.use_hfa},
        {"use_mixup", r.use_mixup},
        {"use_focal", r.use_focal},
        {"use_mixing", r.use_mixing},
        {"seeds", r.seeds},
        {"initial_miou", r.initial_miou},
        {"final_miou", r.final_miou},
        {"median_final_miou", r.median_final},
    });
  }
  return out;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-8s %-10s %-9s %-4s %-6s %-6s %-7s %10s\n", "modality", "config",
                "strategy", "hfa", "mixup", "focal", "mixing", "median mIoU");
  out += line;
  for (const auto& r : rows) {
    auto yn = [](bool b) { return b ? "yes" : "no"; };
    std::snprintf(line, sizeof line, "%-8s %-10s %-9s %-4s %-6s %-6s %-7s %10.2f\n", to_string(r.modality).c_str(),
                  r.name.c_str(), acquisition::to_string(r.strategy).c_str(), yn(r.use_hfa), yn(r.use_mixup),
                  yn(r.use_focal), yn(r.use_mixing), r.median_final);
    out += line;
  }
  return out;
}

}  // namespace hyperada::cli
