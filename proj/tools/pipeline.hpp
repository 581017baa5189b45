#pragma once

// Dataset plumbing, simulation runs and the component ablation behind
// `hyperada simulate`.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "run_config.hpp"

namespace hyperada::cli {

/// Generated from the world config, or read from `data_dir` laid out as
///   <dir>/{source,target_train,target_eval}/NNNN.channels.hyts + NNNN.labels.hyts  (rgb)
///   <dir>/{source,target_train,target_eval}/NNNN.bin + NNNN.label                  (lidar)
/// with `class_map` applied to loaded cloud labels when set.
trainer::RgbDatasets rgb_datasets(const RunConfig& cfg);
trainer::LidarDatasets lidar_datasets(const RunConfig& cfg);

/// Writes the generated world in the `data_dir` layout.
void export_world(const RunConfig& cfg, const std::filesystem::path& dir);

struct Simulation {
  trainer::LoopResult loop;
  std::string config_hash;
};

Simulation simulate(const RunConfig& cfg, const trainer::TrainState* pretrained = nullptr);

/// Stable-schema metrics document; contains no timings.
nlohmann::json metrics_json(const RunConfig& cfg, const Simulation& sim);

/// config.json, config.sha256, rounds.json, losses.json, metrics.json,
/// learning_curve.svg and checkpoint.bin.
void write_run_dir(const RunConfig& cfg, const Simulation& sim, const std::filesystem::path& dir);

struct AblationRow {
  std::string name;  // al_only, partial_a, partial_b, full
  Modality modality = Modality::kRgb;
  acquisition::Strategy strategy = acquisition::Strategy::kHalo;
  bool use_hfa = false;
  bool use_mixup = false;
  bool use_focal = false;
  bool use_mixing = false;
  std::vector<std::uint64_t> seeds;
  std::vector<double> initial_miou;  // percent, per seed
  std::vector<double> final_miou;    // percent, per seed
  double median_final = 0.0;
};

/// The four-step component ladder for one modality:
///   al_only    acquisition only (VCD for clouds)
///   partial_a  + HFA and hyperbolic mixup (HALO-VCD for clouds)
///   partial_b  + focal loss
///   full       + domain mixing
/// Pretraining is shared between rows with the same seed and loss. At most
/// `threads` runs execute concurrently; results do not depend on it.
std::vector<AblationRow> ablation_rows(const RunConfig& base);
void run_ablation(const RunConfig& base, std::vector<AblationRow>& rows,
                  const std::vector<std::uint64_t>& seeds, int threads);

nlohmann::json to_json(const std::vector<AblationRow>& rows);
std::string ablation_table(const std::vector<AblationRow>& rows);

double median(std::vector<double> values);

/// Runs fn(0) .. fn(n - 1) on up to `threads` worker threads.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace hyperada::cli
