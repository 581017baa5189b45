#pragma once

// Resolved configuration of one CLI run. Layering, lowest to highest:
// modality defaults, config file, HYPERADA_SEED, command-line flags.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "hyperada/acquisition.hpp"
#include "hyperada/data_io.hpp"
#include "hyperada/trainer.hpp"

namespace hyperada::cli {

struct RunConfig {
  Modality modality = Modality::kRgb;
  acquisition::Strategy strategy = acquisition::Strategy::kHalo;
  std::uint64_t seed = 1;
  acquisition::BudgetPolicy budget;
  trainer::TrainingConfig training;
  io::SyntheticWorldConfig world;  // seed follows `seed`
  trainer::DatasetSizes datasets;
  std::string data_dir;   // empty: generate the synthetic world
  std::string class_map;  // optional raw -> train id table for loaded clouds

  static RunConfig defaults(Modality m);
  /// Propagates seed and modality into the nested configs and validates.
  void finalize();
};

/// Flag-level overrides; unset fields keep the lower layers.
struct Overrides {
  std::optional<std::string> modality;
  std::optional<std::string> strategy;
  std::optional<std::uint64_t> seed;
  std::optional<double> fraction;
  std::optional<int> rounds;
  std::optional<int> voxels_per_round;
  std::optional<int> pretrain_steps;
  std::optional<int> steps_per_round;
  std::optional<int> height;
  std::optional<int> width;
  std::optional<std::string> data_dir;
  std::optional<std::string> class_map;
  bool no_hfa = false;
  bool no_mixup = false;
  bool no_focal = false;
  bool no_mixing = false;
};

/// Unknown keys anywhere in `file` raise InvalidArgument.
RunConfig resolve_config(const nlohmann::json* file, const Overrides& flags,
                         const char* env_seed);

RunConfig load_and_resolve(const std::optional<std::filesystem::path>& config_path,
                           const Overrides& flags);

nlohmann::json to_json(const RunConfig& cfg);

/// Canonical text of the resolved config and its SHA-256.
std::string canonical_text(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

}  // namespace hyperada::cli
