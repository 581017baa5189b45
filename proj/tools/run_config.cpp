#include "run_config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "hyperada/errors.hpp"

namespace hyperada::cli {

using nlohmann::json;

RunConfig RunConfig::defaults(Modality m) {
  RunConfig c;
  c.modality = m;
  if (m == Modality::kRgb) {
    c.strategy = acquisition::Strategy::kHalo;
    c.budget = acquisition::BudgetPolicy::rgb_default();
    c.training = trainer::TrainingConfig::rgb_default();
    c.world.shift = io::DomainShift::rgb_default();
    c.datasets = trainer::DatasetSizes::rgb_default();
  } else {
    c.strategy = acquisition::Strategy::kHaloVcd;
    c.budget = acquisition::BudgetPolicy::lidar_default();
    c.training = trainer::TrainingConfig::lidar_default();
    c.world.shift = io::DomainShift::lidar_default();
    c.datasets = trainer::DatasetSizes::lidar_default();
  }
  return c;
}

void RunConfig::finalize() {
  training.modality = modality;
  training.seed = seed;
  budget.modality = modality;
  world.seed = seed;
  acquisition::check_strategy(strategy, modality);
  budget.validate();
  training.validate();
  if (datasets.source < 1 || datasets.target_train < 1 || datasets.target_eval < 1) {
    throw InvalidArgument("dataset sizes must all be >= 1");
  }
}

namespace {

template <typename F>
void for_keys(const json& obj, const std::string& where, F&& handle) {
  if (!obj.is_object()) throw InvalidArgument("config: '" + where + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!handle(key, value)) throw InvalidArgument("config: unknown key '" + where + key + "'");
  }
}

void apply_budget(const json& j, acquisition::BudgetPolicy& b) {
  for_keys(j, "budget.", [&](const std::string& key, const json& v) {
    if (key == "fraction") b.fraction = v.get<double>();
    else if (key == "rounds") b.rounds = v.get<int>();
    else if (key == "voxels_per_round") b.voxels_per_round = v.get<int>();
    else return false;
    return true;
  });
}

void apply_world(const json& j, io::SyntheticWorldConfig& w) {
  for_keys(j, "world.", [&](const std::string& key, const json& v) {
    if (key == "height") w.height = v.get<int>();
    else if (key == "width") w.width = v.get<int>();
    else if (key == "beams") w.beams = v.get<int>();
    else if (key == "azimuth_steps") w.azimuth_steps = v.get<int>();
    else if (key == "noise_scale") w.shift.noise_scale = v.get<double>();
    else if (key == "hue_shift") w.shift.hue_shift = v.get<double>();
    else if (key == "thin_dropout") w.shift.thin_dropout = v.get<double>();
    else if (key == "density_factor") w.shift.density_factor = v.get<double>();
    else if (key == "beam_distortion") w.shift.beam_distortion = v.get<double>();
    else if (key == "intensity_gain") w.shift.intensity_gain = v.get<double>();
    else if (key == "intensity_offset") w.shift.intensity_offset = v.get<double>();
    else return false;
    return true;
  });
}

void apply_datasets(const json& j, trainer::DatasetSizes& d) {
  for_keys(j, "datasets.", [&](const std::string& key, const json& v) {
    if (key == "source") d.source = v.get<int>();
    else if (key == "target_train") d.target_train = v.get<int>();
    else if (key == "target_eval") d.target_eval = v.get<int>();
    else return false;
    return true;
  });
}

std::uint64_t parse_seed(const std::string& text, const char* origin) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw InvalidArgument(std::string(origin) + ": seed must be a non-negative integer, got '" + text + "'");
  }
  return v;
}

}  // namespace

RunConfig resolve_config(const json* file, const Overrides& flags, const char* env_seed) {
  std::string modality_name = "rgb";
  if (file != nullptr) {
    if (!file->is_object()) throw InvalidArgument("config: top level must be an object");
    if (file->contains("modality")) modality_name = file->at("modality").get<std::string>();
  }
  if (flags.modality) modality_name = *flags.modality;
  RunConfig cfg = RunConfig::defaults(modality_from_string(modality_name));

  try {
    if (file != nullptr) {
      for_keys(*file, "", [&](const std::string& key, const json& v) {
        if (key == "modality") return true;
        if (key == "strategy") cfg.strategy = acquisition::strategy_from_string(v.get<std::string>());
        else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
        else if (key == "budget") apply_budget(v, cfg.budget);
        else if (key == "world") apply_world(v, cfg.world);
        else if (key == "datasets") apply_datasets(v, cfg.datasets);
        else if (key == "data_dir") cfg.data_dir = v.get<std::string>();
        else if (key == "class_map") cfg.class_map = v.get<std::string>();
        else if (key == "training") {
          if (v.is_object() && (v.contains("modality") || v.contains("seed"))) {
            throw InvalidArgument("config: set 'modality' and 'seed' at the top level, not in 'training'");
          }
          cfg.training = trainer::training_config_from_json(v, cfg.training);
        } else {
          return false;
        }
        return true;
      });
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }

  if (env_seed != nullptr && *env_seed != '\0') cfg.seed = parse_seed(env_seed, "HYPERADA_SEED");

  if (flags.strategy) cfg.strategy = acquisition::strategy_from_string(*flags.strategy);
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.fraction) cfg.budget.fraction = *flags.fraction;
  if (flags.rounds) cfg.budget.rounds = *flags.rounds;
  if (flags.voxels_per_round) cfg.budget.voxels_per_round = *flags.voxels_per_round;
  if (flags.pretrain_steps) cfg.training.pretrain_steps = *flags.pretrain_steps;
  if (flags.steps_per_round) cfg.training.steps_per_round = *flags.steps_per_round;
  if (flags.height) cfg.world.height = *flags.height;
  if (flags.width) cfg.world.width = *flags.width;
  if (flags.data_dir) cfg.data_dir = *flags.data_dir;
  if (flags.class_map) cfg.class_map = *flags.class_map;
  if (flags.no_hfa) cfg.training.use_hfa = false;
  if (flags.no_mixup) cfg.training.use_mixup = false;
  if (flags.no_focal) cfg.training.use_focal = false;
  if (flags.no_mixing) cfg.training.use_mixing = false;

  cfg.finalize();
  return cfg;
}

RunConfig load_and_resolve(const std::optional<std::filesystem::path>& config_path,
                           const Overrides& flags) {
  std::optional<json> file;
  if (config_path) {
    std::ifstream in(*config_path);
    if (!in) throw InvalidArgument("cannot open config file '" + config_path->string() + "'");
    try {
      file = json::parse(in);
    } catch (const json::parse_error& e) {
      throw InvalidArgument("config file '" + config_path->string() + "': " + e.what());
    }
  }
  return resolve_config(file ? &*file : nullptr, flags, std::getenv("HYPERADA_SEED"));
}

json to_json(const RunConfig& cfg) {
  json training = cfg.training;
  training.erase("modality");
  training.erase("seed");
  const auto& s = cfg.world.shift;
  return json{
      {"modality", to_string(cfg.modality)},
      {"strategy", acquisition::to_string(cfg.strategy)},
      {"seed", cfg.seed},
      {"budget",
       {{"fraction", cfg.budget.fraction},
        {"rounds", cfg.budget.rounds},
        {"voxels_per_round", cfg.budget.voxels_per_round}}},
      {"world",
       {{"height", cfg.world.height},
        {"width", cfg.world.width},
        {"beams", cfg.world.beams},
        {"azimuth_steps", cfg.world.azimuth_steps},
        {"noise_scale", s.noise_scale},
        {"hue_shift", s.hue_shift},
        {"thin_dropout", s.thin_dropout},
        {"density_factor", s.density_factor},
        {"beam_distortion", s.beam_distortion},
        {"intensity_gain", s.intensity_gain},
        {"intensity_offset", s.intensity_offset}}},
      {"datasets",
       {{"source", cfg.datasets.source},
        {"target_train", cfg.datasets.target_train},
        {"target_eval", cfg.datasets.target_eval}}},
      {"training", training},
      {"data_dir", cfg.data_dir},
      {"class_map", cfg.class_map},
  };
}

std::string canonical_text(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

std::string config_hash(const RunConfig& cfg) { return trainer::sha256_hex(canonical_text(cfg)); }

}  // namespace hyperada::cli
