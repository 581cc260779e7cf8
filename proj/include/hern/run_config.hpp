#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "hern/dataset.hpp"
#include "hern/model.hpp"
#include "hern/trainer.hpp"
#include <json.hpp>

namespace hern {

struct DataConfig {
  std::filesystem::path root = "data";
  /// Generation parameters for make-dataset. Its seed always equals the
  /// run seed.
  SyntheticSpec synthetic;

  bool operator==(const DataConfig&) const = default;
};

/// Declarative description of one run.
struct RunConfig {
  ModelConfig model;
  TrainSchedule schedule;
  DataConfig data;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "run";

  /// Throws ConfigError on any invalid block, on a data seed other than the
  /// run seed, on a data scale other than the model's output scale, or on a
  /// stage patch larger than the synthetic RAW side.
  void validate() const;
  /// Sets the run seed and the synthetic data seed together.
  void set_seed(std::uint64_t value);

  /// Tiny model, desk schedule, 8 synthetic 32 x 32 pairs.
  static RunConfig desk();
  /// Full-size model at output scale 2, paper schedule, 448 x 448 pairs.
  static RunConfig paper();
  /// "desk" or "paper"; anything else throws ConfigError.
  static RunConfig preset(const std::string& name);

  bool operator==(const RunConfig&) const = default;
};

/// Sub-seeds derived from the run seed. `dataset` feeds SyntheticSpec::seed,
/// `init` the parameter initialisation and `train` shuffles, crops and flips.
struct RunSeeds {
  std::uint64_t dataset = 0;
  std::uint64_t init = 0;
  std::uint64_t train = 0;
};
RunSeeds run_seeds(std::uint64_t seed);

nlohmann::json to_json(const TrainSchedule& schedule);
/// A list of {patch_size, epochs, learning_rate, batch_size} objects, all
/// keys required.
TrainSchedule train_schedule_from_json(const nlohmann::json& j);

nlohmann::json to_json(const RunConfig& config);

/// Overlays `j` on `base`. Top-level keys are model, schedule, data, seed and
/// output_dir, all optional. The model and data.synthetic blocks are merged
/// key by key; the schedule list replaces the base schedule. Unknown keys at
/// any level throw ConfigError. The result is validated.
RunConfig run_config_from_json(const nlohmann::json& j, const RunConfig& base);

/// Reads a JSON file and overlays it on `base`. Throws IoError when the file
/// cannot be read and ConfigError when it does not parse.
RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base);

}  // namespace hern
