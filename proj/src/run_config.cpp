#include "hern/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "hern/error.hpp"
#include "hern/seeding.hpp"

namespace hern {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
T get_as(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

json synthetic_block(const SyntheticSpec& spec) {
  json j = to_json(spec);
  j.erase("seed");
  return j;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  schedule.validate();
  data.synthetic.validate();
  if (data.synthetic.seed != seed) {
    throw ConfigError("run config: data seed " + std::to_string(data.synthetic.seed) +
                      " differs from the run seed " + std::to_string(seed));
  }
  if (data.synthetic.scale != model.output_scale) {
    throw ConfigError("run config: data scale " + std::to_string(data.synthetic.scale) +
                      " differs from model output_scale " + std::to_string(model.output_scale));
  }
  const int raw_side = std::min(data.synthetic.height, data.synthetic.width) / data.synthetic.scale;
  if (schedule.max_patch_size() > raw_side) {
    throw ConfigError("run config: patch size " + std::to_string(schedule.max_patch_size()) +
                      " exceeds the synthetic RAW side " + std::to_string(raw_side));
  }
  if (data.root.empty()) throw ConfigError("run config: data.root is empty");
  if (output_dir.empty()) throw ConfigError("run config: output_dir is empty");
}

void RunConfig::set_seed(std::uint64_t value) {
  seed = value;
  data.synthetic.seed = value;
}

RunConfig RunConfig::desk() {
  RunConfig c;
  c.model = ModelConfig::tiny();
  c.schedule = TrainSchedule::desk();
  c.data.root = "data/desk";
  c.output_dir = "runs/desk";
  return c;
}

RunConfig RunConfig::paper() {
  RunConfig c;
  c.model.output_scale = 2;
  c.schedule = TrainSchedule::paper();
  c.data.root = "data/paper";
  c.data.synthetic.height = 448;
  c.data.synthetic.width = 448;
  c.data.synthetic.scale = 2;
  c.output_dir = "runs/paper";
  return c;
}

RunConfig RunConfig::preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

RunSeeds run_seeds(std::uint64_t seed) {
  return RunSeeds{seed, named_seed(seed, "init"), named_seed(seed, "shuffle")};
}

json to_json(const TrainSchedule& schedule) {
  json list = json::array();
  for (const auto& s : schedule.stages) {
    list.push_back({{"patch_size", s.patch_size},
                    {"epochs", s.epochs},
                    {"learning_rate", s.learning_rate},
                    {"batch_size", s.batch_size}});
  }
  return list;
}

TrainSchedule train_schedule_from_json(const json& j) {
  if (!j.is_array()) throw ConfigError("schedule: expected a list of stages");
  const std::set<std::string> keys{"patch_size", "epochs", "learning_rate", "batch_size"};
  TrainSchedule schedule;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string where = "schedule[" + std::to_string(i) + "]";
    reject_unknown(j[i], keys, where);
    for (const auto& key : keys) {
      if (!j[i].contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
    }
    schedule.stages.push_back(TrainStage{get_as<int>(j[i], "patch_size", where),
                                         get_as<int>(j[i], "epochs", where),
                                         get_as<double>(j[i], "learning_rate", where),
                                         get_as<int>(j[i], "batch_size", where)});
  }
  schedule.validate();
  return schedule;
}

json to_json(const RunConfig& config) {
  return json{{"model", to_json(config.model)},
              {"schedule", to_json(config.schedule)},
              {"data", {{"root", config.data.root.string()},
                        {"synthetic", synthetic_block(config.data.synthetic)}}},
              {"seed", config.seed},
              {"output_dir", config.output_dir.string()}};
}

RunConfig run_config_from_json(const json& j, const RunConfig& base) {
  reject_unknown(j, {"model", "schedule", "data", "seed", "output_dir"}, "run config");
  RunConfig c = base;
  if (j.contains("seed")) c.seed = get_as<std::uint64_t>(j, "seed", "run config");
  if (j.contains("output_dir")) {
    c.output_dir = get_as<std::string>(j, "output_dir", "run config");
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    if (!m.is_object()) throw ConfigError("model: expected a JSON object");
    json merged = to_json(base.model);
    merged.merge_patch(m);
    c.model = model_config_from_json(merged);
  }
  if (j.contains("schedule")) c.schedule = train_schedule_from_json(j.at("schedule"));
  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d, {"root", "synthetic"}, "data");
    if (d.contains("root")) c.data.root = get_as<std::string>(d, "root", "data");
    if (d.contains("synthetic")) {
      const json& s = d.at("synthetic");
      if (!s.is_object()) throw ConfigError("data.synthetic: expected a JSON object");
      if (s.contains("seed")) {
        throw ConfigError("data.synthetic: 'seed' is not allowed; set the top-level seed");
      }
      json merged = synthetic_block(base.data.synthetic);
      merged.merge_patch(s);
      c.data.synthetic = synthetic_spec_from_json(merged);
    }
  }
  c.set_seed(c.seed);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read run config '" + path.string() + "'");
  std::stringstream text;
  text << in.rdbuf();
  json j;
  try {
    j = json::parse(text.str());
  } catch (const json::parse_error& e) {
    throw ConfigError("run config '" + path.string() + "': " + e.what());
  }
  return run_config_from_json(j, base);
}

}  // namespace hern
