#pragma once

// Experiment files: an INI document with a mandatory top-level `version = 1`
// and the sections task, policy, method, shaping, noise, schedule, eval, seeds,
// output, gae, ppo, value, rm. Keys are addressed as "section.key".

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pgpref/trainer.hpp"

namespace pgpref {

inline constexpr int kConfigVersion = 1;

struct OutputConfig {
  std::string dir = "runs/default";
  bool checkpoint = true;
  bool operator==(const OutputConfig&) const = default;
};

struct ExperimentConfig {
  RunConfig run;
  OutputConfig output;
  bool operator==(const ExperimentConfig&) const = default;
};

// Parses and validates. Throws ConfigError naming the offending key, or the
// line for syntax errors. `source` is used in messages only.
ExperimentConfig parse_experiment(std::string_view text, const std::string& source = "<config>");
ExperimentConfig load_experiment(const std::filesystem::path& path);

// Every key of the active task kind and all other sections, shortest
// round-trip formatting for reals.
std::string serialize_experiment(const ExperimentConfig& cfg);

// Sets one "section.key" from its textual value. Setting task.kind resets the
// task parameters to the defaults of the new kind. Does not validate the
// resulting config as a whole.
void set_config_key(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_key(const ExperimentConfig& cfg, const std::string& key);

// "section.key=value"
void apply_override(ExperimentConfig& cfg, std::string_view assignment);

// All addressable keys, in serialization order (task keys for every kind).
std::vector<std::string> config_keys();

std::string format_real(double x);

}  // namespace pgpref
