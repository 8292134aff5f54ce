#pragma once

// The four experiment commands as library calls. The CLI is a thin wrapper
// around these; tests and the Python module use them directly.

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "pgpref/config.hpp"
#include "pgpref/diagnostics.hpp"
#include "pgpref/trainer.hpp"

namespace pgpref {

// Runs the whole experiment in memory, then writes config.ini, metrics.jsonl,
// summary.csv and (unless disabled) checkpoint.json into `out_dir`. Nothing
// is written when the config is invalid or training fails.
RunResult train_to_dir(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                       const std::string& run_id = "run");

// Sweep file: top-level `version = 1`, `base = <config path>` (relative to the
// sweep file), optional `max_runs` (default 64), and an [axes] section of
// "section.key = v1, v2, ...".
struct SweepSpec {
  ExperimentConfig base;
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  int max_runs = 64;
};

inline constexpr int kDefaultMaxRuns = 64;

SweepSpec parse_sweep(std::string_view text, const std::filesystem::path& base_dir,
                      const std::vector<std::string>& base_overrides = {});
SweepSpec load_sweep(const std::filesystem::path& path, const std::vector<std::string>& base_overrides = {});

struct SweepPoint {
  std::string name;  // "key=value" joined by "_", in axis order
  ExperimentConfig config;
};

// Cartesian product in sorted name order. Every point is validated; throws
// ConfigError with the grid size when it exceeds max_runs.
std::vector<SweepPoint> expand_sweep(const SweepSpec& spec);

// One directory per point plus combined.csv with one row per (run, eval point);
// the final step is always included.
void run_sweep(const SweepSpec& spec, const std::filesystem::path& out_dir, std::ostream& log);

struct DiagnoseRow {
  std::string estimator;
  GradientStats stats;
};

// Bias / variance of each named estimator against the enumeration oracle on
// prompt 0 of the pretrained policy (ref = policy). vanilla_pg and gae<lambda>
// use half the exact state values as a fixed, deliberately imperfect table;
// reinforce_ma uses the exact expected shaped reward as its frozen baseline.
std::vector<DiagnoseRow> run_diagnose(const RunConfig& cfg, const std::vector<std::string>& estimators, int reps,
                                      std::uint64_t seed);
std::string diagnose_csv(const std::vector<DiagnoseRow>& rows);
std::string diagnose_table(const std::vector<DiagnoseRow>& rows);

// Long CSV for each run directory (its metrics.jsonl). A directory without
// metrics.jsonl is treated as a sweep root and its subdirectories are read in
// sorted order. run_id is the directory name.
std::string report_csv(const std::vector<std::filesystem::path>& dirs);

}  // namespace pgpref
