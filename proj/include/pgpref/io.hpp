#pragma once

// On-disk formats: per-step metrics JSONL, summary CSV, checkpoint JSON and
// the long-format report CSV. Every file is written through a temporary
// sibling and renamed into place.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pgpref/config.hpp"
#include "pgpref/trainer.hpp"

namespace pgpref {

void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

// Metric names in file order. The eval names appear only on evaluated steps.
const std::vector<std::string>& step_metric_names();
const std::vector<std::string>& eval_metric_names();

// One JSON object per line; non-finite values are written as null.
std::string metrics_line(const MetricsRecord& rec);
std::string metrics_jsonl(std::span<const MetricsRecord> history);

// Columns: run_id, then step_metric_names, then eval_metric_names. Eval
// columns are empty for records without an evaluation.
std::string summary_csv_header();
std::string summary_csv_row(const std::string& run_id, const MetricsRecord& rec);

inline constexpr const char* kCheckpointFormat = "pgpref-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ExperimentConfig config;
  TrainState state;
};

std::string checkpoint_json(const ExperimentConfig& cfg, const TrainState& state);
// Throws Error on a malformed document or shape mismatch.
Checkpoint parse_checkpoint(std::string_view text);
void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& cfg, const TrainState& state);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct LongRow {
  std::int64_t step = 0;
  std::string metric;
  double value = 0.0;
  std::string run_id;
};

// Reshapes metrics JSONL into (step, metric, value, run_id) rows, metrics in
// file order, null values skipped. Throws Error naming the 1-based line number
// of the first malformed line.
std::vector<LongRow> reshape_metrics(std::string_view jsonl, const std::string& run_id);
std::string long_csv(std::span<const LongRow> rows);
// Inverse of long_csv, used to check the reshape is lossless.
std::vector<LongRow> parse_long_csv(std::string_view csv);

}  // namespace pgpref
