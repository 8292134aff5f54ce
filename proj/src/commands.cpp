#include "pgpref/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include <boost/algorithm/string/trim.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "pgpref/errors.hpp"
#include "pgpref/io.hpp"

namespace pgpref {

namespace fs = std::filesystem;

RunResult train_to_dir(const ExperimentConfig& cfg, const fs::path& out_dir, const std::string& run_id) {
  cfg.run.validate();
  RunResult result = run_training(cfg.run);

  std::string summary = summary_csv_header();
  if (!result.history.empty()) summary += summary_csv_row(run_id, result.history.back());

  write_file_atomic(out_dir / "config.ini", serialize_experiment(cfg));
  write_file_atomic(out_dir / "metrics.jsonl", metrics_jsonl(result.history));
  if (cfg.output.checkpoint) save_checkpoint(out_dir / "checkpoint.json", cfg, result.final_state);
  write_file_atomic(out_dir / "summary.csv", summary);
  return result;
}

// ---------------------------------------------------------------------------
// Sweeps

SweepSpec parse_sweep(std::string_view text, const fs::path& base_dir, const std::vector<std::string>& base_overrides) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("sweep:" + std::to_string(e.line()) + ": " + e.message());
  }

  SweepSpec spec;
  spec.max_runs = kDefaultMaxRuns;
  bool have_version = false;
  std::string base_path;
  for (const auto& [name, node] : tree) {
    if (name == "axes") continue;
    if (!node.empty()) throw ConfigError("sweep: unknown section '" + name + "'");
    if (name == "version") {
      if (node.data() != std::to_string(kConfigVersion)) {
        throw ConfigError("sweep: unsupported version " + node.data());
      }
      have_version = true;
    } else if (name == "base") {
      base_path = node.data();
    } else if (name == "max_runs") {
      try {
        std::size_t used = 0;
        spec.max_runs = std::stoi(node.data(), &used);
        if (used != node.data().size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ConfigError("sweep: key 'max_runs': expected an integer, got '" + node.data() + "'");
      }
      if (spec.max_runs < 1) throw ConfigError("sweep: max_runs must be >= 1");
    } else {
      throw ConfigError("sweep: unknown key '" + name + "'");
    }
  }
  if (!have_version) throw ConfigError("sweep: missing mandatory key 'version'");
  if (base_path.empty()) throw ConfigError("sweep: missing mandatory key 'base'");

  fs::path base = base_path;
  if (base.is_relative()) base = base_dir / base;
  spec.base = load_experiment(base);
  for (const auto& o : base_overrides) apply_override(spec.base, o);
  spec.base.run.validate();

  if (auto axes = tree.get_child_optional("axes")) {
    for (const auto& [key, node] : *axes) {
      std::vector<std::string> values;
      std::stringstream ss(node.data());
      std::string v;
      while (std::getline(ss, v, ',')) {
        boost::algorithm::trim(v);
        if (v.empty()) throw ConfigError("sweep: axis '" + key + "' has an empty value");
        values.push_back(v);
      }
      if (values.empty()) throw ConfigError("sweep: axis '" + key + "' has no values");
      // Canonicalize through the config so directory names are stable.
      ExperimentConfig probe = spec.base;
      for (auto& value : values) {
        set_config_key(probe, key, value);
        value = get_config_key(probe, key);
      }
      spec.axes.emplace_back(key, std::move(values));
    }
  }
  return spec;
}

SweepSpec load_sweep(const fs::path& path, const std::vector<std::string>& base_overrides) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error&) {
    throw ConfigError("cannot read sweep file '" + path.string() + "'");
  }
  return parse_sweep(text, path.parent_path(), base_overrides);
}

std::vector<SweepPoint> expand_sweep(const SweepSpec& spec) {
  std::size_t total = 1;
  for (const auto& [key, values] : spec.axes) {
    total *= values.size();
    if (total > static_cast<std::size_t>(spec.max_runs)) break;
  }
  if (total > static_cast<std::size_t>(spec.max_runs)) {
    std::size_t full = 1;
    for (const auto& axis : spec.axes) full *= axis.second.size();
    throw ConfigError("sweep has " + std::to_string(full) + " runs, above the cap of " +
                      std::to_string(spec.max_runs));
  }

  std::vector<SweepPoint> points{{"", spec.base}};
  for (const auto& [key, values] : spec.axes) {
    std::vector<SweepPoint> next;
    for (const auto& p : points) {
      for (const auto& v : values) {
        SweepPoint q = p;
        set_config_key(q.config, key, v);
        q.name += (q.name.empty() ? "" : "_") + key + "=" + v;
        next.push_back(std::move(q));
      }
    }
    points = std::move(next);
  }
  if (points.size() == 1 && points[0].name.empty()) points[0].name = "base";
  for (auto& p : points) {
    try {
      p.config.run.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("sweep point " + p.name + ": " + e.what());
    }
  }
  std::sort(points.begin(), points.end(), [](const SweepPoint& a, const SweepPoint& b) { return a.name < b.name; });
  return points;
}

void run_sweep(const SweepSpec& spec, const fs::path& out_dir, std::ostream& log) {
  const auto points = expand_sweep(spec);
  std::string combined = summary_csv_header();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    log << "[" << (i + 1) << "/" << points.size() << "] " << p.name << "\n" << std::flush;
    const auto result = train_to_dir(p.config, out_dir / p.name, p.name);
    for (std::size_t s = 0; s < result.history.size(); ++s) {
      const auto& rec = result.history[s];
      if (rec.eval || s + 1 == result.history.size()) combined += summary_csv_row(p.name, rec);
    }
  }
  write_file_atomic(out_dir / "combined.csv", combined);
}

// ---------------------------------------------------------------------------
// Diagnostics

std::vector<DiagnoseRow> run_diagnose(const RunConfig& cfg, const std::vector<std::string>& estimators, int reps,
                                      std::uint64_t seed) {
  cfg.validate();
  if (reps < kMinReps) {
    throw ConfigError("--reps " + std::to_string(reps) + " is below the minimum of " + std::to_string(kMinReps));
  }
  if (estimators.empty()) throw ConfigError("no estimators given");
  std::vector<EstimatorSpec> specs;
  for (const auto& name : estimators) specs.push_back(parse_estimator(name));

  const PolicyParams policy =
      pretrain_policy(cfg.task, cfg.vocab, cfg.n_prompts, cfg.t_max, cfg.pretrain_strength, cfg.pretrain_seed);
  const PolicyParams& ref = policy;
  const RewardFn gold = [task = cfg.task](const Trajectory& y) { return gold_reward(task, y); };
  const Prompt prompt{0, 0};
  const auto oracle = exact_policy_gradient(policy, gold, cfg.shaping, ref, prompt);
  ValueTable values = exact_state_values(policy, ref, gold, cfg.shaping.beta, cfg.gae.gamma);
  for (double& v : values.values()) v *= 0.5;

  EstimatorContext ctx;
  ctx.policy = &policy;
  ctx.ref = &ref;
  ctx.reward = gold;
  ctx.beta = cfg.shaping.beta;
  ctx.prompt = prompt;
  ctx.values = &values;
  ctx.frozen_baseline = exact_expected_reward(policy, gold, prompt);
  ctx.oracle = oracle;

  std::vector<DiagnoseRow> rows;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    Rng rng = make_stream(seed, 0xd1a6, i);
    rows.push_back({specs[i].name, estimator_stats(make_estimator(specs[i], ctx), oracle, reps, rng)});
  }
  return rows;
}

std::string diagnose_csv(const std::vector<DiagnoseRow>& rows) {
  std::string out = "estimator,max_bias_in_se,trace_variance,n\n";
  for (const auto& r : rows) {
    out += r.estimator + "," + format_real(r.stats.max_bias_in_se) + "," + format_real(r.stats.trace_variance) + "," +
           std::to_string(r.stats.n) + "\n";
  }
  return out;
}

std::string diagnose_table(const std::vector<DiagnoseRow>& rows) {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof line, "%-14s %16s %16s %10s\n", "estimator", "max_bias_in_se", "trace_variance", "n");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-14s %16.4f %16.6g %10d\n", r.estimator.c_str(), r.stats.max_bias_in_se,
                  r.stats.trace_variance, r.stats.n);
    out += line;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

std::string dir_name(const fs::path& dir) {
  auto norm = dir.lexically_normal();
  if (norm.filename().empty()) norm = norm.parent_path();
  auto name = norm.filename().string();
  return name.empty() || name == "." ? fs::absolute(norm).lexically_normal().filename().string() : name;
}

void append_run(std::vector<LongRow>& rows, const fs::path& dir) {
  const auto file = dir / "metrics.jsonl";
  const auto text = read_file(file);
  try {
    auto run = reshape_metrics(text, dir_name(dir));
    rows.insert(rows.end(), run.begin(), run.end());
  } catch (const Error& e) {
    throw Error(file.string() + ": " + e.what());
  }
}

}  // namespace

std::string report_csv(const std::vector<fs::path>& dirs) {
  if (dirs.empty()) throw ConfigError("report: no run directory given");
  std::vector<LongRow> rows;
  for (const auto& dir : dirs) {
    if (fs::exists(dir / "metrics.jsonl")) {
      append_run(rows, dir);
      continue;
    }
    if (!fs::is_directory(dir)) throw Error("report: '" + dir.string() + "' is not a directory");
    std::vector<fs::path> runs;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_directory() && fs::exists(entry.path() / "metrics.jsonl")) runs.push_back(entry.path());
    }
    if (runs.empty()) throw Error("report: no metrics.jsonl under '" + dir.string() + "'");
    std::sort(runs.begin(), runs.end());
    for (const auto& r : runs) append_run(rows, r);
  }
  return long_csv(rows);
}

}  // namespace pgpref
