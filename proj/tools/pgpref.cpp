// pgpref command-line driver: train, sweep, diagnose, report.
//
// Exit codes: 0 success, 1 other failure, 2 config error, 3 numeric failure,
// 4 enumeration budget exceeded. Failures also print one JSON object on stderr.

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pgpref/commands.hpp"
#include "pgpref/config.hpp"
#include "pgpref/errors.hpp"
#include "pgpref/io.hpp"

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kNumeric = 3, kBudget = 4 };

int report_error(const char* kind, int code, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["exit_code"] = code;
  j["message"] = message;
  std::cerr << j.dump() << std::endl;
  return code;
}

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::optional<std::uint64_t> seed;
};

pgpref::ExperimentConfig load(const Common& c) {
  pgpref::ExperimentConfig cfg = c.config.empty() ? pgpref::ExperimentConfig{} : pgpref::load_experiment(c.config);
  for (const auto& s : c.sets) pgpref::apply_override(cfg, s);
  if (c.seed) cfg.run.seed = *c.seed;
  if (!c.out.empty()) cfg.output.dir = c.out;
  cfg.run.validate();
  return cfg;
}

void add_common(CLI::App* cmd, Common& c, bool with_seed) {
  cmd->add_option("--config", c.config, "experiment file (defaults apply when omitted)");
  cmd->add_option("--set", c.sets, "override, section.key=value (repeatable)");
  cmd->add_option("--out", c.out, "output directory");
  if (with_seed) cmd->add_option("--seed", c.seed, "overrides seeds.seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pgpref: policy-gradient preference optimization on tabular toy tasks"};
  app.require_subcommand(1);

  Common train_opts;
  auto* train = app.add_subcommand("train", "train one policy and write metrics + checkpoint");
  add_common(train, train_opts, true);

  Common sweep_opts;
  auto* sweep = app.add_subcommand("sweep", "run a grid of trainings from a sweep file");
  add_common(sweep, sweep_opts, false);

  Common diag_opts;
  std::string estimators = "oracle,reinforce,rloo2,rloo4";
  int reps = 10000;
  auto* diagnose = app.add_subcommand("diagnose", "estimator bias and variance against the exact gradient");
  add_common(diagnose, diag_opts, true);
  diagnose->add_option("--estimators", estimators, "comma list: oracle, reinforce, reinforce_ma, rloo<k>, vanilla_pg, gae<lambda>");
  diagnose->add_option("--reps", reps, "replications per estimator (>= 100)");

  std::vector<std::string> report_dirs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "reshape run metrics into a long CSV");
  report->add_option("dirs", report_dirs, "run or sweep directories")->required();
  report->add_option("--out", report_out, "output file (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("config", kConfig, e.what());
  }

  try {
    if (*train) {
      const auto cfg = load(train_opts);
      const auto result = pgpref::train_to_dir(cfg, cfg.output.dir, fs::path(cfg.output.dir).filename().string());
      std::cout << "wrote " << result.history.size() << " steps to " << cfg.output.dir << "\n";
    } else if (*sweep) {
      if (sweep_opts.config.empty()) throw pgpref::ConfigError("sweep needs --config <sweep file>");
      auto spec = pgpref::load_sweep(sweep_opts.config, sweep_opts.sets);
      const fs::path out = sweep_opts.out.empty() ? fs::path(spec.base.output.dir) : fs::path(sweep_opts.out);
      pgpref::run_sweep(spec, out, std::cout);
      std::cout << "wrote " << (out / "combined.csv").string() << "\n";
    } else if (*diagnose) {
      const auto cfg = load(diag_opts);
      std::vector<std::string> names;
      std::stringstream ss(estimators);
      for (std::string n; std::getline(ss, n, ',');) {
        if (!n.empty()) names.push_back(n);
      }
      const auto rows = pgpref::run_diagnose(cfg.run, names, reps, cfg.run.seed);
      pgpref::write_file_atomic(fs::path(cfg.output.dir) / "diagnose.csv", pgpref::diagnose_csv(rows));
      std::cout << pgpref::diagnose_table(rows);
    } else if (*report) {
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      const auto csv = pgpref::report_csv(dirs);
      if (report_out.empty()) {
        std::cout << csv;
      } else {
        pgpref::write_file_atomic(report_out, csv);
      }
    }
  } catch (const pgpref::ConfigError& e) {
    return report_error("config", kConfig, e.what());
  } catch (const pgpref::NumericError& e) {
    return report_error("numeric", kNumeric, e.what());
  } catch (const pgpref::BudgetError& e) {
    return report_error("budget", kBudget, e.what());
  } catch (const std::exception& e) {
    return report_error("failure", kFailure, e.what());
  }
  return kOk;
}
