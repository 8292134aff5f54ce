#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>

#include "pgpref/commands.hpp"
#include "pgpref/config.hpp"
#include "pgpref/diagnostics.hpp"
#include "pgpref/errors.hpp"
#include "pgpref/io.hpp"
#include "pgpref/trainer.hpp"

namespace py = pybind11;
using namespace pgpref;

namespace {

ExperimentConfig build_config(const std::string& text, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = text.empty() ? ExperimentConfig{} : parse_experiment(text, "<python>");
  for (const auto& o : overrides) apply_override(cfg, o);
  cfg.run.validate();
  return cfg;
}

py::dict stats_dict(const DiagnoseRow& row) {
  py::dict d;
  d["estimator"] = row.estimator;
  d["max_bias_in_se"] = row.stats.max_bias_in_se;
  d["trace_variance"] = row.stats.trace_variance;
  d["n"] = row.stats.n;
  d["empirical_mean"] = row.stats.empirical_mean;
  d["std_error"] = row.stats.std_error;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "pgpref core bindings";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<BudgetError>(m, "BudgetError", base.ptr());

  m.def("default_config", [] { return serialize_experiment(ExperimentConfig{}); },
        "INI text of the default experiment.");
  m.def("config_keys", &config_keys);
  m.def(
      "normalize_config",
      [](const std::string& text, const std::vector<std::string>& overrides) {
        return serialize_experiment(build_config(text, overrides));
      },
      py::arg("text") = "", py::arg("overrides") = std::vector<std::string>{},
      "Parse, apply overrides, validate and re-serialize a config.");

  m.def(
      "train",
      [](const std::string& text, const std::vector<std::string>& overrides, const std::string& out_dir) {
        const auto cfg = build_config(text, overrides);
        std::string jsonl;
        {
          py::gil_scoped_release release;
          const auto result = out_dir.empty() ? run_training(cfg.run) : train_to_dir(cfg, out_dir, "run");
          jsonl = metrics_jsonl(result.history);
        }
        return jsonl;
      },
      py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{}, py::arg("out_dir") = "",
      "Run one training; returns metrics as JSONL text.");

  m.def(
      "diagnose",
      [](const std::string& text, const std::vector<std::string>& overrides, const std::vector<std::string>& names,
         int reps, std::uint64_t seed) {
        const auto cfg = build_config(text, overrides);
        std::vector<DiagnoseRow> rows;
        {
          py::gil_scoped_release release;
          rows = run_diagnose(cfg.run, names, reps, seed);
        }
        py::list out;
        for (const auto& r : rows) out.append(stats_dict(r));
        return out;
      },
      py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{},
      py::arg("estimators") = std::vector<std::string>{"oracle", "reinforce", "rloo2", "rloo4"},
      py::arg("reps") = 10000, py::arg("seed") = 1);

  m.def(
      "report",
      [](const std::vector<std::filesystem::path>& dirs) { return report_csv(dirs); }, py::arg("dirs"),
      "Long CSV (step, metric, value, run_id) for run or sweep directories.");

  m.def(
      "trajectory_count",
      [](int vocab_size, int eos_id, int t_max) { return trajectory_count(VocabSpec{vocab_size, eos_id}, t_max); },
      py::arg("vocab_size"), py::arg("eos_id"), py::arg("t_max"));

  m.def(
      "enumerate_trajectories",
      [](int vocab_size, int eos_id, int t_max) {
        std::vector<std::vector<int>> out;
        for (const auto& y : enumerate_trajectories(VocabSpec{vocab_size, eos_id}, Prompt{0, 0}, t_max)) {
          out.push_back(y.tokens);
        }
        return out;
      },
      py::arg("vocab_size"), py::arg("eos_id"), py::arg("t_max"));

  m.def(
      "exact_gradient",
      [](const std::string& text, const std::vector<std::string>& overrides, int prompt) {
        const auto cfg = build_config(text, overrides);
        const auto& r = cfg.run;
        const auto policy = pretrain_policy(r.task, r.vocab, r.n_prompts, r.t_max, r.pretrain_strength,
                                            r.pretrain_seed);
        const RewardFn gold = [&](const Trajectory& y) { return gold_reward(r.task, y); };
        return exact_policy_gradient(policy, gold, r.shaping, policy, Prompt{prompt, 0});
      },
      py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{}, py::arg("prompt") = 0,
      "Exact gradient of expected gold reward at the pretrained policy (ref = policy).");

  m.def(
      "expected_gold",
      [](const std::string& text, const std::vector<std::string>& overrides) {
        const auto cfg = build_config(text, overrides);
        const auto& r = cfg.run;
        return exact_expected_gold(
            pretrain_policy(r.task, r.vocab, r.n_prompts, r.t_max, r.pretrain_strength, r.pretrain_seed), r.task);
      },
      py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{},
      "Exact expected gold reward of the pretrained policy, averaged over prompts.");
}
