#include "pgpref/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pgpref/errors.hpp"

namespace pgpref {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw Error("write to '" + tmp.string() + "' failed");
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// ---------------------------------------------------------------------------
// Metrics

const std::vector<std::string>& step_metric_names() {
  static const std::vector<std::string> names = {"step", "r_mean", "R_mean",   "kl",  "clip_frac", "var_trace",
                                                 "baseline", "gold", "lr", "samples"};
  return names;
}

const std::vector<std::string>& eval_metric_names() {
  static const std::vector<std::string> names = {"winrate", "distinct1",  "distinct2",  "ppl",
                                                 "reward_var", "length_mean", "eval_reward"};
  return names;
}

namespace {

ojson record_json(const MetricsRecord& rec) {
  ojson j;
  j["step"] = rec.step;
  j["r_mean"] = rec.r_mean;
  j["R_mean"] = rec.R_mean;
  j["kl"] = rec.kl;
  j["clip_frac"] = rec.clip_frac;
  j["var_trace"] = rec.var_trace;
  j["baseline"] = rec.baseline;
  j["gold"] = rec.gold;
  j["lr"] = rec.lr;
  j["samples"] = rec.samples;
  if (rec.eval) {
    const auto& e = *rec.eval;
    j["winrate"] = e.winrate_vs_ref;
    j["distinct1"] = e.distinct_1;
    j["distinct2"] = e.distinct_2;
    j["ppl"] = e.ppl_proxy;
    j["reward_var"] = e.reward_variance;
    j["length_mean"] = e.mean_length;
    j["eval_reward"] = e.mean_reward_r;
  }
  return j;
}

std::string csv_real(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return format_real(x);
}

}  // namespace

std::string metrics_line(const MetricsRecord& rec) { return record_json(rec).dump(); }

std::string metrics_jsonl(std::span<const MetricsRecord> history) {
  std::string out;
  for (const auto& rec : history) {
    out += metrics_line(rec);
    out += '\n';
  }
  return out;
}

std::string summary_csv_header() {
  std::string h = "run_id";
  for (const auto& n : step_metric_names()) h += "," + n;
  for (const auto& n : eval_metric_names()) h += "," + n;
  return h + "\n";
}

std::string summary_csv_row(const std::string& run_id, const MetricsRecord& rec) {
  std::string row = run_id;
  const auto add = [&row](const std::string& cell) { row += "," + cell; };
  add(std::to_string(rec.step));
  for (double x : {rec.r_mean, rec.R_mean, rec.kl, rec.clip_frac, rec.var_trace, rec.baseline, rec.gold, rec.lr}) {
    add(csv_real(x));
  }
  add(std::to_string(rec.samples));
  if (rec.eval) {
    const auto& e = *rec.eval;
    for (double x : {e.winrate_vs_ref, e.distinct_1, e.distinct_2, e.ppl_proxy, e.reward_variance, e.mean_length,
                     e.mean_reward_r}) {
      add(csv_real(x));
    }
  } else {
    for (std::size_t i = 0; i < eval_metric_names().size(); ++i) add("");
  }
  return row + "\n";
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

ojson traj_json(const Trajectory& y) {
  return ojson{{"prompt_id", y.prompt_id}, {"tokens", y.tokens}, {"eos", y.terminated_by_eos}};
}

Trajectory traj_from(const ojson& j) {
  Trajectory y;
  y.prompt_id = j.at("prompt_id").get<int>();
  y.tokens = j.at("tokens").get<std::vector<Token>>();
  y.terminated_by_eos = j.at("eos").get<bool>();
  return y;
}

void fill(std::span<double> dst, const ojson& src, const char* what) {
  const auto v = src.get<std::vector<double>>();
  if (v.size() != dst.size()) {
    throw Error(std::string("checkpoint: '") + what + "' has " + std::to_string(v.size()) + " entries, expected " +
                std::to_string(dst.size()));
  }
  std::copy(v.begin(), v.end(), dst.begin());
}

}  // namespace

std::string checkpoint_json(const ExperimentConfig& cfg, const TrainState& state) {
  const auto& space = state.policy.space();
  ojson j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["config"] = serialize_experiment(cfg);
  j["space"] = {{"vocab_size", space.vocab().size},
                {"eos_id", space.vocab().eos_id},
                {"n_prompts", space.n_prompts()},
                {"t_max", space.t_max()}};
  j["step"] = state.step;
  j["samples_seen"] = state.samples_seen;
  j["value_updates"] = state.value_updates;
  j["baseline"] = {{"running_mean", state.baseline.running_mean}, {"count", state.baseline.count}};
  const auto as_vec = [](std::span<const double> s) { return std::vector<double>(s.begin(), s.end()); };
  j["policy"] = as_vec(state.policy.theta());
  j["ref"] = as_vec(state.ref.theta());
  j["values"] = as_vec(state.values.values());
  j["reward_model"] = state.rm ? ojson(state.rm->weights) : ojson(nullptr);
  ojson pairs = ojson::array();
  for (const auto& p : state.pairs) {
    pairs.push_back({{"prompt_id", p.prompt_id},
                     {"y_plus", traj_json(p.y_plus)},
                     {"y_minus", traj_json(p.y_minus)},
                     {"label_flipped", p.label_flipped}});
  }
  j["pairs"] = std::move(pairs);
  return j.dump(1) + "\n";
}

Checkpoint parse_checkpoint(std::string_view text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const ojson::parse_error& e) {
    throw Error(std::string("checkpoint: invalid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw Error("checkpoint: unexpected format tag");
    if (j.at("version").get<int>() != kCheckpointVersion) throw Error("checkpoint: unsupported version");
    ExperimentConfig config = parse_experiment(j.at("config").get<std::string>(), "checkpoint config");
    const auto& sp = j.at("space");
    const StateSpace space{VocabSpec{sp.at("vocab_size").get<int>(), sp.at("eos_id").get<int>()},
                           sp.at("n_prompts").get<int>(), sp.at("t_max").get<int>()};
    const auto& run = config.run;
    if (!(space == StateSpace{run.vocab, run.n_prompts, run.t_max})) {
      throw Error("checkpoint: state space does not match the embedded config");
    }
    PolicyParams policy{space}, ref{space};
    ValueTable values{space};
    fill(policy.theta(), j.at("policy"), "policy");
    fill(ref.theta(), j.at("ref"), "ref");
    fill(values.values(), j.at("values"), "values");
    std::optional<RewardModel> rm;
    if (!j.at("reward_model").is_null()) {
      RewardModel m = RewardModel::zeros(space.vocab(), space.t_max());
      fill(m.weights, j.at("reward_model"), "reward_model");
      rm = std::move(m);
    }
    std::vector<PreferencePair> pairs;
    for (const auto& p : j.at("pairs")) {
      pairs.push_back({p.at("prompt_id").get<int>(), traj_from(p.at("y_plus")), traj_from(p.at("y_minus")),
                       p.at("label_flipped").get<bool>()});
    }
    BaselineState baseline{j.at("baseline").at("running_mean").get<double>(),
                           j.at("baseline").at("count").get<std::int64_t>()};
    return Checkpoint{std::move(config),
                      TrainState{std::move(policy), std::move(ref), std::move(values), baseline, std::move(rm),
                                 std::move(pairs), j.at("step").get<int>(), j.at("samples_seen").get<std::int64_t>(),
                                 j.at("value_updates").get<int>()}};
  } catch (const ojson::exception& e) {
    throw Error(std::string("checkpoint: malformed document: ") + e.what());
  }
}

void save_checkpoint(const fs::path& path, const ExperimentConfig& cfg, const TrainState& state) {
  write_file_atomic(path, checkpoint_json(cfg, state));
}

Checkpoint load_checkpoint(const fs::path& path) { return parse_checkpoint(read_file(path)); }

// ---------------------------------------------------------------------------
// Long-format report

std::vector<LongRow> reshape_metrics(std::string_view jsonl, const std::string& run_id) {
  std::vector<LongRow> rows;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < jsonl.size()) {
    auto end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    const auto line = jsonl.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const auto fail = [&](const std::string& why) -> Error {
      return Error("metrics line " + std::to_string(line_no) + ": " + why);
    };
    ojson j;
    try {
      j = ojson::parse(line);
    } catch (const ojson::parse_error&) {
      throw fail("not valid JSON");
    }
    if (!j.is_object()) throw fail("not a JSON object");
    const auto step_it = j.find("step");
    if (step_it == j.end() || !step_it->is_number_integer()) throw fail("missing integer 'step'");
    const auto step = step_it->get<std::int64_t>();
    for (const auto& [name, value] : j.items()) {
      if (name == "step" || value.is_null()) continue;
      if (!value.is_number()) throw fail("metric '" + name + "' is not a number");
      rows.push_back({step, name, value.get<double>(), run_id});
    }
  }
  return rows;
}

std::string long_csv(std::span<const LongRow> rows) {
  std::string out = "step,metric,value,run_id\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + r.metric + "," + csv_real(r.value) + "," + r.run_id + "\n";
  }
  return out;
}

std::vector<LongRow> parse_long_csv(std::string_view csv) {
  std::vector<LongRow> rows;
  std::istringstream in{std::string(csv)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line != "step,metric,value,run_id") throw Error("long csv: unexpected header");
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4) throw Error("long csv line " + std::to_string(line_no) + ": expected 4 cells");
    LongRow r;
    r.step = std::stoll(cells[0]);
    r.metric = cells[1];
    const auto& v = cells[2];
    const auto res = std::from_chars(v.data(), v.data() + v.size(), r.value);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
      throw Error("long csv line " + std::to_string(line_no) + ": bad value '" + v + "'");
    }
    r.run_id = cells[3];
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace pgpref
