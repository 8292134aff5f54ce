#include "pgpref/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "pgpref/errors.hpp"

namespace pgpref {

namespace {

namespace pt = boost::property_tree;

const std::vector<std::string> kSections = {"task", "policy", "method", "shaping", "noise", "schedule", "eval",
                                            "seeds", "output", "gae", "ppo", "value", "rm"};

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("key '" + key + "': expected " + expected + ", got '" + value + "'");
}

template <typename T>
T parse_integer(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = first + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last || value.empty()) bad_value(key, value, "an integer");
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  double out = 0.0;
  const char* first = value.data();
  const char* last = first + value.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last || value.empty()) bad_value(key, value, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  bad_value(key, value, "true or false");
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Field {
  std::string key;
  std::function<bool(const ExperimentConfig&)> applies;
  std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

bool always(const ExperimentConfig&) { return true; }

template <typename Task>
bool task_is(const ExperimentConfig& c) {
  return std::holds_alternative<Task>(c.run.task);
}

// Field builders for plain members reached through an accessor.
template <typename Access>
Field int_field(std::string key, Access access) {
  return {std::move(key), always,
          [access](ExperimentConfig& c, const std::string& k, const std::string& v) {
            access(c) = parse_integer<int>(k, v);
          },
          [access](const ExperimentConfig& c) { return std::to_string(access(c)); }};
}

template <typename Access>
Field u64_field(std::string key, Access access) {
  return {std::move(key), always,
          [access](ExperimentConfig& c, const std::string& k, const std::string& v) {
            access(c) = parse_integer<std::uint64_t>(k, v);
          },
          [access](const ExperimentConfig& c) { return std::to_string(access(c)); }};
}

template <typename Access>
Field real_field(std::string key, Access access) {
  return {std::move(key), always,
          [access](ExperimentConfig& c, const std::string& k, const std::string& v) { access(c) = parse_real(k, v); },
          [access](const ExperimentConfig& c) { return format_real(access(c)); }};
}

template <typename Access>
Field bool_field(std::string key, Access access) {
  return {std::move(key), always,
          [access](ExperimentConfig& c, const std::string& k, const std::string& v) { access(c) = parse_bool(k, v); },
          [access](const ExperimentConfig& c) { return fmt_bool(access(c)); }};
}

template <typename Task, typename Member>
Field task_field(std::string key, Member Task::*member) {
  Field f;
  f.key = std::move(key);
  f.applies = task_is<Task>;
  f.set = [member](ExperimentConfig& c, const std::string& k, const std::string& v) {
    auto* task = std::get_if<Task>(&c.run.task);
    if (task == nullptr) {
      throw ConfigError("key '" + k + "' does not apply to task kind '" + task_kind(c.run.task) + "'");
    }
    if constexpr (std::is_same_v<Member, double>) {
      task->*member = parse_real(k, v);
    } else {
      task->*member = parse_integer<Member>(k, v);
    }
  };
  f.get = [member](const ExperimentConfig& c) {
    const auto& task = std::get<Task>(c.run.task);
    if constexpr (std::is_same_v<Member, double>) {
      return format_real(task.*member);
    } else {
      return std::to_string(task.*member);
    }
  };
  return f;
}

std::vector<Field> build_fields() {
  std::vector<Field> f;
  f.push_back({"task.kind", always,
               [](ExperimentConfig& c, const std::string&, const std::string& v) {
                 if (v == "count_token") {
                   c.run.task = CountToken{};
                 } else if (v == "pattern_bonus") {
                   c.run.task = PatternBonus{};
                 } else if (v == "length_shaped") {
                   c.run.task = LengthShaped{};
                 } else {
                   bad_value("task.kind", v, "count_token, pattern_bonus or length_shaped");
                 }
               },
               [](const ExperimentConfig& c) { return task_kind(c.run.task); }});
  f.push_back(task_field("task.target", &CountToken::target));
  f.push_back(task_field("task.weight", &CountToken::weight));
  f.push_back(task_field("task.first", &PatternBonus::first));
  f.push_back(task_field("task.second", &PatternBonus::second));
  f.push_back(task_field("task.bonus", &PatternBonus::bonus));
  f.push_back(task_field("task.base", &PatternBonus::base));
  f.push_back(task_field("task.ideal_len", &LengthShaped::ideal_len));
  f.push_back(task_field("task.slope", &LengthShaped::slope));

  f.push_back(int_field("policy.vocab_size", [](auto& c) -> auto& { return c.run.vocab.size; }));
  f.push_back(int_field("policy.eos_id", [](auto& c) -> auto& { return c.run.vocab.eos_id; }));
  f.push_back(int_field("policy.n_prompts", [](auto& c) -> auto& { return c.run.n_prompts; }));
  f.push_back(int_field("policy.t_max", [](auto& c) -> auto& { return c.run.t_max; }));
  f.push_back(real_field("policy.pretrain_strength",
                         [](auto& c) -> auto& { return c.run.pretrain_strength; }));

  f.push_back({"method.name", always,
               [](ExperimentConfig& c, const std::string&, const std::string& v) {
                 try {
                   c.run.method = parse_method(v);
                 } catch (const ConfigError&) {
                   bad_value("method.name", v, "ppo, vanilla_pg, reinforce, reinforce_ma_baseline, rloo, raft or dpo");
                 }
               },
               [](const ExperimentConfig& c) { return to_string(c.run.method); }});
  f.push_back(int_field("method.k", [](auto& c) -> auto& { return c.run.k; }));
  f.push_back({"method.raft_rank", always,
               [](ExperimentConfig& c, const std::string&, const std::string& v) {
                 if (v == "shaped") {
                   c.run.raft_rank = RaftRank::shaped;
                 } else if (v == "raw") {
                   c.run.raft_rank = RaftRank::raw;
                 } else {
                   bad_value("method.raft_rank", v, "shaped or raw");
                 }
               },
               [](const ExperimentConfig& c) {
                 return std::string(c.run.raft_rank == RaftRank::shaped ? "shaped" : "raw");
               }});
  f.push_back(bool_field("method.rank_on_noised", [](auto& c) -> auto& { return c.run.rank_on_noised; }));

  f.push_back(real_field("shaping.beta", [](auto& c) -> auto& { return c.run.shaping.beta; }));
  f.push_back({"shaping.reward_source", always,
               [](ExperimentConfig& c, const std::string&, const std::string& v) {
                 if (v == "gold") {
                   c.run.shaping.reward_source = RewardSource::gold;
                 } else if (v == "learned_rm") {
                   c.run.shaping.reward_source = RewardSource::learned_rm;
                 } else {
                   bad_value("shaping.reward_source", v, "gold or learned_rm");
                 }
               },
               [](const ExperimentConfig& c) {
                 return std::string(c.run.shaping.reward_source == RewardSource::gold ? "gold" : "learned_rm");
               }});

  f.push_back(real_field("noise.sigma", [](auto& c) -> auto& { return c.run.noise.sigma; }));

  f.push_back(real_field("schedule.lr", [](auto& c) -> auto& { return c.run.lr; }));
  f.push_back(real_field("schedule.warmup_frac", [](auto& c) -> auto& { return c.run.warmup_frac; }));
  f.push_back(int_field("schedule.steps", [](auto& c) -> auto& { return c.run.steps; }));
  f.push_back(int_field("schedule.batch_prompts", [](auto& c) -> auto& { return c.run.batch_prompts; }));
  f.push_back(int_field("schedule.grad_steps_per_batch",
                        [](auto& c) -> auto& { return c.run.grad_steps_per_batch; }));

  f.push_back(int_field("eval.every", [](auto& c) -> auto& { return c.run.eval.every; }));
  f.push_back(int_field("eval.n_eval", [](auto& c) -> auto& { return c.run.eval.n_eval; }));

  f.push_back(u64_field("seeds.seed", [](auto& c) -> auto& { return c.run.seed; }));
  f.push_back(u64_field("seeds.pretrain_seed", [](auto& c) -> auto& { return c.run.pretrain_seed; }));
  f.push_back(u64_field("seeds.eval_seed", [](auto& c) -> auto& { return c.run.eval_seed; }));
  f.push_back(u64_field("seeds.noise_seed", [](auto& c) -> auto& { return c.run.noise.seed; }));

  f.push_back({"output.dir", always,
               [](ExperimentConfig& c, const std::string&, const std::string& v) { c.output.dir = v; },
               [](const ExperimentConfig& c) { return c.output.dir; }});
  f.push_back(bool_field("output.checkpoint", [](auto& c) -> auto& { return c.output.checkpoint; }));

  f.push_back(real_field("gae.gamma", [](auto& c) -> auto& { return c.run.gae.gamma; }));
  f.push_back(real_field("gae.lambda", [](auto& c) -> auto& { return c.run.gae.lambda; }));

  f.push_back(real_field("ppo.clip_eps", [](auto& c) -> auto& { return c.run.ppo.clip_eps; }));
  f.push_back(bool_field("ppo.clipping", [](auto& c) -> auto& { return c.run.ppo.clipping_enabled; }));
  f.push_back(bool_field("ppo.ratio", [](auto& c) -> auto& { return c.run.ppo.ratio_enabled; }));
  f.push_back(bool_field("ppo.normalize_advantages",
                         [](auto& c) -> auto& { return c.run.ppo.normalize_advantages; }));

  f.push_back(real_field("value.lr", [](auto& c) -> auto& { return c.run.value.lr; }));
  f.push_back(int_field("value.max_updates", [](auto& c) -> auto& { return c.run.value.max_updates; }));

  f.push_back(int_field("rm.pairs", [](auto& c) -> auto& { return c.run.rm.pairs; }));
  f.push_back(real_field("rm.lr", [](auto& c) -> auto& { return c.run.rm.lr; }));
  f.push_back(int_field("rm.epochs", [](auto& c) -> auto& { return c.run.rm.epochs; }));
  f.push_back(real_field("rm.label_noise", [](auto& c) -> auto& { return c.run.rm.label_noise; }));
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = build_fields();
  return all;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown key '" + key + "'");
}

void check_output_dir(const OutputConfig& out) {
  if (out.dir.empty()) throw ConfigError("output.dir must not be empty");
}

}  // namespace

std::string format_real(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc{}) throw Error("format_real: conversion failed");
  return std::string(buf, ptr);
}

void set_config_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  find_field(key).set(cfg, key, value);
}

std::string get_config_key(const ExperimentConfig& cfg, const std::string& key) {
  const auto& f = find_field(key);
  if (!f.applies(cfg)) {
    throw ConfigError("key '" + key + "' does not apply to task kind '" + task_kind(cfg.run.task) + "'");
  }
  return f.get(cfg);
}

void apply_override(ExperimentConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form section.key=value");
  }
  set_config_key(cfg, std::string(assignment.substr(0, eq)), std::string(assignment.substr(eq + 1)));
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

ExperimentConfig parse_experiment(std::string_view text, const std::string& source) {
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source + ":" + std::to_string(e.line()) + ": " + e.message());
  }

  const auto is_section = [](const std::string& name) {
    return std::find(kSections.begin(), kSections.end(), name) != kSections.end();
  };

  ExperimentConfig cfg;
  bool have_version = false;
  for (const auto& [name, node] : tree) {
    if (is_section(name)) continue;
    if (name == "version") {
      if (!node.empty()) throw ConfigError(source + ": 'version' must be a top-level key, not a section");
      const int v = parse_integer<int>("version", node.data());
      if (v != kConfigVersion) {
        throw ConfigError(source + ": unsupported version " + node.data() + " (expected " +
                          std::to_string(kConfigVersion) + ")");
      }
      have_version = true;
      continue;
    }
    if (node.empty()) throw ConfigError(source + ": unknown key '" + name + "'");
    throw ConfigError(source + ": unknown section '" + name + "'");
  }
  if (!have_version) throw ConfigError(source + ": missing mandatory key 'version'");

  // task.kind first: it decides which task keys exist.
  if (auto task = tree.get_child_optional("task")) {
    if (auto kind = task->get_child_optional("kind")) set_config_key(cfg, "task.kind", kind->data());
  }
  for (const auto& section : kSections) {
    auto node = tree.get_child_optional(section);
    if (!node) continue;
    if (!node->data().empty()) throw ConfigError(source + ": '" + section + "' is a section, not a key");
    for (const auto& [name, leaf] : *node) {
      const std::string key = section + "." + name;
      if (key == "task.kind") continue;
      if (!leaf.empty()) throw ConfigError(source + ": unexpected nesting under '" + key + "'");
      try {
        set_config_key(cfg, key, leaf.data());
      } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
      }
    }
  }
  try {
    cfg.run.validate();
    check_output_dir(cfg.output);
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_experiment(buf.str(), path.string());
}

std::string serialize_experiment(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "version = " << kConfigVersion << "\n";
  std::string current;
  for (const auto& f : fields()) {
    if (!f.applies(cfg)) continue;
    const auto dot = f.key.find('.');
    const std::string section = f.key.substr(0, dot);
    if (section != current) {
      out << "\n[" << section << "]\n";
      current = section;
    }
    out << f.key.substr(dot + 1) << " = " << f.get(cfg) << "\n";
  }
  return out.str();
}

}  // namespace pgpref
