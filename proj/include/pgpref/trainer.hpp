#pragma once

// Optimization loop: pretrain warm start, learning-rate schedule, per-step
// sampling / scoring / shaping / estimation, exact KL measurement.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pgpref/diagnostics.hpp"
#include "pgpref/estimators.hpp"
#include "pgpref/policy.hpp"
#include "pgpref/reward.hpp"

namespace pgpref {

enum class Method { ppo, vanilla_pg, reinforce, reinforce_ma_baseline, rloo, raft, dpo };

std::string to_string(Method m);
Method parse_method(const std::string& name);

enum class RaftRank { shaped, raw };

struct ValueConfig {
  double lr = 0.1;
  int max_updates = -1;  // < 0: unlimited
  bool operator==(const ValueConfig&) const = default;
};

struct RmConfig {
  int pairs = 2000;
  double lr = 0.1;
  int epochs = 200;
  double label_noise = 0.0;
  bool operator==(const RmConfig&) const = default;
};

struct EvalConfig {
  int every = 50;  // 0 disables periodic eval; the final step is always evaluated when > 0
  int n_eval = 1000;
  bool operator==(const EvalConfig&) const = default;
};

struct RunConfig {
  // environment
  VocabSpec vocab{4, 3};
  int n_prompts = 4;
  int t_max = 4;
  GoldTask task = CountToken{1, 1.0};
  double pretrain_strength = 0.7;

  // method
  Method method = Method::rloo;
  int k = 2;
  ShapingConfig shaping;
  GAEConfig gae;
  PPOConfig ppo;
  ValueConfig value;
  RaftRank raft_rank = RaftRank::shaped;
  RmConfig rm;

  // noise
  NoiseConfig noise;
  bool rank_on_noised = true;

  // schedule
  double lr = 0.2;
  double warmup_frac = 0.03;
  int steps = 300;
  int batch_prompts = 4;
  int grad_steps_per_batch = 2;

  EvalConfig eval;

  std::uint64_t seed = 1;
  std::uint64_t pretrain_seed = 0;
  std::uint64_t eval_seed = 7;

  // Throws ConfigError naming the offending field.
  void validate() const;
  int samples_per_prompt() const;
  bool operator==(const RunConfig&) const = default;
};

int warmup_steps(const RunConfig& cfg);
// lr * min(1, (step + 1) / warmup_steps); constant lr when warmup_steps == 0
double lr_at(int step, const RunConfig& cfg);

// Gradient ascent on the exact expected gold reward, per prompt, until it
// reaches uniform + strength * (max - uniform). strength == 0 returns the
// uniform policy. Throws NumericError after the iteration cap.
PolicyParams pretrain_policy(const GoldTask& task, const VocabSpec& vocab, int n_prompts, int t_max,
                             double strength, std::uint64_t seed);

struct KlEstimate {
  double value = 0.0;
  double std_error = 0.0;
  bool exact = true;
};

// Exact KL(pi || ref) for one prompt via the chain rule over the prefix tree;
// a Monte-Carlo estimate when the trajectory set exceeds the budget.
KlEstimate measure_kl(const PolicyParams& policy, const PolicyParams& ref, const Prompt& prompt,
                      std::size_t budget = enumeration_budget());
KlEstimate measure_kl_mc(const PolicyParams& policy, const PolicyParams& ref, const Prompt& prompt,
                         int n_samples, Rng& rng);
double mean_kl(const PolicyParams& policy, const PolicyParams& ref);

struct MetricsRecord {
  int step = 0;              // completed batches, 1-based
  double r_mean = 0.0;       // mean unshaped reward of sampled trajectories (before noise)
  double R_mean = 0.0;       // mean shaped reward fed to the estimator
  double kl = 0.0;           // exact KL to the reference policy after the update, prompt mean
  double clip_frac = 0.0;    // PPO only: clipped-token fraction on the last gradient step
  double var_trace = 0.0;    // trace of the across-prompt covariance of gradient contributions
  double baseline = 0.0;     // baseline used this step (moving average methods)
  double gold = 0.0;         // exact expected gold reward after the update
  double lr = 0.0;
  std::int64_t samples = 0;  // cumulative sampled trajectories
  std::optional<EvalReport> eval;
};

struct TrainState {
  PolicyParams policy;
  PolicyParams ref;
  ValueTable values;
  BaselineState baseline;
  std::optional<RewardModel> rm;
  std::vector<PreferencePair> pairs;  // DPO dataset
  int step = 0;
  std::int64_t samples_seen = 0;
  int value_updates = 0;
};

TrainState init_train_state(const RunConfig& cfg);

// One batch: sample, score, add noise, shape, estimate, take
// grad_steps_per_batch ascent steps. Throws NumericError on non-finite values.
MetricsRecord train_step(TrainState& state, const RunConfig& cfg);

struct RunResult {
  std::vector<MetricsRecord> history;
  TrainState final_state;
};

RunResult run_training(const RunConfig& cfg);

}  // namespace pgpref
