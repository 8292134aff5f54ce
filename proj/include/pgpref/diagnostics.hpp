#pragma once

// Exact enumeration oracle, estimator bias/variance statistics, and the
// evaluation metrics (gold-judge win-rate, distinct-n, perplexity proxy).

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pgpref/estimators.hpp"
#include "pgpref/policy.hpp"
#include "pgpref/reward.hpp"

namespace pgpref {

// sum_{t < t_max} (V-1)^t + (V-1)^t_max
std::size_t trajectory_count(const VocabSpec& vocab, int t_max);

// All EOS-terminated sequences of length <= t_max plus all EOS-free sequences
// of length exactly t_max, in depth-first token order.
std::vector<Trajectory> enumerate_trajectories(const VocabSpec& vocab, const Prompt& prompt, int t_max,
                                               std::size_t budget = enumeration_budget());

using RewardFn = std::function<double(const Trajectory&)>;

// sum_y pi(y|x) R(y) grad log pi(y|x) with R = r - beta log(pi/pi_ref) held
// fixed per trajectory (the KL term is not differentiated).
std::vector<double> exact_policy_gradient(const PolicyParams& policy, const RewardFn& reward,
                                          const ShapingConfig& shaping, const PolicyParams& ref,
                                          const Prompt& prompt);

// sum_y pi(y|x) r(y)
double exact_expected_reward(const PolicyParams& policy, const RewardFn& reward, const Prompt& prompt);
// Mean over all prompts of the exact expected gold reward.
double exact_expected_gold(const PolicyParams& policy, const GoldTask& task);

// V(s) = E[sum_{i >= t} gamma^(i-t) R_i | s_t = s] under the token-level
// shaped rewards. Exact, by backward recursion over the prefix tree.
ValueTable exact_state_values(const PolicyParams& policy, const PolicyParams& ref, const RewardFn& reward,
                              double beta, double gamma = 1.0);

struct GradientStats {
  std::vector<double> empirical_mean;
  std::vector<double> std_error;
  std::vector<double> bias_vector;
  double max_bias_in_se = 0.0;
  double trace_variance = 0.0;
  int n = 0;
};

using Estimator = std::function<GradientEstimate(Rng&)>;

inline constexpr int kMinReps = 100;

// Coordinates with zero standard error count as 0 when their bias is below
// 1e-12 and as +infinity otherwise.
GradientStats estimator_stats(const Estimator& estimator, std::span<const double> oracle, int n_reps,
                              Rng& rng);

// Named estimators for the diagnose command:
//   oracle, reinforce, reinforce_ma, rloo<k>, vanilla_pg, gae<lambda>
struct EstimatorSpec {
  enum class Kind { oracle, reinforce, reinforce_ma, rloo, vanilla_pg, gae };
  std::string name;
  Kind kind = Kind::oracle;
  int k = 1;
  double lambda = 1.0;
};

EstimatorSpec parse_estimator(std::string_view name);

struct EstimatorContext {
  const PolicyParams* policy = nullptr;
  const PolicyParams* ref = nullptr;
  RewardFn reward;
  double beta = 0.0;
  Prompt prompt;
  const ValueTable* values = nullptr;  // used by vanilla_pg and gae
  double frozen_baseline = 0.0;        // used by reinforce_ma
  std::span<const double> oracle;      // used by oracle
};

Estimator make_estimator(const EstimatorSpec& spec, const EstimatorContext& ctx);

// Fraction of pairs where the candidate's gold reward is higher; ties count 1/2.
double simulated_winrate(std::span<const Trajectory> candidates, std::span<const Trajectory> references,
                         const GoldTask& task);

// Mean over trajectories with >= n tokens of unique n-grams / total n-grams.
double distinct_n(std::span<const Trajectory> trajs, int n);

// exp(-sum logprob / sum tokens); +infinity when any reference has probability 0.
double perplexity_proxy(const PolicyParams& policy, std::span<const Trajectory> references);

struct EvalReport {
  double mean_reward_r = 0.0;
  double winrate_vs_ref = 0.5;
  double mean_length = 0.0;
  double distinct_1 = 1.0;
  double distinct_2 = 1.0;
  double ppl_proxy = 1.0;
  double reward_variance = 0.0;
};

// Win-rate from greedy decodes (simulated-winrate, gold judge); everything else
// from n_eval stochastic samples. Perplexity references are samples of ref.
EvalReport eval_policy(const PolicyParams& policy, const PolicyParams& ref, const GoldTask& task, int n_eval,
                       Rng& rng);

}  // namespace pgpref
