#pragma once

// Gold synthetic rewards, the linear Bradley-Terry reward model, KL shaping at
// sequence and token level, and reward noise.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "pgpref/policy.hpp"
#include "pgpref/rng.hpp"

namespace pgpref {

// weight * (occurrences of target)
struct CountToken {
  Token target = 1;
  double weight = 1.0;
  bool operator==(const CountToken&) const = default;
};

// base + bonus * (occurrences of the bigram first->second)
struct PatternBonus {
  Token first = 1;
  Token second = 2;
  double bonus = 1.0;
  double base = 0.0;
  bool operator==(const PatternBonus&) const = default;
};

// -slope * |length - ideal_len|, length counted in tokens (EOS included)
struct LengthShaped {
  int ideal_len = 2;
  double slope = 1.0;
  bool operator==(const LengthShaped&) const = default;
};

using GoldTask = std::variant<CountToken, PatternBonus, LengthShaped>;

std::string task_kind(const GoldTask& task);

// Rejects tasks referencing EOS or out-of-range tokens, and tasks whose reward
// magnitude can exceed 100 under t_max.
void validate_task(const GoldTask& task, const VocabSpec& vocab, int t_max);

double gold_reward(const GoldTask& task, const Trajectory& traj);

// Features: unigram counts (V), bigram counts (V*V, row-major first token),
// length / t_max, constant 1.
std::size_t feature_dim(const VocabSpec& vocab);
std::vector<double> featurize(const Trajectory& traj, const VocabSpec& vocab, int t_max);

struct RewardModel {
  VocabSpec vocab;
  int t_max = 1;
  std::vector<double> weights;

  static RewardModel zeros(const VocabSpec& vocab, int t_max);
  std::size_t bias_index() const { return weights.size() - 1; }
  bool operator==(const RewardModel&) const = default;
};

double rm_score(const RewardModel& rm, const Trajectory& traj);

struct PreferencePair {
  int prompt_id = 0;
  Trajectory y_plus;
  Trajectory y_minus;
  bool label_flipped = false;  // set by generate_preferences when noise flipped the label
};

// -log sigmoid(score(y+) - score(y-))
double rm_loss(const RewardModel& rm, const PreferencePair& pair);
std::vector<double> rm_grad(const RewardModel& rm, const PreferencePair& pair);

struct RmTrainOptions {
  double lr = 0.1;
  int epochs = 100;
  std::uint64_t seed = 0;
  std::size_t batch_size = 0;  // 0: full-batch gradient descent
};

double rm_mean_loss(const RewardModel& rm, std::span<const PreferencePair> dataset);

// Starts from zero weights. `loss_history`, when given, receives the mean
// loss before training and after every epoch.
RewardModel train_rm(std::span<const PreferencePair> dataset, const VocabSpec& vocab, int t_max,
                     const RmTrainOptions& options, std::vector<double>* loss_history = nullptr);

// Pairs are drawn round-robin over the sampler's prompts. Labels follow the
// gold reward (first draw wins ties) and flip with probability label_noise.
std::vector<PreferencePair> generate_preferences(const GoldTask& task, const PolicyParams& sampler,
                                                 int n_pairs, double label_noise, Rng& rng);

enum class RewardSource { gold, learned_rm };

struct ShapingConfig {
  double beta = 0.03;
  RewardSource reward_source = RewardSource::gold;
  bool operator==(const ShapingConfig&) const = default;
};

// r - beta * (logp_theta - logp_ref)
double shaped_reward(double r, double logp_theta, double logp_ref, double beta);

// Per-token KL penalty, with r added on the final token (EOS or truncated).
std::vector<double> token_shaped_rewards(const PolicyParams& policy, const PolicyParams& ref,
                                         const Trajectory& traj, double r, double beta);

struct NoiseConfig {
  double sigma = 0.0;
  std::uint64_t seed = 0;
  bool operator==(const NoiseConfig&) const = default;
};

// r + N(0, sigma^2); draws nothing from rng when sigma == 0.
double inject_noise(double r, const NoiseConfig& cfg, Rng& rng);

}  // namespace pgpref
