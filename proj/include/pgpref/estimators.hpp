#pragma once

// Policy-gradient estimators and preference losses. Every GradientEstimate is
// an ascent direction on expected shaped reward; losses (value, DPO,
// contrastive) are minimized and their gradients are reported accordingly.
// Batch estimators normalize by the number of trajectories, summing over the
// tokens within each trajectory.

#include <cstdint>
#include <span>
#include <vector>

#include "pgpref/gradient.hpp"
#include "pgpref/policy.hpp"
#include "pgpref/reward.hpp"

namespace pgpref {

struct ScoredSample {
  Trajectory traj;
  double reward = 0.0;  // shaped sequence reward R(x, y)
};

// mean_i (R_i - baseline) * grad log pi(y_i)
GradientEstimate reinforce_grad(const PolicyParams& policy, std::span<const ScoredSample> batch,
                                double baseline);

// Running mean of every reward ever observed.
struct BaselineState {
  double running_mean = 0.0;
  std::int64_t count = 0;
};

BaselineState update_baseline(BaselineState state, std::span<const double> rewards);

// Leave-one-out baseline over k >= 2 samples of the same prompt.
GradientEstimate rloo_grad(const PolicyParams& policy, std::span<const ScoredSample> samples);

// Per-state baseline b(s); terminal states are implicit and valued 0.
class ValueTable {
 public:
  explicit ValueTable(StateSpace space);

  const StateSpace& space() const { return space_; }
  double at(StateId id) const { return v_[id]; }
  double& at(StateId id) { return v_[id]; }
  std::span<double> values() { return v_; }
  std::span<const double> values() const { return v_; }

  bool operator==(const ValueTable& other) const { return space_ == other.space_ && v_ == other.v_; }

 private:
  StateSpace space_;
  std::vector<double> v_;
};

struct GAEConfig {
  double gamma = 1.0;
  double lambda = 1.0;

  void validate() const;
  bool operator==(const GAEConfig&) const = default;
};

// G_t = sum_{i >= t} gamma^(i - t) R_i
std::vector<double> returns_to_go(std::span<const double> token_rewards, double gamma);

// delta_t = R_t + gamma V(s_{t+1}) - V(s_t), A_t = sum_l (gamma lambda)^l delta_{t+l}
std::vector<double> gae_advantages(std::span<const double> token_rewards, const ValueTable& values,
                                   std::span<const StateId> states, const GAEConfig& cfg);

struct ValueLoss {
  double loss = 0.0;
  std::vector<double> grad;  // aligned with ValueTable::values()
};

// sum_t 1/2 (G_t - V(s_t))^2 for one trajectory
ValueLoss value_loss_grad(const ValueTable& values, std::span<const double> token_rewards,
                          std::span<const StateId> states, double gamma);

struct AdvantageSample {
  Trajectory traj;
  std::vector<double> advantages;  // one per token
};

// mean over trajectories of sum_t A_t grad log pi(y_t | s_t)
GradientEstimate advantage_pg_grad(const PolicyParams& policy, std::span<const AdvantageSample> batch);

struct PPOConfig {
  double clip_eps = 0.2;
  bool clipping_enabled = true;
  bool ratio_enabled = true;
  bool normalize_advantages = false;

  void validate() const;
  bool operator==(const PPOConfig&) const = default;
};

struct PPOTokenTerm {
  double objective = 0.0;
  double d_ratio = 0.0;  // d objective / d ratio
  bool clipped = false;
};

// Pessimistic clipped term min(f A, clip(f) A) for one token.
PPOTokenTerm ppo_token_term(double ratio, double advantage, const PPOConfig& cfg);

struct PPOResult {
  GradientEstimate grad;
  double clip_fraction = 0.0;
  double objective = 0.0;
};

// With ratio_enabled == false the per-token objective is A_t log pi(y_t | s_t)
// and clipping has nothing to act on.
PPOResult ppo_grad(const PolicyParams& policy, const PolicyParams& old,
                   std::span<const AdvantageSample> batch, const PPOConfig& cfg);

struct TokenRewardSample {
  Trajectory traj;
  std::vector<double> token_rewards;
};

// mean over trajectories of sum_t (G_t - V(s_t)) grad log pi(y_t | s_t)
GradientEstimate vanilla_pg_grad(const PolicyParams& policy, std::span<const TokenRewardSample> batch,
                                 const ValueTable& values, double gamma);

// Index of the highest reward, first one on ties.
std::size_t raft_select(std::span<const ScoredSample> samples);
GradientEstimate raft_grad(const PolicyParams& policy, std::span<const ScoredSample> samples);

struct DpoResult {
  double loss = 0.0;
  GradientEstimate grad;  // ascent on -loss
};

DpoResult dpo_grad(const PolicyParams& policy, const PolicyParams& ref, const PreferencePair& pair,
                   double beta);

// ((R+ - R-) / 2) * (-log pi(y+) + log pi(y-))
double rloo2_contrastive_loss(const PolicyParams& policy, const Trajectory& y_plus,
                              const Trajectory& y_minus, double reward_plus, double reward_minus);
// Gradient of the loss above (descent direction is its negative).
GradientEstimate rloo2_contrastive_loss_grad(const PolicyParams& policy, const Trajectory& y_plus,
                                             const Trajectory& y_minus, double reward_plus,
                                             double reward_minus);

}  // namespace pgpref
