#pragma once

// Tabular autoregressive softmax policy over a small enumerable vocabulary.
//
// Every (prompt, EOS-free prefix) with prefix length < t_max owns one row of
// logits. Rows are laid out prompt-major, then by prefix length, then by the
// base-(V-1) value of the prefix written in content-token ranks, so the table
// is dense and a child row index is computable from its parent.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pgpref/gradient.hpp"
#include "pgpref/rng.hpp"

namespace pgpref {

using Token = int;
using StateId = std::size_t;

inline constexpr std::size_t kDefaultBudget = 200'000;

// Enumeration budget: PGPREF_BUDGET when set and valid, else kDefaultBudget.
std::size_t enumeration_budget();

struct VocabSpec {
  int size = 4;    // includes EOS
  int eos_id = 3;

  void validate() const;
  int content_count() const { return size - 1; }
  bool operator==(const VocabSpec&) const = default;
};

struct Prompt {
  int id = 0;
  int features = 0;
};

struct PrefixState {
  int prompt_id = 0;
  std::vector<Token> prefix;
};

struct Trajectory {
  int prompt_id = 0;
  std::vector<Token> tokens;
  bool terminated_by_eos = false;

  std::size_t length() const { return tokens.size(); }
  bool operator==(const Trajectory&) const = default;
};

std::string to_string(const Trajectory& traj);

class StateSpace {
 public:
  StateSpace(VocabSpec vocab, int n_prompts, int t_max, std::size_t budget = enumeration_budget());

  const VocabSpec& vocab() const { return vocab_; }
  int n_prompts() const { return n_prompts_; }
  int t_max() const { return t_max_; }
  std::size_t states_per_prompt() const { return per_prompt_; }
  std::size_t num_states() const { return per_prompt_ * static_cast<std::size_t>(n_prompts_); }

  StateId root(int prompt_id) const;
  // Row reached from `parent` by emitting content token `token`. Requires the
  // parent prefix to be shorter than t_max - 1.
  StateId child(StateId parent, Token token) const;
  int depth(StateId id) const;
  int prompt_of(StateId id) const;

  StateId state_id(const PrefixState& state) const;
  PrefixState state_at(StateId id) const;

  // Row visited before each token of the trajectory.
  std::vector<StateId> path(const Trajectory& traj) const;

  // Throws pgpref::Error when the trajectory violates the length / EOS rules.
  void validate(const Trajectory& traj) const;

  bool operator==(const StateSpace& other) const {
    return vocab_ == other.vocab_ && n_prompts_ == other.n_prompts_ && t_max_ == other.t_max_;
  }

 private:
  int rank_of(Token token) const { return token < vocab_.eos_id ? token : token - 1; }

  VocabSpec vocab_;
  int n_prompts_;
  int t_max_;
  std::size_t per_prompt_ = 0;
  std::vector<std::size_t> level_offset_;  // first local index of each depth
};

class PolicyParams {
 public:
  explicit PolicyParams(StateSpace space);

  const StateSpace& space() const { return space_; }
  const VocabSpec& vocab() const { return space_.vocab(); }
  int t_max() const { return space_.t_max(); }
  int n_prompts() const { return space_.n_prompts(); }

  std::span<double> row(StateId id);
  std::span<const double> row(StateId id) const;
  std::span<double> theta() { return theta_; }
  std::span<const double> theta() const { return theta_; }
  std::size_t size() const { return theta_.size(); }

  // theta += scale * direction
  void add_scaled(std::span<const double> direction, double scale);

  bool operator==(const PolicyParams& other) const {
    return space_ == other.space_ && theta_ == other.theta_;
  }

 private:
  StateSpace space_;
  std::vector<double> theta_;
};

enum class InitKind { zeros, seeded_noise };

struct PolicyInit {
  InitKind kind = InitKind::zeros;
  double scale = 0.0;
  std::uint64_t seed = 0;
};

PolicyParams init_policy(const VocabSpec& vocab, int n_prompts, int t_max, const PolicyInit& init = {});

std::vector<double> token_distribution(const PolicyParams& policy, const PrefixState& state);
// Allocation-free variant; `out` must have vocab.size entries.
void token_distribution(const PolicyParams& policy, StateId id, std::span<double> out);
double token_logprob(const PolicyParams& policy, StateId id, Token token);

Trajectory sample_trajectory(const PolicyParams& policy, const Prompt& prompt, Rng& rng);
Trajectory greedy_decode(const PolicyParams& policy, const Prompt& prompt);

double trajectory_logprob(const PolicyParams& policy, const Trajectory& traj);

GradientEstimate grad_logprob(const PolicyParams& policy, const Trajectory& traj);
// out += coef * grad log pi(traj)
void add_grad_logprob(const PolicyParams& policy, const Trajectory& traj, double coef,
                      std::span<double> out);

struct StepProfile {
  int step = 0;                     // 1-based generation step
  double reach_mass = 0.0;          // probability that generation is still running
  double normalized_entropy = 0.0;  // H / log(V), reach-weighted over prefixes
  std::vector<double> top_mass;     // aligned with the requested top_m list
};

// Reports only steps with nonzero reach mass.
std::vector<StepProfile> entropy_profile(const PolicyParams& policy, const Prompt& prompt,
                                         std::span<const int> top_m);

}  // namespace pgpref
