#include "pgpref/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <sstream>

#include "pgpref/errors.hpp"

namespace pgpref {

std::size_t enumeration_budget() {
  if (const char* env = std::getenv("PGPREF_BUDGET")) {
    char* end = nullptr;
    const unsigned long long value = std::strtoull(env, &end, 10);
    if (end != env && *end == '\0' && value > 0) {
      return static_cast<std::size_t>(value);
    }
  }
  return kDefaultBudget;
}

void VocabSpec::validate() const {
  if (size < 2 || size > 16) {
    throw ConfigError("vocab size must be in [2, 16], got " + std::to_string(size));
  }
  if (eos_id < 0 || eos_id >= size) {
    throw ConfigError("eos_id must be in [0, size), got " + std::to_string(eos_id));
  }
}

std::string to_string(const Trajectory& traj) {
  std::ostringstream os;
  os << "p" << traj.prompt_id << ":[";
  for (std::size_t i = 0; i < traj.tokens.size(); ++i) {
    os << (i ? "," : "") << traj.tokens[i];
  }
  os << "]" << (traj.terminated_by_eos ? "" : "+");
  return os.str();
}

// ---------------------------------------------------------------------------
// StateSpace

StateSpace::StateSpace(VocabSpec vocab, int n_prompts, int t_max, std::size_t budget)
    : vocab_(vocab), n_prompts_(n_prompts), t_max_(t_max) {
  vocab_.validate();
  if (n_prompts < 1) throw ConfigError("n_prompts must be >= 1");
  if (t_max < 1) throw ConfigError("t_max must be >= 1");

  const auto content = static_cast<std::size_t>(vocab_.content_count());
  std::size_t level_size = 1;
  level_offset_.reserve(static_cast<std::size_t>(t_max) + 1);
  for (int depth = 0; depth < t_max; ++depth) {
    level_offset_.push_back(per_prompt_);
    per_prompt_ += level_size;
    if (per_prompt_ * static_cast<std::size_t>(n_prompts) > budget) {
      throw BudgetError("state count exceeds enumeration budget of " + std::to_string(budget) +
                        " (vocab " + std::to_string(vocab_.size) + ", t_max " +
                        std::to_string(t_max) + ", prompts " + std::to_string(n_prompts) + ")");
    }
    level_size *= content;
  }
  level_offset_.push_back(per_prompt_);
}

StateId StateSpace::root(int prompt_id) const {
  if (prompt_id < 0 || prompt_id >= n_prompts_) {
    throw Error("prompt id " + std::to_string(prompt_id) + " out of range");
  }
  return static_cast<StateId>(prompt_id) * per_prompt_;
}

int StateSpace::depth(StateId id) const {
  const std::size_t local = id % per_prompt_;
  const auto it = std::upper_bound(level_offset_.begin(), level_offset_.end(), local);
  return static_cast<int>(it - level_offset_.begin()) - 1;
}

int StateSpace::prompt_of(StateId id) const { return static_cast<int>(id / per_prompt_); }

StateId StateSpace::child(StateId parent, Token token) const {
  const std::size_t base = parent - parent % per_prompt_;
  const std::size_t local = parent % per_prompt_;
  const int d = depth(parent);
  const auto content = static_cast<std::size_t>(vocab_.content_count());
  const std::size_t child_local = level_offset_[static_cast<std::size_t>(d) + 1] +
                                  (local - level_offset_[static_cast<std::size_t>(d)]) * content +
                                  static_cast<std::size_t>(rank_of(token));
  return base + child_local;
}

StateId StateSpace::state_id(const PrefixState& state) const {
  if (static_cast<int>(state.prefix.size()) >= t_max_) {
    throw Error("unreachable state: prefix length " + std::to_string(state.prefix.size()) +
                " >= t_max " + std::to_string(t_max_));
  }
  StateId id = root(state.prompt_id);
  for (Token tok : state.prefix) {
    if (tok < 0 || tok >= vocab_.size || tok == vocab_.eos_id) {
      throw Error("unreachable state: prefix contains EOS or out-of-range token");
    }
    id = child(id, tok);
  }
  return id;
}

PrefixState StateSpace::state_at(StateId id) const {
  PrefixState state;
  state.prompt_id = prompt_of(id);
  const int d = depth(id);
  std::size_t digits = id % per_prompt_ - level_offset_[static_cast<std::size_t>(d)];
  const auto content = static_cast<std::size_t>(vocab_.content_count());
  state.prefix.assign(static_cast<std::size_t>(d), 0);
  for (int i = d - 1; i >= 0; --i) {
    const int rank = static_cast<int>(digits % content);
    digits /= content;
    state.prefix[static_cast<std::size_t>(i)] = rank < vocab_.eos_id ? rank : rank + 1;
  }
  return state;
}

void StateSpace::validate(const Trajectory& traj) const {
  const auto len = traj.tokens.size();
  if (traj.prompt_id < 0 || traj.prompt_id >= n_prompts_) {
    throw Error("trajectory prompt id out of range: " + to_string(traj));
  }
  if (len < 1 || static_cast<int>(len) > t_max_) {
    throw Error("trajectory length outside [1, t_max]: " + to_string(traj));
  }
  for (std::size_t i = 0; i < len; ++i) {
    const Token tok = traj.tokens[i];
    if (tok < 0 || tok >= vocab_.size) throw Error("token out of range: " + to_string(traj));
    if (tok == vocab_.eos_id && i + 1 != len) {
      throw Error("EOS before the final position: " + to_string(traj));
    }
  }
  const bool ends_with_eos = traj.tokens.back() == vocab_.eos_id;
  if (ends_with_eos != traj.terminated_by_eos) {
    throw Error("terminated_by_eos flag disagrees with tokens: " + to_string(traj));
  }
  if (!ends_with_eos && static_cast<int>(len) != t_max_) {
    throw Error("EOS-free trajectory shorter than t_max: " + to_string(traj));
  }
}

std::vector<StateId> StateSpace::path(const Trajectory& traj) const {
  validate(traj);
  std::vector<StateId> ids;
  ids.reserve(traj.tokens.size());
  StateId id = root(traj.prompt_id);
  for (std::size_t t = 0; t < traj.tokens.size(); ++t) {
    ids.push_back(id);
    if (t + 1 < traj.tokens.size()) id = child(id, traj.tokens[t]);
  }
  return ids;
}

// ---------------------------------------------------------------------------
// PolicyParams

PolicyParams::PolicyParams(StateSpace space)
    : space_(std::move(space)),
      theta_(space_.num_states() * static_cast<std::size_t>(space_.vocab().size), 0.0) {}

std::span<double> PolicyParams::row(StateId id) {
  const auto v = static_cast<std::size_t>(vocab().size);
  return std::span<double>(theta_).subspan(id * v, v);
}

std::span<const double> PolicyParams::row(StateId id) const {
  const auto v = static_cast<std::size_t>(vocab().size);
  return std::span<const double>(theta_).subspan(id * v, v);
}

void PolicyParams::add_scaled(std::span<const double> direction, double scale) {
  if (direction.size() != theta_.size()) throw Error("direction size does not match policy table");
  for (std::size_t i = 0; i < theta_.size(); ++i) theta_[i] += scale * direction[i];
}

PolicyParams init_policy(const VocabSpec& vocab, int n_prompts, int t_max, const PolicyInit& init) {
  if (init.scale < 0.0) throw ConfigError("init scale must be >= 0");
  PolicyParams policy{StateSpace{vocab, n_prompts, t_max}};
  if (init.kind == InitKind::seeded_noise && init.scale > 0.0) {
    Rng rng{derive_seed(init.seed, 0x1417)};
    std::normal_distribution<double> normal{0.0, init.scale};
    for (double& x : policy.theta()) x = normal(rng);
  }
  return policy;
}

// ---------------------------------------------------------------------------
// Distributions

void token_distribution(const PolicyParams& policy, StateId id, std::span<double> out) {
  const auto logits = policy.row(id);
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = std::exp(logits[j] - mx);
    total += out[j];
  }
  for (std::size_t j = 0; j < logits.size(); ++j) out[j] /= total;
}

std::vector<double> token_distribution(const PolicyParams& policy, const PrefixState& state) {
  std::vector<double> probs(static_cast<std::size_t>(policy.vocab().size));
  token_distribution(policy, policy.space().state_id(state), probs);
  return probs;
}

double token_logprob(const PolicyParams& policy, StateId id, Token token) {
  const auto logits = policy.row(id);
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double x : logits) total += std::exp(x - mx);
  return logits[static_cast<std::size_t>(token)] - mx - std::log(total);
}

namespace {

template <typename PickToken>
Trajectory decode(const PolicyParams& policy, const Prompt& prompt, PickToken&& pick) {
  const auto& space = policy.space();
  const int eos = policy.vocab().eos_id;
  Trajectory traj;
  traj.prompt_id = prompt.id;
  traj.tokens.reserve(static_cast<std::size_t>(policy.t_max()));
  std::vector<double> probs(static_cast<std::size_t>(policy.vocab().size));
  StateId id = space.root(prompt.id);
  for (int t = 0; t < policy.t_max(); ++t) {
    token_distribution(policy, id, probs);
    const Token tok = pick(probs);
    traj.tokens.push_back(tok);
    if (tok == eos) {
      traj.terminated_by_eos = true;
      break;
    }
    if (t + 1 < policy.t_max()) id = space.child(id, tok);
  }
  return traj;
}

}  // namespace

Trajectory sample_trajectory(const PolicyParams& policy, const Prompt& prompt, Rng& rng) {
  return decode(policy, prompt, [&rng](std::span<const double> probs) {
    const double u = uniform01(rng);
    double cum = 0.0;
    for (std::size_t j = 0; j < probs.size(); ++j) {
      cum += probs[j];
      if (u < cum) return static_cast<Token>(j);
    }
    // u landed in the rounding gap above the final cumulative sum
    for (std::size_t j = probs.size(); j-- > 0;) {
      if (probs[j] > 0.0) return static_cast<Token>(j);
    }
    return static_cast<Token>(probs.size() - 1);
  });
}

Trajectory greedy_decode(const PolicyParams& policy, const Prompt& prompt) {
  // Ties go to the lowest index; argmax on logits is shift invariant.
  const auto& space = policy.space();
  const int eos = policy.vocab().eos_id;
  Trajectory traj;
  traj.prompt_id = prompt.id;
  StateId id = space.root(prompt.id);
  for (int t = 0; t < policy.t_max(); ++t) {
    const auto logits = policy.row(id);
    const auto best = std::max_element(logits.begin(), logits.end());
    const auto tok = static_cast<Token>(best - logits.begin());
    traj.tokens.push_back(tok);
    if (tok == eos) {
      traj.terminated_by_eos = true;
      break;
    }
    if (t + 1 < policy.t_max()) id = space.child(id, tok);
  }
  return traj;
}

double trajectory_logprob(const PolicyParams& policy, const Trajectory& traj) {
  const auto path = policy.space().path(traj);
  double total = 0.0;
  for (std::size_t t = 0; t < path.size(); ++t) total += token_logprob(policy, path[t], traj.tokens[t]);
  return total;
}

void add_grad_logprob(const PolicyParams& policy, const Trajectory& traj, double coef,
                      std::span<double> out) {
  if (coef == 0.0) return;
  const auto path = policy.space().path(traj);
  const auto v = static_cast<std::size_t>(policy.vocab().size);
  std::vector<double> probs(v);
  for (std::size_t t = 0; t < path.size(); ++t) {
    token_distribution(policy, path[t], probs);
    double* row = out.data() + path[t] * v;
    for (std::size_t j = 0; j < v; ++j) row[j] -= coef * probs[j];
    row[static_cast<std::size_t>(traj.tokens[t])] += coef;
  }
}

GradientEstimate grad_logprob(const PolicyParams& policy, const Trajectory& traj) {
  GradientEstimate g{std::vector<double>(policy.size(), 0.0), 1, "grad_logprob"};
  add_grad_logprob(policy, traj, 1.0, g.values);
  return g;
}

// ---------------------------------------------------------------------------
// Entropy / concentration profile

std::vector<StepProfile> entropy_profile(const PolicyParams& policy, const Prompt& prompt,
                                         std::span<const int> top_m) {
  const auto& space = policy.space();
  const int v = policy.vocab().size;
  const int eos = policy.vocab().eos_id;
  for (int m : top_m) {
    if (m < 1 || m > v) throw Error("top_m entries must lie in [1, vocab size]");
  }
  const double h_max = std::log(static_cast<double>(v));

  std::vector<std::pair<StateId, double>> frontier{{space.root(prompt.id), 1.0}};
  std::vector<StepProfile> profile;
  std::vector<double> probs(static_cast<std::size_t>(v));
  std::vector<double> sorted(static_cast<std::size_t>(v));

  for (int t = 0; t < policy.t_max() && !frontier.empty(); ++t) {
    StepProfile step;
    step.step = t + 1;
    step.top_mass.assign(top_m.size(), 0.0);
    double weighted_entropy = 0.0;
    std::vector<std::pair<StateId, double>> next;
    for (const auto& [id, reach] : frontier) {
      step.reach_mass += reach;
      token_distribution(policy, id, probs);
      double h = 0.0;
      for (double p : probs) {
        if (p > 0.0) h -= p * std::log(p);
      }
      weighted_entropy += reach * h;
      sorted = probs;
      std::sort(sorted.begin(), sorted.end(), std::greater<>());
      for (std::size_t i = 0; i < top_m.size(); ++i) {
        double mass = 0.0;
        for (int j = 0; j < top_m[i]; ++j) mass += sorted[static_cast<std::size_t>(j)];
        step.top_mass[i] += reach * mass;
      }
      if (t + 1 < policy.t_max()) {
        for (Token a = 0; a < v; ++a) {
          const double r = reach * probs[static_cast<std::size_t>(a)];
          if (a != eos && r > 0.0) next.emplace_back(space.child(id, a), r);
        }
      }
    }
    if (step.reach_mass <= 0.0) break;
    step.normalized_entropy = std::clamp(weighted_entropy / step.reach_mass / h_max, 0.0, 1.0);
    for (double& m : step.top_mass) m = std::clamp(m / step.reach_mass, 0.0, 1.0);
    profile.push_back(std::move(step));
    frontier = std::move(next);
  }
  return profile;
}

}  // namespace pgpref
