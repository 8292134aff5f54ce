#include "pgpref/estimators.hpp"

#include <algorithm>
#include <cmath>

#include "pgpref/errors.hpp"

namespace pgpref {

namespace {

GradientEstimate zero_estimate(const PolicyParams& policy, int n, const char* method) {
  return GradientEstimate{std::vector<double>(policy.size(), 0.0), n, method};
}

void scale(std::vector<double>& v, double s) {
  for (double& x : v) x *= s;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

GradientEstimate reinforce_grad(const PolicyParams& policy, std::span<const ScoredSample> batch,
                                double baseline) {
  if (batch.empty()) throw Error("reinforce_grad: empty batch");
  auto g = zero_estimate(policy, static_cast<int>(batch.size()), "reinforce");
  for (const auto& s : batch) add_grad_logprob(policy, s.traj, s.reward - baseline, g.values);
  scale(g.values, 1.0 / static_cast<double>(batch.size()));
  return g;
}

BaselineState update_baseline(BaselineState state, std::span<const double> rewards) {
  for (double r : rewards) {
    ++state.count;
    state.running_mean += (r - state.running_mean) / static_cast<double>(state.count);
  }
  return state;
}

GradientEstimate rloo_grad(const PolicyParams& policy, std::span<const ScoredSample> samples) {
  const std::size_t k = samples.size();
  if (k < 2) throw Error("rloo_grad: needs k >= 2 samples, got " + std::to_string(k));
  for (const auto& s : samples) {
    if (s.traj.prompt_id != samples.front().traj.prompt_id) {
      throw Error("rloo_grad: samples must share one prompt");
    }
  }
  double total = 0.0;
  for (const auto& s : samples) total += s.reward;
  auto g = zero_estimate(policy, static_cast<int>(k), "rloo");
  for (const auto& s : samples) {
    const double loo_mean = (total - s.reward) / static_cast<double>(k - 1);
    add_grad_logprob(policy, s.traj, s.reward - loo_mean, g.values);
  }
  scale(g.values, 1.0 / static_cast<double>(k));
  return g;
}

// ---------------------------------------------------------------------------
// Value table, GAE

ValueTable::ValueTable(StateSpace space) : space_(std::move(space)), v_(space_.num_states(), 0.0) {}

void GAEConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gae.gamma must be in [0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("gae.lambda must be in [0, 1]");
}

std::vector<double> returns_to_go(std::span<const double> token_rewards, double gamma) {
  std::vector<double> g(token_rewards.size());
  double running = 0.0;
  for (std::size_t t = token_rewards.size(); t-- > 0;) {
    running = token_rewards[t] + gamma * running;
    g[t] = running;
  }
  return g;
}

std::vector<double> gae_advantages(std::span<const double> token_rewards, const ValueTable& values,
                                   std::span<const StateId> states, const GAEConfig& cfg) {
  if (token_rewards.size() != states.size()) throw Error("gae_advantages: length mismatch");
  const std::size_t n = token_rewards.size();
  std::vector<double> adv(n);
  double running = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double next_v = t + 1 < n ? values.at(states[t + 1]) : 0.0;
    const double delta = token_rewards[t] + cfg.gamma * next_v - values.at(states[t]);
    running = delta + cfg.gamma * cfg.lambda * running;
    adv[t] = running;
  }
  return adv;
}

ValueLoss value_loss_grad(const ValueTable& values, std::span<const double> token_rewards,
                          std::span<const StateId> states, double gamma) {
  if (token_rewards.size() != states.size()) throw Error("value_loss_grad: length mismatch");
  const auto targets = returns_to_go(token_rewards, gamma);
  ValueLoss out{0.0, std::vector<double>(values.values().size(), 0.0)};
  for (std::size_t t = 0; t < states.size(); ++t) {
    const double err = targets[t] - values.at(states[t]);
    out.loss += 0.5 * err * err;
    out.grad[states[t]] -= err;
  }
  return out;
}

GradientEstimate advantage_pg_grad(const PolicyParams& policy, std::span<const AdvantageSample> batch) {
  if (batch.empty()) throw Error("advantage_pg_grad: empty batch");
  const auto v = static_cast<std::size_t>(policy.vocab().size);
  auto g = zero_estimate(policy, static_cast<int>(batch.size()), "advantage_pg");
  std::vector<double> probs(v);
  for (const auto& s : batch) {
    const auto path = policy.space().path(s.traj);
    if (s.advantages.size() != path.size()) throw Error("advantage_pg_grad: advantage length mismatch");
    for (std::size_t t = 0; t < path.size(); ++t) {
      token_distribution(policy, path[t], probs);
      double* row = g.values.data() + path[t] * v;
      const double a = s.advantages[t];
      for (std::size_t j = 0; j < v; ++j) row[j] -= a * probs[j];
      row[static_cast<std::size_t>(s.traj.tokens[t])] += a;
    }
  }
  scale(g.values, 1.0 / static_cast<double>(batch.size()));
  return g;
}

// ---------------------------------------------------------------------------
// PPO

void PPOConfig::validate() const {
  if (!(clip_eps >= 0.0)) throw ConfigError("ppo.clip_eps must be >= 0");
}

PPOTokenTerm ppo_token_term(double ratio, double advantage, const PPOConfig& cfg) {
  const double unclipped = ratio * advantage;
  if (!cfg.clipping_enabled) return {unclipped, advantage, false};
  const double bounded = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
  const double clipped = bounded * advantage;
  if (clipped < unclipped) return {clipped, 0.0, true};
  return {unclipped, advantage, false};
}

PPOResult ppo_grad(const PolicyParams& policy, const PolicyParams& old,
                   std::span<const AdvantageSample> batch, const PPOConfig& cfg) {
  if (batch.empty()) throw Error("ppo_grad: empty batch");
  if (!(policy.space() == old.space())) throw Error("ppo_grad: policy and old policy differ in shape");
  const auto v = static_cast<std::size_t>(policy.vocab().size);

  // Optional batch-level advantage whitening.
  double adv_mean = 0.0;
  double adv_scale = 1.0;
  if (cfg.normalize_advantages) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& s : batch) {
      for (double a : s.advantages) {
        sum += a;
        sq += a * a;
        ++n;
      }
    }
    adv_mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sq / static_cast<double>(n) - adv_mean * adv_mean);
    adv_scale = 1.0 / (std::sqrt(var) + 1e-8);
  }

  PPOResult out{zero_estimate(policy, static_cast<int>(batch.size()), "ppo"), 0.0, 0.0};
  std::vector<double> probs(v);
  std::size_t tokens = 0, clipped = 0;
  for (const auto& s : batch) {
    const auto path = policy.space().path(s.traj);
    if (s.advantages.size() != path.size()) throw Error("ppo_grad: advantage length mismatch");
    for (std::size_t t = 0; t < path.size(); ++t) {
      const auto tok = static_cast<std::size_t>(s.traj.tokens[t]);
      const double adv = (s.advantages[t] - adv_mean) * adv_scale;
      const double logp = token_logprob(policy, path[t], s.traj.tokens[t]);
      // d objective / d log pi(y_t|s_t)
      double coef = 0.0;
      if (cfg.ratio_enabled) {
        const double ratio = std::exp(logp - token_logprob(old, path[t], s.traj.tokens[t]));
        const auto term = ppo_token_term(ratio, adv, cfg);
        out.objective += term.objective;
        clipped += term.clipped ? 1 : 0;
        coef = term.d_ratio * ratio;
      } else {
        out.objective += adv * logp;
        coef = adv;
      }
      ++tokens;
      if (coef == 0.0) continue;
      token_distribution(policy, path[t], probs);
      double* row = out.grad.values.data() + path[t] * v;
      for (std::size_t j = 0; j < v; ++j) row[j] -= coef * probs[j];
      row[tok] += coef;
    }
  }
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  scale(out.grad.values, inv_n);
  out.objective *= inv_n;
  out.clip_fraction = tokens ? static_cast<double>(clipped) / static_cast<double>(tokens) : 0.0;
  return out;
}

GradientEstimate vanilla_pg_grad(const PolicyParams& policy, std::span<const TokenRewardSample> batch,
                                 const ValueTable& values, double gamma) {
  if (batch.empty()) throw Error("vanilla_pg_grad: empty batch");
  std::vector<AdvantageSample> adv;
  adv.reserve(batch.size());
  for (const auto& s : batch) {
    const auto path = policy.space().path(s.traj);
    if (s.token_rewards.size() != path.size()) throw Error("vanilla_pg_grad: reward length mismatch");
    auto g = returns_to_go(s.token_rewards, gamma);
    for (std::size_t t = 0; t < g.size(); ++t) g[t] -= values.at(path[t]);
    adv.push_back({s.traj, std::move(g)});
  }
  auto out = advantage_pg_grad(policy, adv);
  out.method = "vanilla_pg";
  return out;
}

// ---------------------------------------------------------------------------
// RAFT, DPO, contrastive identity

std::size_t raft_select(std::span<const ScoredSample> samples) {
  if (samples.empty()) throw Error("raft: needs at least one sample");
  std::size_t best = 0;
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (samples[i].reward > samples[best].reward) best = i;
  }
  return best;
}

GradientEstimate raft_grad(const PolicyParams& policy, std::span<const ScoredSample> samples) {
  auto g = grad_logprob(policy, samples[raft_select(samples)].traj);
  g.n_samples = static_cast<int>(samples.size());
  g.method = "raft";
  return g;
}

DpoResult dpo_grad(const PolicyParams& policy, const PolicyParams& ref, const PreferencePair& pair,
                   double beta) {
  const double margin =
      beta * ((trajectory_logprob(policy, pair.y_plus) - trajectory_logprob(ref, pair.y_plus)) -
              (trajectory_logprob(policy, pair.y_minus) - trajectory_logprob(ref, pair.y_minus)));
  DpoResult out{softplus(-margin), zero_estimate(policy, 2, "dpo")};
  // -d loss / d theta = sigmoid(-margin) * beta * (grad log pi(y+) - grad log pi(y-))
  const double coef = sigmoid(-margin) * beta;
  add_grad_logprob(policy, pair.y_plus, coef, out.grad.values);
  add_grad_logprob(policy, pair.y_minus, -coef, out.grad.values);
  return out;
}

double rloo2_contrastive_loss(const PolicyParams& policy, const Trajectory& y_plus,
                              const Trajectory& y_minus, double reward_plus, double reward_minus) {
  return 0.5 * (reward_plus - reward_minus) *
         (-trajectory_logprob(policy, y_plus) + trajectory_logprob(policy, y_minus));
}

GradientEstimate rloo2_contrastive_loss_grad(const PolicyParams& policy, const Trajectory& y_plus,
                                             const Trajectory& y_minus, double reward_plus,
                                             double reward_minus) {
  auto g = zero_estimate(policy, 2, "rloo2_contrastive");
  const double w = 0.5 * (reward_plus - reward_minus);
  add_grad_logprob(policy, y_plus, -w, g.values);
  add_grad_logprob(policy, y_minus, w, g.values);
  return g;
}

}  // namespace pgpref
