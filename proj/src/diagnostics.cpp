#include "pgpref/diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "pgpref/errors.hpp"

namespace pgpref {

std::size_t trajectory_count(const VocabSpec& vocab, int t_max) {
  const auto c = static_cast<std::size_t>(vocab.content_count());
  std::size_t total = 0, level = 1;
  for (int t = 0; t < t_max; ++t) {
    total += level;
    level *= c;
  }
  return total + level;
}

std::vector<Trajectory> enumerate_trajectories(const VocabSpec& vocab, const Prompt& prompt, int t_max,
                                               std::size_t budget) {
  vocab.validate();
  if (t_max < 1) throw Error("enumerate_trajectories: t_max must be >= 1");
  // Guard against overflow before asking for the count.
  double approx = 0.0;
  for (int t = 0; t <= t_max; ++t) approx += std::pow(static_cast<double>(vocab.content_count()), t);
  if (approx > static_cast<double>(budget)) {
    throw BudgetError("trajectory enumeration exceeds budget of " + std::to_string(budget));
  }
  std::vector<Trajectory> out;
  out.reserve(trajectory_count(vocab, t_max));
  Trajectory current{prompt.id, {}, false};
  // Depth-first: at each position emit EOS first as a terminal, then recurse
  // over content tokens in increasing order.
  auto recurse = [&](auto&& self) -> void {
    const auto len = static_cast<int>(current.tokens.size());
    for (Token tok = 0; tok < vocab.size; ++tok) {
      current.tokens.push_back(tok);
      if (tok == vocab.eos_id) {
        out.push_back(Trajectory{prompt.id, current.tokens, true});
      } else if (len + 1 == t_max) {
        out.push_back(Trajectory{prompt.id, current.tokens, false});
      } else {
        self(self);
      }
      current.tokens.pop_back();
    }
  };
  recurse(recurse);
  return out;
}

std::vector<double> exact_policy_gradient(const PolicyParams& policy, const RewardFn& reward,
                                          const ShapingConfig& shaping, const PolicyParams& ref,
                                          const Prompt& prompt) {
  std::vector<double> grad(policy.size(), 0.0);
  for (const auto& traj : enumerate_trajectories(policy.vocab(), prompt, policy.t_max())) {
    const double logp = trajectory_logprob(policy, traj);
    const double prob = std::exp(logp);
    if (prob == 0.0) continue;
    double big_r = reward(traj);
    if (shaping.beta != 0.0) big_r = shaped_reward(big_r, logp, trajectory_logprob(ref, traj), shaping.beta);
    add_grad_logprob(policy, traj, prob * big_r, grad);
  }
  return grad;
}

double exact_expected_reward(const PolicyParams& policy, const RewardFn& reward, const Prompt& prompt) {
  double total = 0.0;
  for (const auto& traj : enumerate_trajectories(policy.vocab(), prompt, policy.t_max())) {
    total += std::exp(trajectory_logprob(policy, traj)) * reward(traj);
  }
  return total;
}

double exact_expected_gold(const PolicyParams& policy, const GoldTask& task) {
  double total = 0.0;
  const RewardFn fn = [&task](const Trajectory& y) { return gold_reward(task, y); };
  for (int p = 0; p < policy.n_prompts(); ++p) total += exact_expected_reward(policy, fn, Prompt{p, 0});
  return total / policy.n_prompts();
}

ValueTable exact_state_values(const PolicyParams& policy, const PolicyParams& ref, const RewardFn& reward,
                              double beta, double gamma) {
  const auto& space = policy.space();
  const auto v = static_cast<std::size_t>(policy.vocab().size);
  const int eos = policy.vocab().eos_id;
  ValueTable values{space};
  std::vector<double> probs(v);
  // Children always carry larger ids than their parents, so a reverse sweep
  // sees every child before its parent.
  for (StateId id = space.num_states(); id-- > 0;) {
    const auto state = space.state_at(id);
    const int depth = static_cast<int>(state.prefix.size());
    token_distribution(policy, id, probs);
    double total = 0.0;
    for (Token a = 0; a < static_cast<Token>(v); ++a) {
      const double p = probs[static_cast<std::size_t>(a)];
      if (p == 0.0) continue;
      double step_reward = 0.0;
      if (beta != 0.0) step_reward = -beta * (std::log(p) - token_logprob(ref, id, a));
      const bool terminal = a == eos || depth + 1 == policy.t_max();
      if (terminal) {
        Trajectory y{state.prompt_id, state.prefix, a == eos};
        y.tokens.push_back(a);
        step_reward += reward(y);
      } else {
        step_reward += gamma * values.at(space.child(id, a));
      }
      total += p * step_reward;
    }
    values.at(id) = total;
  }
  return values;
}

// ---------------------------------------------------------------------------
// Monte-Carlo statistics

GradientStats estimator_stats(const Estimator& estimator, std::span<const double> oracle, int n_reps,
                              Rng& rng) {
  if (n_reps < kMinReps) {
    throw ConfigError("estimator_stats: n_reps must be >= " + std::to_string(kMinReps) + ", got " +
                      std::to_string(n_reps));
  }
  const std::size_t dim = oracle.size();
  std::vector<double> mean(dim, 0.0), m2(dim, 0.0);
  for (int i = 1; i <= n_reps; ++i) {
    const auto g = estimator(rng);
    if (g.values.size() != dim) throw Error("estimator_stats: estimate size does not match oracle");
    for (std::size_t j = 0; j < dim; ++j) {
      const double x = g.values[j];
      if (!std::isfinite(x)) throw NumericError("estimator_stats: non-finite estimate");
      const double delta = x - mean[j];
      mean[j] += delta / i;
      m2[j] += delta * (x - mean[j]);
    }
  }
  GradientStats stats;
  stats.n = n_reps;
  stats.empirical_mean = mean;
  stats.std_error.resize(dim);
  stats.bias_vector.resize(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    const double var = m2[j] / (n_reps - 1);
    stats.trace_variance += var;
    stats.std_error[j] = std::sqrt(var / n_reps);
    stats.bias_vector[j] = mean[j] - oracle[j];
    const double bias = std::abs(stats.bias_vector[j]);
    double in_se = 0.0;
    if (stats.std_error[j] > 0.0) {
      in_se = bias / stats.std_error[j];
    } else if (bias > 1e-12) {
      in_se = std::numeric_limits<double>::infinity();
    }
    stats.max_bias_in_se = std::max(stats.max_bias_in_se, in_se);
  }
  return stats;
}

EstimatorSpec parse_estimator(std::string_view name) {
  EstimatorSpec spec;
  spec.name = std::string(name);
  auto number_after = [&](std::string_view prefix, auto& out) {
    const auto rest = name.substr(prefix.size());
    const auto res = std::from_chars(rest.data(), rest.data() + rest.size(), out);
    if (rest.empty() || res.ec != std::errc{} || res.ptr != rest.data() + rest.size()) {
      throw ConfigError("malformed estimator name '" + std::string(name) + "'");
    }
  };
  if (name == "oracle") {
    spec.kind = EstimatorSpec::Kind::oracle;
  } else if (name == "reinforce") {
    spec.kind = EstimatorSpec::Kind::reinforce;
  } else if (name == "reinforce_ma") {
    spec.kind = EstimatorSpec::Kind::reinforce_ma;
  } else if (name == "vanilla_pg") {
    spec.kind = EstimatorSpec::Kind::vanilla_pg;
  } else if (name.starts_with("rloo")) {
    spec.kind = EstimatorSpec::Kind::rloo;
    number_after("rloo", spec.k);
    if (spec.k < 2) throw ConfigError("rloo estimator needs k >= 2");
  } else if (name.starts_with("gae")) {
    spec.kind = EstimatorSpec::Kind::gae;
    number_after("gae", spec.lambda);
    if (!(spec.lambda >= 0.0 && spec.lambda <= 1.0)) throw ConfigError("gae lambda must be in [0, 1]");
  } else {
    throw ConfigError("unknown estimator '" + std::string(name) + "'");
  }
  return spec;
}

Estimator make_estimator(const EstimatorSpec& spec, const EstimatorContext& ctx) {
  if (!ctx.policy || !ctx.ref) throw Error("make_estimator: context needs policy and ref");
  const PolicyParams& policy = *ctx.policy;
  const PolicyParams& ref = *ctx.ref;
  const auto shaped = [&policy, &ref, reward = ctx.reward, beta = ctx.beta](const Trajectory& y) {
    const double r = reward(y);
    if (beta == 0.0) return r;
    return shaped_reward(r, trajectory_logprob(policy, y), trajectory_logprob(ref, y), beta);
  };
  const Prompt prompt = ctx.prompt;

  switch (spec.kind) {
    case EstimatorSpec::Kind::oracle: {
      std::vector<double> oracle(ctx.oracle.begin(), ctx.oracle.end());
      return [oracle](Rng&) { return GradientEstimate{oracle, 0, "oracle"}; };
    }
    case EstimatorSpec::Kind::reinforce:
    case EstimatorSpec::Kind::reinforce_ma: {
      const double b = spec.kind == EstimatorSpec::Kind::reinforce ? 0.0 : ctx.frozen_baseline;
      return [&policy, shaped, prompt, b](Rng& rng) {
        auto y = sample_trajectory(policy, prompt, rng);
        const ScoredSample s{y, shaped(y)};
        return reinforce_grad(policy, std::span(&s, 1), b);
      };
    }
    case EstimatorSpec::Kind::rloo:
      return [&policy, shaped, prompt, k = spec.k](Rng& rng) {
        std::vector<ScoredSample> samples;
        samples.reserve(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) {
          auto y = sample_trajectory(policy, prompt, rng);
          const double r = shaped(y);
          samples.push_back({std::move(y), r});
        }
        return rloo_grad(policy, samples);
      };
    case EstimatorSpec::Kind::vanilla_pg:
    case EstimatorSpec::Kind::gae: {
      if (!ctx.values) throw Error("make_estimator: " + spec.name + " needs a value table");
      const ValueTable* values = ctx.values;
      const GAEConfig gae{1.0, spec.kind == EstimatorSpec::Kind::gae ? spec.lambda : 1.0};
      return [&policy, &ref, values, reward = ctx.reward, beta = ctx.beta, prompt, gae,
              vanilla = spec.kind == EstimatorSpec::Kind::vanilla_pg](Rng& rng) {
        auto y = sample_trajectory(policy, prompt, rng);
        auto token_r = token_shaped_rewards(policy, ref, y, reward(y), beta);
        if (vanilla) {
          const TokenRewardSample s{std::move(y), std::move(token_r)};
          return vanilla_pg_grad(policy, std::span(&s, 1), *values, gae.gamma);
        }
        const auto path = policy.space().path(y);
        AdvantageSample s{std::move(y), gae_advantages(token_r, *values, path, gae)};
        auto g = advantage_pg_grad(policy, std::span(&s, 1));
        g.method = "gae";
        return g;
      };
    }
  }
  throw Error("make_estimator: unhandled estimator kind");
}

// ---------------------------------------------------------------------------
// Evaluation metrics

double simulated_winrate(std::span<const Trajectory> candidates, std::span<const Trajectory> references,
                         const GoldTask& task) {
  if (candidates.size() != references.size()) throw Error("simulated_winrate: list lengths differ");
  if (candidates.empty()) throw Error("simulated_winrate: empty lists");
  double wins = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double c = gold_reward(task, candidates[i]);
    const double r = gold_reward(task, references[i]);
    wins += c > r ? 1.0 : (c == r ? 0.5 : 0.0);
  }
  return wins / static_cast<double>(candidates.size());
}

double distinct_n(std::span<const Trajectory> trajs, int n) {
  if (n < 1) throw Error("distinct_n: n must be >= 1");
  double total = 0.0;
  std::size_t counted = 0;
  std::set<std::vector<Token>> grams;
  for (const auto& y : trajs) {
    const auto& toks = y.tokens;
    if (toks.size() < static_cast<std::size_t>(n)) continue;
    grams.clear();
    const std::size_t count = toks.size() - static_cast<std::size_t>(n) + 1;
    for (std::size_t i = 0; i < count; ++i) grams.emplace(toks.begin() + i, toks.begin() + i + n);
    total += static_cast<double>(grams.size()) / static_cast<double>(count);
    ++counted;
  }
  if (counted == 0) throw Error("distinct_n: no trajectory has at least " + std::to_string(n) + " tokens");
  return total / static_cast<double>(counted);
}

double perplexity_proxy(const PolicyParams& policy, std::span<const Trajectory> references) {
  if (references.empty()) throw Error("perplexity_proxy: empty reference set");
  double logp = 0.0;
  std::size_t tokens = 0;
  for (const auto& y : references) {
    logp += trajectory_logprob(policy, y);
    tokens += y.tokens.size();
  }
  if (!std::isfinite(logp)) return std::numeric_limits<double>::infinity();
  return std::exp(-logp / static_cast<double>(tokens));
}

EvalReport eval_policy(const PolicyParams& policy, const PolicyParams& ref, const GoldTask& task, int n_eval,
                       Rng& rng) {
  if (n_eval < 1) throw Error("eval_policy: n_eval must be >= 1");
  EvalReport report;
  std::vector<Trajectory> greedy, greedy_ref, samples, references;
  samples.reserve(static_cast<std::size_t>(n_eval));
  for (int i = 0; i < n_eval; ++i) {
    const Prompt prompt{i % policy.n_prompts(), 0};
    greedy.push_back(greedy_decode(policy, prompt));
    greedy_ref.push_back(greedy_decode(ref, prompt));
    samples.push_back(sample_trajectory(policy, prompt, rng));
    references.push_back(sample_trajectory(ref, prompt, rng));
  }
  report.winrate_vs_ref = simulated_winrate(greedy, greedy_ref, task);

  double sum = 0.0, sq = 0.0, len = 0.0;
  for (const auto& y : samples) {
    const double r = gold_reward(task, y);
    sum += r;
    sq += r * r;
    len += static_cast<double>(y.tokens.size());
  }
  const double n = n_eval;
  report.mean_reward_r = sum / n;
  report.mean_length = len / n;
  report.reward_variance = n_eval > 1 ? std::max(0.0, (sq - sum * sum / n) / (n - 1)) : 0.0;
  // A sample set with no sequence long enough for the n-gram is reported as
  // fully diverse rather than undefined.
  try {
    report.distinct_1 = distinct_n(samples, 1);
  } catch (const Error&) {
    report.distinct_1 = 1.0;
  }
  try {
    report.distinct_2 = distinct_n(samples, 2);
  } catch (const Error&) {
    report.distinct_2 = 1.0;
  }
  report.ppl_proxy = perplexity_proxy(policy, references);
  return report;
}

}  // namespace pgpref
