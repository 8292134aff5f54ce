#include "pgpref/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pgpref/errors.hpp"

namespace pgpref {

namespace {

constexpr int kPretrainIterationCap = 20000;
constexpr double kPretrainStep = 1.0;
constexpr double kPretrainNoise = 0.05;

// Stream tags keep the sampling, noise and dataset streams independent.
constexpr std::uint64_t kSampleStream = 0x5a;
constexpr std::uint64_t kNoiseStream = 0x6e;
constexpr std::uint64_t kPrefStream = 0x70;
constexpr std::uint64_t kEvalStream = 0x65;

struct Sampled {
  Trajectory traj;
  double r_clean = 0.0;
  double r_noisy = 0.0;
};

struct Slot {
  Prompt prompt;
  std::vector<Sampled> samples;
  const PreferencePair* pair = nullptr;  // DPO
  std::vector<AdvantageSample> advantages;  // PPO, fixed across gradient steps
};

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::ppo: return "ppo";
    case Method::vanilla_pg: return "vanilla_pg";
    case Method::reinforce: return "reinforce";
    case Method::reinforce_ma_baseline: return "reinforce_ma_baseline";
    case Method::rloo: return "rloo";
    case Method::raft: return "raft";
    case Method::dpo: return "dpo";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::ppo, Method::vanilla_pg, Method::reinforce, Method::reinforce_ma_baseline,
                   Method::rloo, Method::raft, Method::dpo}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown method '" + name + "'");
}

void RunConfig::validate() const {
  vocab.validate();
  if (n_prompts < 1) throw ConfigError("policy.n_prompts must be >= 1");
  if (t_max < 1) throw ConfigError("policy.t_max must be >= 1");
  validate_task(task, vocab, t_max);
  if (!(pretrain_strength >= 0.0 && pretrain_strength <= 1.0)) {
    throw ConfigError("policy.pretrain_strength must be in [0, 1]");
  }
  if (method == Method::rloo && k < 2) throw ConfigError("method.k must be >= 2 for rloo");
  if (k < 1) throw ConfigError("method.k must be >= 1");
  if (!(shaping.beta >= 0.0)) throw ConfigError("shaping.beta must be >= 0");
  gae.validate();
  ppo.validate();
  if (!(value.lr >= 0.0)) throw ConfigError("value.lr must be >= 0");
  if (rm.pairs < 1) throw ConfigError("rm.pairs must be >= 1");
  if (!(rm.lr > 0.0)) throw ConfigError("rm.lr must be > 0");
  if (rm.epochs < 0) throw ConfigError("rm.epochs must be >= 0");
  if (!(rm.label_noise >= 0.0 && rm.label_noise <= 1.0)) throw ConfigError("rm.label_noise must be in [0, 1]");
  if (!(noise.sigma >= 0.0)) throw ConfigError("noise.sigma must be >= 0");
  if (!(lr >= 0.0)) throw ConfigError("schedule.lr must be >= 0");
  if (!(warmup_frac >= 0.0 && warmup_frac <= 1.0)) throw ConfigError("schedule.warmup_frac must be in [0, 1]");
  if (steps < 0) throw ConfigError("schedule.steps must be >= 0");
  if (batch_prompts < 1) throw ConfigError("schedule.batch_prompts must be >= 1");
  if (grad_steps_per_batch < 1) throw ConfigError("schedule.grad_steps_per_batch must be >= 1");
  if (eval.every < 0) throw ConfigError("eval.every must be >= 0");
  if (eval.n_eval < 1) throw ConfigError("eval.n_eval must be >= 1");
  StateSpace{vocab, n_prompts, t_max};  // budget check
}

int RunConfig::samples_per_prompt() const {
  switch (method) {
    case Method::rloo:
    case Method::raft: return k;
    case Method::dpo: return 0;
    default: return 1;
  }
}

int warmup_steps(const RunConfig& cfg) {
  return static_cast<int>(std::ceil(cfg.warmup_frac * cfg.steps - 1e-12));
}

double lr_at(int step, const RunConfig& cfg) {
  const int warm = warmup_steps(cfg);
  if (warm <= 0 || step + 1 >= warm) return cfg.lr;
  return cfg.lr * static_cast<double>(step + 1) / warm;
}

// ---------------------------------------------------------------------------
// Pretraining

PolicyParams pretrain_policy(const GoldTask& task, const VocabSpec& vocab, int n_prompts, int t_max,
                             double strength, std::uint64_t seed) {
  if (!(strength >= 0.0 && strength <= 1.0)) throw ConfigError("pretrain strength must be in [0, 1]");
  validate_task(task, vocab, t_max);
  PolicyParams policy = init_policy(vocab, n_prompts, t_max);
  if (strength == 0.0) return policy;

  const RewardFn gold = [&task](const Trajectory& y) { return gold_reward(task, y); };
  const double uniform = exact_expected_reward(policy, gold, Prompt{0, 0});
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& y : enumerate_trajectories(vocab, Prompt{0, 0}, t_max)) best = std::max(best, gold(y));
  if (best <= uniform) return policy;
  const double target = uniform + strength * (best - uniform);

  policy = init_policy(vocab, n_prompts, t_max, {InitKind::seeded_noise, kPretrainNoise, seed});
  const ShapingConfig no_shaping{0.0, RewardSource::gold};
  std::vector<double> reached(static_cast<std::size_t>(n_prompts), 0.0);
  for (int iter = 0; iter < kPretrainIterationCap; ++iter) {
    bool done = true;
    for (int p = 0; p < n_prompts; ++p) {
      const Prompt prompt{p, 0};
      reached[static_cast<std::size_t>(p)] = exact_expected_reward(policy, gold, prompt);
      if (reached[static_cast<std::size_t>(p)] >= target) continue;
      done = false;
      policy.add_scaled(exact_policy_gradient(policy, gold, no_shaping, policy, prompt), kPretrainStep);
    }
    if (done) return policy;
  }
  const double worst = *std::min_element(reached.begin(), reached.end());
  throw NumericError("pretrain did not converge after " + std::to_string(kPretrainIterationCap) +
                     " iterations: target " + std::to_string(target) + ", worst prompt reached " +
                     std::to_string(worst) + " (uniform " + std::to_string(uniform) + ", max " +
                     std::to_string(best) + ")");
}

// ---------------------------------------------------------------------------
// KL

KlEstimate measure_kl(const PolicyParams& policy, const PolicyParams& ref, const Prompt& prompt,
                      std::size_t budget) {
  if (trajectory_count(policy.vocab(), policy.t_max()) > budget) {
    Rng rng{derive_seed(0x4b4c, static_cast<std::uint64_t>(prompt.id))};
    return measure_kl_mc(policy, ref, prompt, 10000, rng);
  }
  const auto& space = policy.space();
  const auto v = static_cast<std::size_t>(policy.vocab().size);
  const int eos = policy.vocab().eos_id;
  std::vector<double> p(v), q(v);
  std::vector<std::pair<StateId, double>> frontier{{space.root(prompt.id), 1.0}}, next;
  double kl = 0.0;
  for (int depth = 0; depth < policy.t_max() && !frontier.empty(); ++depth) {
    next.clear();
    for (const auto& [id, reach] : frontier) {
      token_distribution(policy, id, p);
      token_distribution(ref, id, q);
      double row_kl = 0.0;
      for (std::size_t j = 0; j < v; ++j) {
        if (p[j] > 0.0) row_kl += p[j] * (std::log(p[j]) - std::log(q[j]));
      }
      kl += reach * row_kl;
      if (depth + 1 < policy.t_max()) {
        for (std::size_t j = 0; j < v; ++j) {
          if (static_cast<int>(j) != eos && reach * p[j] > 0.0) {
            next.emplace_back(space.child(id, static_cast<Token>(j)), reach * p[j]);
          }
        }
      }
    }
    std::swap(frontier, next);
  }
  return {kl, 0.0, true};
}

KlEstimate measure_kl_mc(const PolicyParams& policy, const PolicyParams& ref, const Prompt& prompt,
                         int n_samples, Rng& rng) {
  if (n_samples < 2) throw Error("measure_kl_mc: needs at least 2 samples");
  double mean = 0.0, m2 = 0.0;
  for (int i = 1; i <= n_samples; ++i) {
    const auto y = sample_trajectory(policy, prompt, rng);
    const double x = trajectory_logprob(policy, y) - trajectory_logprob(ref, y);
    const double d = x - mean;
    mean += d / i;
    m2 += d * (x - mean);
  }
  return {mean, std::sqrt(m2 / (n_samples - 1) / n_samples), false};
}

double mean_kl(const PolicyParams& policy, const PolicyParams& ref) {
  double total = 0.0;
  for (int p = 0; p < policy.n_prompts(); ++p) total += measure_kl(policy, ref, Prompt{p, 0}).value;
  return total / policy.n_prompts();
}

// ---------------------------------------------------------------------------
// Training

TrainState init_train_state(const RunConfig& cfg) {
  cfg.validate();
  PolicyParams ref =
      pretrain_policy(cfg.task, cfg.vocab, cfg.n_prompts, cfg.t_max, cfg.pretrain_strength, cfg.pretrain_seed);
  TrainState state{ref, ref, ValueTable{ref.space()}, {}, std::nullopt, {}, 0, 0, 0};
  const bool needs_pairs = cfg.method == Method::dpo || cfg.shaping.reward_source == RewardSource::learned_rm;
  if (needs_pairs) {
    Rng rng = make_stream(cfg.seed, kPrefStream);
    auto pairs = generate_preferences(cfg.task, ref, cfg.rm.pairs, cfg.rm.label_noise, rng);
    if (cfg.shaping.reward_source == RewardSource::learned_rm) {
      state.rm = train_rm(pairs, cfg.vocab, cfg.t_max, RmTrainOptions{cfg.rm.lr, cfg.rm.epochs, cfg.seed, 0});
    }
    if (cfg.method == Method::dpo) state.pairs = std::move(pairs);
  }
  return state;
}

MetricsRecord train_step(TrainState& state, const RunConfig& cfg) {
  const int step = state.step;
  PolicyParams& policy = state.policy;
  const PolicyParams& ref = state.ref;
  const double beta = cfg.shaping.beta;
  const double lr = lr_at(step, cfg);
  const auto reward_of = [&](const Trajectory& y) {
    return state.rm ? rm_score(*state.rm, y) : gold_reward(cfg.task, y);
  };
  const auto shaped = [&](const Trajectory& y, double r) {
    if (beta == 0.0) return r;
    return shaped_reward(r, trajectory_logprob(policy, y), trajectory_logprob(ref, y), beta);
  };

  MetricsRecord rec;
  rec.step = step + 1;
  rec.lr = lr;

  // Sampling and scoring. Each slot owns streams derived from (seed, step, slot).
  std::vector<Slot> slots(static_cast<std::size_t>(cfg.batch_prompts));
  double r_sum = 0.0;
  std::int64_t n_sampled = 0;
  for (int b = 0; b < cfg.batch_prompts; ++b) {
    auto& slot = slots[static_cast<std::size_t>(b)];
    const auto flat = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(cfg.batch_prompts) +
                      static_cast<std::uint64_t>(b);
    slot.prompt = Prompt{static_cast<int>(flat % static_cast<std::uint64_t>(cfg.n_prompts)), 0};
    if (cfg.method == Method::dpo) {
      slot.pair = &state.pairs[flat % state.pairs.size()];
      continue;
    }
    Rng rng = make_stream(cfg.seed, derive_seed(kSampleStream, static_cast<std::uint64_t>(step)),
                          static_cast<std::uint64_t>(b));
    Rng noise_rng = make_stream(cfg.noise.seed, derive_seed(kNoiseStream, static_cast<std::uint64_t>(step)),
                                static_cast<std::uint64_t>(b));
    for (int i = 0; i < cfg.samples_per_prompt(); ++i) {
      Sampled s;
      s.traj = sample_trajectory(policy, slot.prompt, rng);
      s.r_clean = reward_of(s.traj);
      s.r_noisy = inject_noise(s.r_clean, cfg.noise, noise_rng);
      r_sum += s.r_clean;
      ++n_sampled;
      slot.samples.push_back(std::move(s));
    }
  }
  rec.r_mean = n_sampled ? r_sum / static_cast<double>(n_sampled) : 0.0;
  state.samples_seen += n_sampled;
  rec.samples = state.samples_seen;

  const double baseline = state.baseline.count > 0 ? state.baseline.running_mean : 0.0;
  if (cfg.method == Method::reinforce_ma_baseline) rec.baseline = baseline;

  // PPO: advantages and pi_old are frozen for the whole batch.
  const PolicyParams old = policy;
  if (cfg.method == Method::ppo) {
    for (auto& slot : slots) {
      for (const auto& s : slot.samples) {
        const auto token_r = token_shaped_rewards(policy, ref, s.traj, s.r_noisy, beta);
        const auto path = policy.space().path(s.traj);
        slot.advantages.push_back({s.traj, gae_advantages(token_r, state.values, path, cfg.gae)});
      }
    }
  }

  std::vector<double> first_shaped;
  for (int g = 0; g < cfg.grad_steps_per_batch; ++g) {
    std::vector<std::vector<double>> per_slot;
    per_slot.reserve(slots.size());
    std::vector<double> shaped_this_step;
    std::size_t clip_tokens = 0;
    double clipped_weighted = 0.0;
    std::vector<double> value_grad(state.values.values().size(), 0.0);
    std::size_t value_trajs = 0;

    for (auto& slot : slots) {
      std::vector<ScoredSample> scored;
      for (const auto& s : slot.samples) {
        const double R = shaped(s.traj, s.r_noisy);
        shaped_this_step.push_back(R);
        scored.push_back({s.traj, R});
      }
      GradientEstimate est;
      switch (cfg.method) {
        case Method::reinforce:
          est = reinforce_grad(policy, scored, 0.0);
          break;
        case Method::reinforce_ma_baseline:
          est = reinforce_grad(policy, scored, baseline);
          break;
        case Method::rloo:
          est = rloo_grad(policy, scored);
          break;
        case Method::raft: {
          std::vector<ScoredSample> ranked;
          for (const auto& s : slot.samples) {
            const double r = cfg.rank_on_noised ? s.r_noisy : s.r_clean;
            ranked.push_back({s.traj, cfg.raft_rank == RaftRank::shaped ? shaped(s.traj, r) : r});
          }
          est = raft_grad(policy, ranked);
          break;
        }
        case Method::dpo:
          est = dpo_grad(policy, ref, *slot.pair, beta).grad;
          break;
        case Method::ppo: {
          const auto res = ppo_grad(policy, old, slot.advantages, cfg.ppo);
          std::size_t tokens = 0;
          for (const auto& a : slot.advantages) tokens += a.advantages.size();
          clip_tokens += tokens;
          clipped_weighted += res.clip_fraction * static_cast<double>(tokens);
          est = res.grad;
          break;
        }
        case Method::vanilla_pg: {
          std::vector<TokenRewardSample> batch;
          for (const auto& s : slot.samples) {
            batch.push_back({s.traj, token_shaped_rewards(policy, ref, s.traj, s.r_noisy, beta)});
          }
          est = vanilla_pg_grad(policy, batch, state.values, cfg.gae.gamma);
          break;
        }
      }
      if (cfg.method == Method::ppo || cfg.method == Method::vanilla_pg) {
        for (const auto& s : slot.samples) {
          const auto token_r = token_shaped_rewards(policy, ref, s.traj, s.r_noisy, beta);
          const auto vl = value_loss_grad(state.values, token_r, policy.space().path(s.traj), cfg.gae.gamma);
          for (std::size_t i = 0; i < value_grad.size(); ++i) value_grad[i] += vl.grad[i];
          ++value_trajs;
        }
      }
      per_slot.push_back(std::move(est.values));
    }

    std::vector<double> grad(policy.size(), 0.0);
    for (const auto& v : per_slot) {
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += v[i];
    }
    for (double& x : grad) x /= static_cast<double>(per_slot.size());
    if (!all_finite(grad)) {
      throw NumericError("non-finite gradient at step " + std::to_string(step) + ", gradient step " +
                         std::to_string(g) + " (method " + to_string(cfg.method) + ")");
    }

    if (g == 0) {
      first_shaped = shaped_this_step;
      if (per_slot.size() > 1) {
        for (std::size_t i = 0; i < grad.size(); ++i) {
          double ss = 0.0;
          for (const auto& v : per_slot) ss += (v[i] - grad[i]) * (v[i] - grad[i]);
          rec.var_trace += ss / static_cast<double>(per_slot.size() - 1);
        }
      }
    }
    if (cfg.method == Method::ppo) {
      rec.clip_frac = clip_tokens ? clipped_weighted / static_cast<double>(clip_tokens) : 0.0;
    }

    policy.add_scaled(grad, lr);

    const bool value_capped = cfg.value.max_updates >= 0 && state.value_updates >= cfg.value.max_updates;
    if (value_trajs > 0 && !value_capped) {
      const double scale = cfg.value.lr / static_cast<double>(value_trajs);
      auto vals = state.values.values();
      for (std::size_t i = 0; i < vals.size(); ++i) vals[i] -= scale * value_grad[i];
      ++state.value_updates;
    }
  }

  if (!first_shaped.empty()) {
    double total = 0.0;
    for (double R : first_shaped) total += R;
    rec.R_mean = total / static_cast<double>(first_shaped.size());
  }
  if (cfg.method == Method::reinforce_ma_baseline) {
    state.baseline = update_baseline(state.baseline, first_shaped);
  }

  rec.kl = mean_kl(policy, ref);
  rec.gold = exact_expected_gold(policy, cfg.task);
  if (!all_finite(policy.theta()) || !std::isfinite(rec.kl) || !std::isfinite(rec.R_mean)) {
    throw NumericError("non-finite policy or metrics after step " + std::to_string(step));
  }
  ++state.step;
  return rec;
}

RunResult run_training(const RunConfig& cfg) {
  RunResult result{{}, init_train_state(cfg)};
  result.history.reserve(static_cast<std::size_t>(cfg.steps));
  for (int s = 0; s < cfg.steps; ++s) {
    auto rec = train_step(result.final_state, cfg);
    const bool eval_point = cfg.eval.every > 0 && ((s + 1) % cfg.eval.every == 0 || s + 1 == cfg.steps);
    if (eval_point) {
      Rng rng = make_stream(cfg.eval_seed, kEvalStream, static_cast<std::uint64_t>(s));
      rec.eval = eval_policy(result.final_state.policy, result.final_state.ref, cfg.task, cfg.eval.n_eval, rng);
    }
    result.history.push_back(std::move(rec));
  }
  return result;
}

}  // namespace pgpref
