#include "pgpref/reward.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pgpref/errors.hpp"

namespace pgpref {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

// log(1 + exp(x)) without overflow
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_content_token(Token tok, const VocabSpec& vocab, const char* what) {
  if (tok < 0 || tok >= vocab.size || tok == vocab.eos_id) {
    throw ConfigError(std::string(what) + " must be a non-EOS token in range");
  }
}

}  // namespace

std::string task_kind(const GoldTask& task) {
  return std::visit(overloaded{[](const CountToken&) { return std::string("count_token"); },
                               [](const PatternBonus&) { return std::string("pattern_bonus"); },
                               [](const LengthShaped&) { return std::string("length_shaped"); }},
                    task);
}

void validate_task(const GoldTask& task, const VocabSpec& vocab, int t_max) {
  const double bound = std::visit(
      overloaded{[&](const CountToken& t) {
                   check_content_token(t.target, vocab, "count_token target");
                   return std::abs(t.weight) * t_max;
                 },
                 [&](const PatternBonus& t) {
                   check_content_token(t.first, vocab, "pattern_bonus bigram first");
                   check_content_token(t.second, vocab, "pattern_bonus bigram second");
                   return std::abs(t.base) + std::abs(t.bonus) * std::max(0, t_max - 1);
                 },
                 [&](const LengthShaped& t) {
                   return std::abs(t.slope) * std::max(std::abs(t.ideal_len - 1), std::abs(t_max - t.ideal_len));
                 }},
      task);
  if (!std::isfinite(bound) || bound > 100.0) {
    throw ConfigError("gold task reward bound " + std::to_string(bound) + " exceeds 100");
  }
}

double gold_reward(const GoldTask& task, const Trajectory& traj) {
  const auto& toks = traj.tokens;
  return std::visit(
      overloaded{[&](const CountToken& t) {
                   return t.weight * static_cast<double>(std::count(toks.begin(), toks.end(), t.target));
                 },
                 [&](const PatternBonus& t) {
                   int hits = 0;
                   for (std::size_t i = 0; i + 1 < toks.size(); ++i) {
                     if (toks[i] == t.first && toks[i + 1] == t.second) ++hits;
                   }
                   return t.base + t.bonus * hits;
                 },
                 [&](const LengthShaped& t) {
                   return -t.slope * std::abs(static_cast<double>(toks.size()) - t.ideal_len);
                 }},
      task);
}

// ---------------------------------------------------------------------------
// Features and the Bradley-Terry model

std::size_t feature_dim(const VocabSpec& vocab) {
  const auto v = static_cast<std::size_t>(vocab.size);
  return v + v * v + 2;
}

std::vector<double> featurize(const Trajectory& traj, const VocabSpec& vocab, int t_max) {
  const auto v = static_cast<std::size_t>(vocab.size);
  std::vector<double> f(feature_dim(vocab), 0.0);
  const auto& toks = traj.tokens;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    f[static_cast<std::size_t>(toks[i])] += 1.0;
    if (i + 1 < toks.size()) {
      f[v + static_cast<std::size_t>(toks[i]) * v + static_cast<std::size_t>(toks[i + 1])] += 1.0;
    }
  }
  f[v + v * v] = static_cast<double>(toks.size()) / t_max;
  f[v + v * v + 1] = 1.0;
  return f;
}

RewardModel RewardModel::zeros(const VocabSpec& vocab, int t_max) {
  return RewardModel{vocab, t_max, std::vector<double>(feature_dim(vocab), 0.0)};
}

double rm_score(const RewardModel& rm, const Trajectory& traj) {
  const auto f = featurize(traj, rm.vocab, rm.t_max);
  if (rm.weights.size() != f.size()) {
    throw Error("reward model has " + std::to_string(rm.weights.size()) + " weights, features have " +
                std::to_string(f.size()));
  }
  return std::inner_product(f.begin(), f.end(), rm.weights.begin(), 0.0);
}

double rm_loss(const RewardModel& rm, const PreferencePair& pair) {
  return softplus(-(rm_score(rm, pair.y_plus) - rm_score(rm, pair.y_minus)));
}

std::vector<double> rm_grad(const RewardModel& rm, const PreferencePair& pair) {
  const auto fp = featurize(pair.y_plus, rm.vocab, rm.t_max);
  const auto fm = featurize(pair.y_minus, rm.vocab, rm.t_max);
  const double gap = rm_score(rm, pair.y_plus) - rm_score(rm, pair.y_minus);
  // d/dgap softplus(-gap) = -sigmoid(-gap)
  const double coef = -sigmoid(-gap);
  std::vector<double> g(fp.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = coef * (fp[i] - fm[i]);
  return g;
}

double rm_mean_loss(const RewardModel& rm, std::span<const PreferencePair> dataset) {
  double total = 0.0;
  for (const auto& pair : dataset) total += rm_loss(rm, pair);
  return dataset.empty() ? 0.0 : total / static_cast<double>(dataset.size());
}

RewardModel train_rm(std::span<const PreferencePair> dataset, const VocabSpec& vocab, int t_max,
                     const RmTrainOptions& options, std::vector<double>* loss_history) {
  if (dataset.empty()) throw Error("train_rm: empty dataset");
  if (options.epochs < 0) throw ConfigError("train_rm: epochs must be >= 0");
  RewardModel rm = RewardModel::zeros(vocab, t_max);

  // Feature differences are fixed; cache them.
  std::vector<std::vector<double>> diffs;
  diffs.reserve(dataset.size());
  for (const auto& pair : dataset) {
    auto fp = featurize(pair.y_plus, vocab, t_max);
    const auto fm = featurize(pair.y_minus, vocab, t_max);
    for (std::size_t i = 0; i < fp.size(); ++i) fp[i] -= fm[i];
    diffs.push_back(std::move(fp));
  }

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = options.batch_size == 0 ? dataset.size() : options.batch_size;
  Rng rng{derive_seed(options.seed, 0x524d)};
  std::vector<double> grad(rm.weights.size());

  if (loss_history) loss_history->push_back(rm_mean_loss(rm, dataset));
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    if (batch < dataset.size()) std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = start; b < stop; ++b) {
        const auto& d = diffs[order[b]];
        const double gap = std::inner_product(d.begin(), d.end(), rm.weights.begin(), 0.0);
        const double coef = -sigmoid(-gap);
        for (std::size_t i = 0; i < d.size(); ++i) grad[i] += coef * d[i];
      }
      const double scale = options.lr / static_cast<double>(stop - start);
      for (std::size_t i = 0; i < grad.size(); ++i) rm.weights[i] -= scale * grad[i];
    }
    if (loss_history) loss_history->push_back(rm_mean_loss(rm, dataset));
  }
  return rm;
}

std::vector<PreferencePair> generate_preferences(const GoldTask& task, const PolicyParams& sampler,
                                                 int n_pairs, double label_noise, Rng& rng) {
  if (n_pairs < 1) throw Error("generate_preferences: n_pairs must be >= 1");
  if (!(label_noise >= 0.0 && label_noise <= 1.0)) {
    throw Error("generate_preferences: label_noise must be in [0, 1]");
  }
  std::vector<PreferencePair> pairs;
  pairs.reserve(static_cast<std::size_t>(n_pairs));
  for (int i = 0; i < n_pairs; ++i) {
    const Prompt prompt{i % sampler.n_prompts(), 0};
    Trajectory a = sample_trajectory(sampler, prompt, rng);
    Trajectory b = sample_trajectory(sampler, prompt, rng);
    for (int tries = 1; a == b; ++tries) {
      if (tries >= 100) {
        throw Error("generate_preferences: sampler collapsed on prompt " + std::to_string(prompt.id) +
                    " (no distinct pair in 100 draws)");
      }
      b = sample_trajectory(sampler, prompt, rng);
    }
    PreferencePair pair{prompt.id, std::move(a), std::move(b), false};
    if (gold_reward(task, pair.y_plus) < gold_reward(task, pair.y_minus)) {
      std::swap(pair.y_plus, pair.y_minus);
    }
    if (label_noise > 0.0 && uniform01(rng) < label_noise) {
      std::swap(pair.y_plus, pair.y_minus);
      pair.label_flipped = true;
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Shaping and noise

double shaped_reward(double r, double logp_theta, double logp_ref, double beta) {
  return r - beta * (logp_theta - logp_ref);
}

std::vector<double> token_shaped_rewards(const PolicyParams& policy, const PolicyParams& ref,
                                         const Trajectory& traj, double r, double beta) {
  const auto path = policy.space().path(traj);
  std::vector<double> out(path.size(), 0.0);
  if (beta != 0.0) {
    for (std::size_t t = 0; t < path.size(); ++t) {
      out[t] = -beta * (token_logprob(policy, path[t], traj.tokens[t]) -
                        token_logprob(ref, path[t], traj.tokens[t]));
    }
  }
  out.back() += r;
  return out;
}

double inject_noise(double r, const NoiseConfig& cfg, Rng& rng) {
  if (cfg.sigma < 0.0) throw ConfigError("noise sigma must be >= 0");
  if (cfg.sigma == 0.0) return r;
  return r + std::normal_distribution<double>{0.0, cfg.sigma}(rng);
}

}  // namespace pgpref
