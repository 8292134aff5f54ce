// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Tolerances are pinned below and never adapted to the outcome.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "pgpref/commands.hpp"
#include "pgpref/diagnostics.hpp"
#include "pgpref/estimators.hpp"
#include "pgpref/io.hpp"
#include "pgpref/trainer.hpp"

using namespace pgpref;
namespace fs = std::filesystem;

namespace {

constexpr double kMaxBiasInSe = 3.0;
constexpr int kUnbiasedReps = 100000;
constexpr double kVarianceRatio = 1.1;
constexpr double kIdentityTol = 1e-10;
constexpr int kIdentityCases = 1000;
constexpr double kFdRelTol = 1e-6;
constexpr int kFdCases = 100;
constexpr double kClipParity = 0.02;
constexpr double kClipFraction = 0.05;
constexpr double kNoiseSigma = 5.0;
constexpr double kKlAgreement = 0.20;
constexpr double kMassTol = 1e-10;
constexpr double kOracleFdTol = 1e-8;
constexpr int kSeeds = 5;

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::printf("%s [%d] %s: %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// Helpers independent of the library's gradient code

std::vector<double> central_diff(std::vector<double> x, const std::function<double(const std::vector<double>&)>& f,
                                 double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

std::vector<double> policy_diff(const PolicyParams& p, const std::function<double(const PolicyParams&)>& f,
                                double h = 1e-5) {
  const std::vector<double> theta(p.theta().begin(), p.theta().end());
  return central_diff(
      theta,
      [&](const std::vector<double>& t) {
        PolicyParams q = p;
        std::copy(t.begin(), t.end(), q.theta().begin());
        return f(q);
      },
      h);
}

double rel_error(std::span<const double> a, std::span<const double> b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

PolicyParams random_policy(const VocabSpec& v, int t_max, std::mt19937_64& rng) {
  PolicyParams p = init_policy(v, 1, t_max);
  std::normal_distribution<double> n(0, 1);
  for (double& x : p.theta()) x = n(rng);
  return p;
}

VocabSpec random_vocab(std::mt19937_64& rng) {
  const int size = std::uniform_int_distribution<int>(2, 5)(rng);
  return {size, std::uniform_int_distribution<int>(0, size - 1)(rng)};
}

Trajectory random_traj(const VocabSpec& v, int t_max, std::mt19937_64& rng) {
  Rng r{rng()};
  PolicyParams uniform = init_policy(v, 1, t_max);
  return sample_trajectory(uniform, Prompt{0, 0}, r);
}

// ---------------------------------------------------------------------------
// Trend runs

RunConfig trend_base() {
  RunConfig cfg;
  cfg.eval.every = 0;
  return cfg;
}

struct SeedMean {
  double gold = 0;      // tail mean of exact expected gold, averaged over seeds
  double kl = 0;        // tail mean of exact KL, averaged over seeds
  double clip = 0;      // mean clip fraction per batch after warmup, averaged over seeds
  std::vector<double> curve;          // seed-mean gold per step
  std::vector<std::int64_t> samples;  // cumulative samples per step
};

SeedMean run_seeds(RunConfig cfg) {
  SeedMean out;
  for (int s = 1; s <= kSeeds; ++s) {
    cfg.seed = static_cast<std::uint64_t>(s);
    cfg.noise.seed = static_cast<std::uint64_t>(100 + s);
    const auto res = run_training(cfg);
    const auto& h = res.history;
    const std::size_t n = h.size();
    const std::size_t t0 = n - std::max<std::size_t>(1, n / 10);
    double g = 0, k = 0;
    for (std::size_t i = t0; i < n; ++i) {
      g += h[i].gold;
      k += h[i].kl;
    }
    out.gold += g / static_cast<double>(n - t0) / kSeeds;
    out.kl += k / static_cast<double>(n - t0) / kSeeds;
    if (out.curve.empty()) {
      out.curve.assign(n, 0.0);
      out.samples.assign(n, 0);
    }
    double cf = 0;
    int counted = 0;
    for (std::size_t i = 0; i < n; ++i) {
      out.curve[i] += h[i].gold / kSeeds;
      out.samples[i] = h[i].samples;
      if (h[i].step > warmup_steps(cfg)) {
        cf += h[i].clip_frac;
        ++counted;
      }
    }
    out.clip += (counted ? cf / counted : 0.0) / kSeeds;
  }
  return out;
}

RunConfig with_method(RunConfig cfg, Method m, int k) {
  cfg.method = m;
  cfg.k = k;
  return cfg;
}

// ---------------------------------------------------------------------------
// Criteria

void criteria_1_2() {
  RunConfig cfg;
  cfg.vocab = {4, 3};
  cfg.t_max = 3;
  cfg.pretrain_strength = 0.7;
  const std::vector<std::string> names{"reinforce", "reinforce_ma", "rloo2", "rloo4", "vanilla_pg"};
  const auto rows = run_diagnose(cfg, names, kUnbiasedReps, cfg.seed);
  bool ok = true;
  std::string detail;
  for (const auto& r : rows) {
    ok = ok && r.stats.max_bias_in_se < kMaxBiasInSe;
    detail += fmt("%s %.2f; ", r.estimator.c_str(), r.stats.max_bias_in_se);
  }
  report(1, "unbiasedness (max_bias_in_se < 3, n=100000)", ok, detail);

  const double v0 = rows[0].stats.trace_variance, v2 = rows[2].stats.trace_variance, v4 = rows[3].stats.trace_variance;
  report(2, "variance ordering reinforce > rloo2 > rloo4, ratios >= 1.1",
         v0 / v2 >= kVarianceRatio && v2 / v4 >= kVarianceRatio,
         fmt("trace %.4f / %.4f / %.4f, ratios %.2f and %.2f", v0, v2, v4, v0 / v2, v2 / v4));
}

void criterion_3() {
  std::mt19937_64 rng(3);
  double worst_a = 0, worst_b = 0, worst_c = 0, worst_d = 0;
  for (int c = 0; c < kIdentityCases; ++c) {
    const auto v = random_vocab(rng);
    const int t_max = std::uniform_int_distribution<int>(1, 4)(rng);
    const auto p = random_policy(v, t_max, rng);
    const auto ref = random_policy(v, t_max, rng);
    const double beta = std::uniform_real_distribution<>(0, 2)(rng);
    const double r = std::normal_distribution<>(0, 3)(rng);
    const auto y = random_traj(v, t_max, rng);

    // (a) sequence-level shaping equals the sum of token-level shaped rewards
    const auto tok = token_shaped_rewards(p, ref, y, r, beta);
    double sum = 0;
    for (double x : tok) sum += x;
    const double seq = shaped_reward(r, trajectory_logprob(p, y), trajectory_logprob(ref, y), beta);
    worst_a = std::max(worst_a, std::abs(sum - seq));

    // (b) GAE at lambda = gamma = 1 is return-to-go minus value
    ValueTable values{p.space()};
    for (double& x : values.values()) x = std::normal_distribution<>(0, 1)(rng);
    const auto path = p.space().path(y);
    const auto adv = gae_advantages(tok, values, path, {1.0, 1.0});
    double rtg = 0;
    for (std::size_t t = tok.size(); t-- > 0;) {
      rtg += tok[t];
      worst_b = std::max(worst_b, std::abs(adv[t] - (rtg - values.at(path[t]))));
    }

    // (c) RLOO with two samples equals the weighted contrastive gradient
    const auto y2 = random_traj(v, t_max, rng);
    const double r2 = std::normal_distribution<>(0, 3)(rng);
    const auto rloo = rloo_grad(p, std::vector<ScoredSample>{{y, r}, {y2, r2}}).values;
    auto contrast = rloo2_contrastive_loss_grad(p, y, y2, r, r2).values;
    for (double& x : contrast) x = -x;
    worst_c = std::max(worst_c, max_abs_diff(rloo, contrast));

    // (d) PPO without clipping or ratio, at pi = pi_old, equals vanilla PG
    const auto tok2 = token_shaped_rewards(p, ref, y2, r2, beta);
    const std::vector<TokenRewardSample> tb{{y, tok}, {y2, tok2}};
    const std::vector<AdvantageSample> ab{{y, adv}, {y2, gae_advantages(tok2, values, p.space().path(y2), {1.0, 1.0})}};
    const auto ppo = ppo_grad(p, p, ab, PPOConfig{0.2, false, false, false}).grad.values;
    worst_d = std::max(worst_d, max_abs_diff(ppo, vanilla_pg_grad(p, tb, values, 1.0).values));
  }
  const bool ok = std::max({worst_a, worst_b, worst_c, worst_d}) < kIdentityTol;
  report(3, "algebraic identities (1000 cases each, tol 1e-10)", ok,
         fmt("max |diff| shaping %.2e, gae %.2e, rloo2 %.2e, ppo %.2e", worst_a, worst_b, worst_c, worst_d));
}

void criterion_4() {
  std::mt19937_64 rng(4);
  double rm = 0, dpo = 0, val = 0, glp = 0;
  for (int c = 0; c < kFdCases; ++c) {
    const auto v = random_vocab(rng);
    const int t_max = std::uniform_int_distribution<int>(1, 4)(rng);
    const auto p = random_policy(v, t_max, rng);
    const auto ref = random_policy(v, t_max, rng);
    const auto y = random_traj(v, t_max, rng);
    const auto y2 = random_traj(v, t_max, rng);

    RewardModel model = RewardModel::zeros(v, t_max);
    for (double& w : model.weights) w = std::normal_distribution<>(0, 0.5)(rng);
    const PreferencePair pair{0, y, y2, false};
    const auto rm_num = central_diff(model.weights, [&](const std::vector<double>& w) {
      RewardModel m = model;
      m.weights = w;
      return rm_loss(m, pair);
    });
    rm = std::max(rm, rel_error(rm_grad(model, pair), rm_num));

    const double beta = std::uniform_real_distribution<>(0.05, 2)(rng);
    auto dpo_ascent = dpo_grad(p, ref, pair, beta).grad.values;
    for (double& x : dpo_ascent) x = -x;
    dpo = std::max(dpo, rel_error(dpo_ascent, policy_diff(p, [&](const PolicyParams& q) {
                                    return dpo_grad(q, ref, pair, beta).loss;
                                  })));

    ValueTable values{p.space()};
    for (double& x : values.values()) x = std::normal_distribution<>(0, 1)(rng);
    std::vector<double> tr(y.tokens.size());
    for (double& x : tr) x = std::normal_distribution<>(0, 1)(rng);
    const double gamma = std::uniform_real_distribution<>(0, 1)(rng);
    const auto path = p.space().path(y);
    const std::vector<double> start(values.values().begin(), values.values().end());
    const auto val_num = central_diff(start, [&](const std::vector<double>& w) {
      ValueTable t{p.space()};
      std::copy(w.begin(), w.end(), t.values().begin());
      return value_loss_grad(t, tr, path, gamma).loss;
    });
    val = std::max(val, rel_error(value_loss_grad(values, tr, path, gamma).grad, val_num));

    const auto glp_num = policy_diff(p, [&](const PolicyParams& q) { return trajectory_logprob(q, y); });
    glp = std::max(glp, rel_error(grad_logprob(p, y).values, glp_num));
  }
  const bool ok = std::max({rm, dpo, val, glp}) < kFdRelTol;
  report(4, "finite differences (100 cases each, rel < 1e-6)", ok,
         fmt("max rel err rm %.2e, dpo %.2e, value %.2e, logprob %.2e", rm, dpo, val, glp));
}

void criterion_5() {
  std::vector<double> gold;
  std::string detail;
  for (double lam : {0.0, 0.5, 0.95, 1.0}) {
    auto cfg = with_method(trend_base(), Method::ppo, 1);
    cfg.gae.lambda = lam;
    cfg.value.max_updates = 20;
    gold.push_back(run_seeds(cfg).gold);
    detail += fmt("lambda %.2f -> %.4f; ", lam, gold.back());
  }
  bool ok = gold.back() > gold.front();
  for (std::size_t i = 1; i < gold.size(); ++i) ok = ok && gold[i] >= gold[i - 1];
  report(5, "lambda sweep nondecreasing, lambda 1 beats lambda 0", ok, detail);
}

void criterion_6() {
  auto cfg = with_method(trend_base(), Method::ppo, 1);
  const auto clip = run_seeds(cfg);
  cfg.ppo.clipping_enabled = false;
  const auto noclip = run_seeds(cfg);
  const bool parity = noclip.gold >= clip.gold * (1.0 - kClipParity);
  const bool rare = clip.clip < kClipFraction;
  report(6, "clipping ablation parity and clip fraction < 0.05", parity && rare,
         fmt("clip %.4f, no clip %.4f (ratio %.4f); mean clip fraction after warmup %.4f", clip.gold, noclip.gold,
             noclip.gold / clip.gold, clip.clip));
}

void criteria_7_8_9() {
  const auto rloo = run_seeds(with_method(trend_base(), Method::rloo, 2));
  const auto raft = run_seeds(with_method(trend_base(), Method::raft, 2));

  auto noisy_rloo = with_method(trend_base(), Method::rloo, 2);
  noisy_rloo.noise.sigma = kNoiseSigma;
  auto noisy_raft = with_method(trend_base(), Method::raft, 2);
  noisy_raft.noise.sigma = kNoiseSigma;
  const double drop_rloo = rloo.gold - run_seeds(noisy_rloo).gold;
  const double drop_raft = raft.gold - run_seeds(noisy_raft).gold;
  report(7, "noise robustness: RAFT drop > RLOO drop at sigma 5", drop_raft > drop_rloo,
         fmt("drop RLOO %.4f, RAFT %.4f", drop_rloo, drop_raft));

  const auto at_beta = [](Method m, double beta) {
    auto cfg = with_method(trend_base(), m, 2);
    cfg.shaping.beta = beta;
    return run_seeds(cfg);
  };
  const auto rloo1 = at_beta(Method::rloo, 1.0), raft1 = at_beta(Method::raft, 1.0);
  const auto rloo01 = at_beta(Method::rloo, 0.1), raft01 = at_beta(Method::raft, 0.1);
  const double rel_kl = std::abs(rloo01.kl - raft01.kl) / (0.5 * (rloo01.kl + raft01.kl));
  const bool ok8 = raft1.gold <= rloo1.gold && raft1.kl >= rloo1.kl && rel_kl <= kKlAgreement;
  report(8, "beta sensitivity", ok8,
         fmt("beta 1: gold RAFT %.4f vs RLOO %.4f, KL RAFT %.4f vs RLOO %.4f; beta 0.1: KL %.4f vs %.4f (rel %.3f)",
             raft1.gold, rloo1.gold, raft1.kl, rloo1.kl, raft01.kl, rloo01.kl, rel_kl));

  const auto raft4 = run_seeds(with_method(trend_base(), Method::raft, 4));
  std::int64_t needed = -1;
  for (std::size_t i = 0; i < rloo.curve.size(); ++i) {
    if (rloo.curve[i] >= raft4.gold) {
      needed = rloo.samples[i];
      break;
    }
  }
  const auto budget = raft4.samples.back();
  report(9, "sample efficiency: RLOO k=2 reaches RAFT k=4's final reward", needed >= 0 && needed <= budget,
         fmt("RAFT k=4 final %.4f after %lld samples; RLOO k=2 reaches it at %lld", raft4.gold,
             static_cast<long long>(budget), static_cast<long long>(needed)));
}

void criterion_10() {
  std::mt19937_64 rng(10);
  bool counts = true;
  for (int v = 2; v <= 6; ++v) {
    for (int t = 1; t <= 5; ++t) {
      std::size_t closed = 0, pow = 1;
      for (int i = 0; i < t; ++i, pow *= static_cast<std::size_t>(v - 1)) closed += pow;
      closed += pow;
      const VocabSpec vocab{v, v - 1};
      counts = counts && trajectory_count(vocab, t) == closed &&
               enumerate_trajectories(vocab, Prompt{0, 0}, t).size() == closed;
    }
  }
  double mass_err = 0, grad_err = 0;
  for (int c = 0; c < 50; ++c) {
    const auto v = random_vocab(rng);
    const int t_max = std::uniform_int_distribution<int>(1, 4)(rng);
    const auto p = random_policy(v, t_max, rng);
    const auto ref = random_policy(v, t_max, rng);
    double mass = 0;
    for (const auto& y : enumerate_trajectories(v, Prompt{0, 0}, t_max)) mass += std::exp(trajectory_logprob(p, y));
    mass_err = std::max(mass_err, std::abs(mass - 1.0));

    const double beta = 0.1 * (c % 3);
    const RewardFn r = [](const Trajectory& y) { return std::count(y.tokens.begin(), y.tokens.end(), 0) * 1.0; };
    // KL coefficient frozen at the current policy, as the gradient convention requires
    const auto frozen = [&](const Trajectory& y) {
      return r(y) - beta * (trajectory_logprob(p, y) - trajectory_logprob(ref, y));
    };
    const auto numeric =
        policy_diff(p, [&](const PolicyParams& q) { return exact_expected_reward(q, frozen, Prompt{0, 0}); });
    const auto exact = exact_policy_gradient(p, r, ShapingConfig{beta}, ref, Prompt{0, 0});
    grad_err = std::max(grad_err, rel_error(exact, numeric));
  }
  report(10, "oracle integrity", counts && mass_err < kMassTol && grad_err < kOracleFdTol,
         fmt("counts %s, max |mass - 1| %.2e, max rel gradient err %.2e", counts ? "match" : "MISMATCH", mass_err,
             grad_err));
}

void criterion_11() {
  const fs::path root = fs::temp_directory_path() / ("pgpref_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  ExperimentConfig cfg;
  cfg.run.steps = 40;
  cfg.run.eval.every = 10;
  cfg.run.eval.n_eval = 200;
  cfg.run.noise.sigma = 1.0;
  std::vector<std::string> differing;
  const auto same = [&](const fs::path& a, const fs::path& b) {
    if (read_file(a) != read_file(b)) differing.push_back(a.filename().string());
  };

  for (Method m : {Method::ppo, Method::rloo, Method::raft, Method::dpo, Method::reinforce_ma_baseline}) {
    auto c = cfg;
    c.run.method = m;
    c.run.k = m == Method::rloo || m == Method::raft ? 2 : 1;
    c.run.rm.pairs = 200;
    train_to_dir(c, root / "a", "run");
    train_to_dir(c, root / "b", "run");
    for (const char* f : {"metrics.jsonl", "summary.csv", "checkpoint.json", "config.ini"}) {
      same(root / "a" / f, root / "b" / f);
    }
  }

  SweepSpec spec;
  spec.base = cfg;
  spec.base.run.steps = 15;
  spec.axes = {{"method.name", {"rloo", "raft"}}, {"shaping.beta", {"0.03", "0.3"}}};
  std::ostringstream log;
  run_sweep(spec, root / "s1", log);
  run_sweep(spec, root / "s2", log);
  same(root / "s1" / "combined.csv", root / "s2" / "combined.csv");
  const auto report_a = report_csv({root / "s1"});
  const auto report_b = report_csv({root / "s2"});
  if (report_a != report_b) differing.push_back("report");

  const std::vector<std::string> est{"reinforce", "rloo2", "vanilla_pg", "gae0.5"};
  if (diagnose_csv(run_diagnose(cfg.run, est, 2000, 5)) != diagnose_csv(run_diagnose(cfg.run, est, 2000, 5))) {
    differing.push_back("diagnose.csv");
  }
  fs::remove_all(root);
  std::string detail = "train (5 methods), sweep, report and diagnose outputs byte-identical";
  if (!differing.empty()) {
    detail = "differing:";
    for (const auto& d : differing) detail += " " + d;
  }
  report(11, "determinism", differing.empty(), detail);
}

}  // namespace

int main() {
  const auto start = std::chrono::steady_clock::now();
  const auto timed = [&](const char* what, auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("      (%s took %.1f s)\n", what, s);
  };
  try {
    timed("criteria 1-2", criteria_1_2);
    timed("criterion 3", criterion_3);
    timed("criterion 4", criterion_4);
    timed("criterion 5", criterion_5);
    timed("criterion 6", criterion_6);
    timed("criteria 7-9", criteria_7_8_9);
    timed("criterion 10", criterion_10);
    timed("criterion 11", criterion_11);
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance aborted: %s\n", e.what());
    return 2;
  }
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%s: %d criteria failed, %.1f s total\n", failures ? "FAIL" : "PASS", failures, total);
  return failures ? 1 : 0;
}
