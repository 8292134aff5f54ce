#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "pgpref/diagnostics.hpp"
#include "pgpref/errors.hpp"
#include "pgpref/trainer.hpp"
#include "support/oracles.hpp"

using namespace pgpref;

namespace {

double count_target(const Trajectory& y, Token target) {
  return static_cast<double>(std::count(y.tokens.begin(), y.tokens.end(), target));
}

std::vector<std::vector<Token>> token_lists(const std::vector<Trajectory>& ys) {
  std::vector<std::vector<Token>> out;
  for (const auto& y : ys) out.push_back(y.tokens);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_SUITE("diagnostics") {
  TEST_CASE("trajectory counts and enumeration agree with brute force") {
    CHECK(trajectory_count({2, 1}, 1) == 2);
    CHECK(trajectory_count({3, 2}, 1) == 3);
    CHECK(trajectory_count({3, 2}, 2) == 7);
    CHECK(trajectory_count({4, 3}, 2) == 13);
    for (int v = 2; v <= 5; ++v) {
      for (int t = 1; t <= 4; ++t) {
        const VocabSpec vocab{v, v - 1};
        const auto brute = oracle::brute_trajectories(vocab, 0, t);
        const auto listed = enumerate_trajectories(vocab, Prompt{0, 0}, t);
        CHECK(trajectory_count(vocab, t) == brute.size());
        CHECK(token_lists(listed) == token_lists(brute));
        for (const auto& y : listed) CHECK(y.terminated_by_eos == (y.tokens.back() == vocab.eos_id));
      }
    }
    CHECK_THROWS_AS((enumerate_trajectories({4, 3}, Prompt{0, 0}, 6, 100)), BudgetError);
  }

  TEST_CASE("frozen exact gradient for the uniform policy") {
    const auto p = init_policy({3, 2}, 1, 2);
    const auto reward = [](const Trajectory& y) { return count_target(y, 1); };
    const auto g = exact_policy_gradient(p, reward, ShapingConfig{0.0}, p, Prompt{0, 0});
    const std::vector<double> expect{-2.0 / 27, 7.0 / 27, -5.0 / 27, -1.0 / 27, 2.0 / 27,
                                     -1.0 / 27, -1.0 / 27, 2.0 / 27,  -1.0 / 27};
    REQUIRE(g.size() == expect.size());
    CHECK(oracle::max_abs_diff(g, expect) < 1e-14);
    CHECK(exact_expected_reward(p, reward, Prompt{0, 0}) == doctest::Approx(5.0 / 9).epsilon(1e-14));
  }

  TEST_CASE("exact gradient matches finite differences with the KL term frozen") {
    for (int c = 0; c < 20; ++c) {
      const VocabSpec vocab{3 + c % 2, c % 3};
      const int t_max = 2 + c % 2;
      const auto p = oracle::random_policy(vocab, 2, t_max, 100 + c);
      const auto ref = oracle::random_policy(vocab, 2, t_max, 200 + c);
      const double beta = 0.1 * (c % 4);
      const int prompt = c % 2;
      const auto r = [](const Trajectory& y) { return count_target(y, 1) + 0.25 * y.tokens.size(); };
      const auto shaped = [&](const Trajectory& y) {
        return r(y) - beta * (oracle::logprob(p, y) - oracle::logprob(ref, y));
      };
      const auto numeric = oracle::central_diff(
          p, [&](const PolicyParams& q) { return oracle::expectation(q, prompt, shaped); }, 1e-5);
      const auto analytic = exact_policy_gradient(p, r, ShapingConfig{beta}, ref, Prompt{prompt, 0});
      CHECK(oracle::rel_error(analytic, numeric) < 1e-6);
      CHECK(exact_expected_reward(p, r, Prompt{prompt, 0}) ==
            doctest::Approx(oracle::expectation(p, prompt, r)).epsilon(1e-12));
    }
  }

  TEST_CASE("exact expected gold averages prompts") {
    const auto p = oracle::random_policy({4, 3}, 3, 3, 5);
    const GoldTask task = CountToken{2, 1.5};
    double sum = 0.0;
    for (int x = 0; x < 3; ++x) sum += oracle::expectation(p, x, [&](const Trajectory& y) { return gold_reward(task, y); });
    CHECK(exact_expected_gold(p, task) == doctest::Approx(sum / 3).epsilon(1e-12));
  }

  TEST_CASE("exact state values") {
    for (int c = 0; c < 10; ++c) {
      const VocabSpec vocab{4, 3};
      const auto p = oracle::random_policy(vocab, 1, 3, 300 + c);
      const auto ref = oracle::random_policy(vocab, 1, 3, 400 + c);
      const double beta = 0.05 * c;
      const auto r = [](const Trajectory& y) { return count_target(y, 0) - count_target(y, 2); };
      const auto v = exact_state_values(p, ref, r, beta, 1.0);
      const double root = oracle::expectation(p, 0, [&](const Trajectory& y) {
        double total = r(y);
        for (std::size_t t = 0; t < y.tokens.size(); ++t) {
          // KL penalty of every token, recomputed from the raw rows
          pgpref::PrefixState s{0, {y.tokens.begin(), y.tokens.begin() + static_cast<long>(t)}};
          const auto pi = oracle::softmax(p.row(p.space().state_id(s)));
          const auto pr = oracle::softmax(ref.row(ref.space().state_id(s)));
          const auto k = static_cast<std::size_t>(y.tokens[t]);
          total -= beta * (std::log(pi[k]) - std::log(pr[k]));
        }
        return total;
      });
      CHECK(v.at(p.space().root(0)) == doctest::Approx(root).epsilon(1e-12));
    }
    // gamma = 0: a non-root state is worth only the expected next token reward
    const auto p = oracle::random_policy({3, 2}, 1, 2, 9);
    const auto r = [](const Trajectory& y) { return count_target(y, 1); };
    const auto v0 = exact_state_values(p, p, r, 0.0, 0.0);
    // at the root the only immediate reward comes from length-1 (EOS) trajectories, which score 0
    CHECK(v0.at(p.space().root(0)) == doctest::Approx(0.0));
    const auto child = p.space().child(p.space().root(0), 1);
    const auto child_row = oracle::softmax(p.row(child));
    CHECK(v0.at(child) == doctest::Approx(1.0 + child_row[1]).epsilon(1e-12));
  }

  TEST_CASE("estimator_stats") {
    const std::vector<double> truth{1.0, -2.0, 0.5};
    Rng rng{1};
    const auto exact = estimator_stats([&](Rng&) { return GradientEstimate{truth, 1, "oracle"}; }, truth, 100, rng);
    CHECK(exact.max_bias_in_se == 0.0);
    CHECK(exact.trace_variance == 0.0);
    CHECK(exact.n == 100);
    const auto off = estimator_stats([&](Rng&) { return GradientEstimate{{1.0, -2.0, 0.6}, 1, "x"}; }, truth, 100, rng);
    CHECK(std::isinf(off.max_bias_in_se));
    CHECK_THROWS_AS((estimator_stats([&](Rng&) { return GradientEstimate{truth, 1, ""}; }, truth, 99, rng)), ConfigError);

    // unit-variance noise: trace variance near the dimension
    const auto noisy = estimator_stats(
        [&](Rng& g) {
          std::normal_distribution<> n(0, 1);
          return GradientEstimate{{truth[0] + n(g), truth[1] + n(g), truth[2] + n(g)}, 1, "n"};
        },
        truth, 20000, rng);
    CHECK(noisy.trace_variance == doctest::Approx(3.0).epsilon(0.05));
    CHECK(noisy.max_bias_in_se < 4.0);
  }

  TEST_CASE("estimator names") {
    CHECK(parse_estimator("rloo4").k == 4);
    CHECK(parse_estimator("gae0.95").lambda == doctest::Approx(0.95));
    CHECK(parse_estimator("reinforce_ma").kind == EstimatorSpec::Kind::reinforce_ma);
    CHECK_THROWS_AS(parse_estimator("rloo1"), ConfigError);
    CHECK_THROWS_AS(parse_estimator("gae1.5"), ConfigError);
    CHECK_THROWS_AS(parse_estimator("rloo"), ConfigError);
    CHECK_THROWS_AS(parse_estimator("ppo"), ConfigError);
  }

  TEST_CASE("named oracle estimator has zero variance") {
    const auto p = oracle::random_policy({3, 2}, 1, 2, 4);
    const auto r = [](const Trajectory& y) { return count_target(y, 1); };
    const auto g = exact_policy_gradient(p, r, ShapingConfig{0.0}, p, Prompt{0, 0});
    EstimatorContext ctx{&p, &p, r, 0.0, Prompt{0, 0}, nullptr, 0.0, g};
    Rng rng{2};
    const auto stats = estimator_stats(make_estimator(parse_estimator("oracle"), ctx), g, 100, rng);
    CHECK(stats.max_bias_in_se == 0.0);
    CHECK(stats.trace_variance == 0.0);
  }

  TEST_CASE("win-rate, distinct-n and perplexity") {
    const GoldTask task = CountToken{1, 1.0};
    const std::vector<Trajectory> good{{0, {1, 1, 3}, true}, {0, {1, 3}, true}};
    const std::vector<Trajectory> bad{{0, {0, 0, 3}, true}, {0, {1, 3}, true}};
    CHECK(simulated_winrate(good, bad, task) == 0.75);
    CHECK(simulated_winrate(bad, good, task) == 0.25);
    CHECK(simulated_winrate(good, good, task) == 0.5);
    CHECK_THROWS_AS((simulated_winrate(good, std::vector<Trajectory>{}, task)), Error);

    const std::vector<Trajectory> rep{{0, {1, 2, 1, 2}, false}};
    CHECK(distinct_n(rep, 1) == 0.5);
    CHECK(distinct_n(rep, 2) == doctest::Approx(2.0 / 3));
    const std::vector<Trajectory> mixed{{0, {3}, true}, {0, {0, 1, 3}, true}};
    CHECK(distinct_n(mixed, 2) == 1.0);  // the one-token trajectory is skipped
    CHECK_THROWS_AS((distinct_n(std::vector<Trajectory>{{0, {3}, true}}, 2)), Error);

    const auto uniform = init_policy({4, 3}, 1, 3);
    const std::vector<Trajectory> refs{{0, {3}, true}, {0, {0, 1, 2}, false}};
    CHECK(perplexity_proxy(uniform, refs) == doctest::Approx(4.0).epsilon(1e-12));
    auto blocked = uniform;
    blocked.row(0)[3] = -INFINITY;
    CHECK(std::isinf(perplexity_proxy(blocked, refs)));
  }

  TEST_CASE("eval report properties") {
    const GoldTask task = CountToken{1, 1.0};
    const auto ref = init_policy({4, 3}, 2, 4);
    Rng a{5}, b{5};
    const auto self = eval_policy(ref, ref, task, 500, a);
    CHECK(self.winrate_vs_ref == 0.5);
    CHECK(self.mean_length >= 1.0);
    CHECK(self.mean_length <= 4.0);
    CHECK(self.ppl_proxy == doctest::Approx(4.0).epsilon(1e-12));
    const auto again = eval_policy(ref, ref, task, 500, b);
    CHECK(again.mean_reward_r == self.mean_reward_r);
    CHECK(again.distinct_2 == self.distinct_2);

    // sharper pretrained policies repeat the target more and cover ref samples worse
    double prev_d1 = 2.0, prev_ppl = 0.0;
    for (double strength : {0.0, 0.5, 0.9}) {
      const auto p = pretrain_policy(task, {4, 3}, 2, 4, strength, 0);
      Rng rng{6};
      const auto rep = eval_policy(p, ref, task, 2000, rng);
      CHECK(rep.distinct_1 < prev_d1);
      CHECK(rep.ppl_proxy > prev_ppl);
      prev_d1 = rep.distinct_1;
      prev_ppl = rep.ppl_proxy;
      if (strength > 0) CHECK(rep.winrate_vs_ref > 0.5);
    }
  }
}
