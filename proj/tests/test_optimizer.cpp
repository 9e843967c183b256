#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "evolver/optimizer.hpp"
#include "evolver/tokenize.hpp"

using namespace evolver;

namespace {

// Random tabular instance: a policy, a perturbed old policy and a batch of
// trajectory samples whose old log-probs come from the old policy.
struct Instance {
    PolicySnapshot pi;
    PolicySnapshot pi_old;
    TrainBatch batch;
};

Instance random_instance(std::mt19937_64& rng, bool token_mode, double old_spread = 0.15) {
    std::uniform_int_distribution<int> n_states_d(2, 4), n_actions_d(3, 5), n_samples_d(2, 5),
        n_decisions_d(1, 4);
    std::normal_distribution<double> logit_d(0.0, 1.0), adv_d(0.0, 1.0),
        perturb_d(0.0, old_spread);

    Instance inst;
    int n_states = n_states_d(rng);
    int n_actions = n_actions_d(rng);
    for (int a = 0; a < n_actions; ++a)
        inst.pi.action_vocabulary.push_back("act" + std::to_string(a));
    inst.pi_old.action_vocabulary = inst.pi.action_vocabulary;
    std::vector<std::string> states;
    for (int s = 0; s < n_states; ++s) {
        std::string key = "state" + std::to_string(s);
        states.push_back(key);
        std::vector<double> row, row_old;
        for (int a = 0; a < n_actions; ++a) {
            double v = logit_d(rng);
            row.push_back(v);
            row_old.push_back(v + perturb_d(rng));
        }
        inst.pi.logits[key] = row;
        inst.pi_old.logits[key] = row_old;
    }

    int n_samples = n_samples_d(rng);
    for (int i = 0; i < n_samples; ++i) {
        TrainSample sample;
        sample.trajectory_id = "traj-" + std::to_string(i);
        sample.guidance = (rng() % 2) ? Guidance::experience : Guidance::vanilla;
        sample.advantage = adv_d(rng);
        if (std::fabs(sample.advantage) < 0.05) sample.advantage = 0.3;
        int n_dec = n_decisions_d(rng);
        sample.n_tokens = n_dec * 3;
        sample.loss_mask.assign(static_cast<size_t>(sample.n_tokens), false);
        sample.logprob_old.assign(static_cast<size_t>(sample.n_tokens), 0.0);
        if (token_mode)
            sample.token_advantage = std::vector<double>(static_cast<size_t>(sample.n_tokens), 0.0);
        for (int d = 0; d < n_dec; ++d) {
            Decision dec;
            dec.token_index = d * 3;
            dec.state_key = states[rng() % states.size()];
            dec.action_id = static_cast<int>(rng() % static_cast<uint64_t>(n_actions));
            dec.step_index = d;
            sample.logprob_old[static_cast<size_t>(dec.token_index)] =
                policy_log_prob(inst.pi_old, dec.state_key, dec.action_id);
            sample.loss_mask[static_cast<size_t>(dec.token_index)] = true;
            sample.loss_mask[static_cast<size_t>(dec.token_index + 1)] = true;
            if (token_mode) {
                double a = adv_d(rng);
                if (std::fabs(a) < 0.05) a = -0.4;
                (*sample.token_advantage)[static_cast<size_t>(dec.token_index)] = a;
                (*sample.token_advantage)[static_cast<size_t>(dec.token_index + 1)] = a;
            }
            sample.decisions.push_back(dec);
        }
        inst.batch.samples.push_back(std::move(sample));
    }
    return inst;
}

// Every evaluated ratio must stay clear of the clip kinks for differentiability.
bool ratios_clear_of_kinks(const Instance& inst, const ClipConfig& cfg, double margin) {
    auto clear = [&](double ratio, double adv, Guidance g) {
        double upper = select_clip_upper(adv, g, cfg);
        return std::fabs(ratio - (1.0 - cfg.eps_low)) > margin &&
               std::fabs(ratio - (1.0 + upper)) > margin &&
               std::fabs(ratio - (1.0 + cfg.eps_high)) > margin &&
               std::fabs(ratio - (1.0 + cfg.eps_high_boost)) > margin;
    };
    for (const TrainSample& s : inst.batch.samples) {
        if (s.token_advantage) {
            for (const Decision& d : s.decisions) {
                double lr = policy_log_prob(inst.pi, d.state_key, d.action_id) -
                            s.logprob_old[static_cast<size_t>(d.token_index)];
                double adv = (*s.token_advantage)[static_cast<size_t>(d.token_index)];
                if (!clear(std::exp(lr), adv, s.guidance)) return false;
            }
        } else {
            double lr = 0.0;
            for (const Decision& d : s.decisions)
                lr += policy_log_prob(inst.pi, d.state_key, d.action_id) -
                      s.logprob_old[static_cast<size_t>(d.token_index)];
            if (!clear(std::exp(lr), s.advantage, s.guidance)) return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("group_advantage standardizes over the full mixed group") {
    auto adv = group_advantage({1.0, 0.0, 1.0, 0.0}, 1e-8);
    // mu = 0.5, population sigma = 0.5
    CHECK(adv[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(adv[1] == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(adv[2] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(adv[3] == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("group_advantage neutralizes zero-variance groups") {
    auto adv = group_advantage({0.7, 0.7, 0.7}, 1e-8);
    for (double a : adv) CHECK(a == 0.0);
}

TEST_CASE("group_advantage is mean zero whenever sigma is positive") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> r(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> rewards;
        int n = 2 + static_cast<int>(rng() % 14);
        for (int i = 0; i < n; ++i) rewards.push_back(r(rng));
        auto adv = group_advantage(rewards);
        double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
        CHECK(std::fabs(mean) < 1e-9);
    }
}

TEST_CASE("select_clip_upper boosts only positive-advantage experience samples") {
    ClipConfig cfg;
    CHECK(select_clip_upper(0.7, Guidance::experience, cfg) == 0.6);
    CHECK(select_clip_upper(0.7, Guidance::vanilla, cfg) == 0.28);
    CHECK(select_clip_upper(0.0, Guidance::experience, cfg) == 0.28);  // strict inequality
    CHECK(select_clip_upper(-0.4, Guidance::experience, cfg) == 0.28);
}

TEST_CASE("boosted window keeps r=1.5 unclipped where the vanilla rule clips") {
    // surrogate value per clip rule at r = 1.5, advantage +1
    CHECK(surrogate_term(1.5, 1.0, 0.28, 0.6) == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(surrogate_term(1.5, 1.0, 0.28, 0.28) == doctest::Approx(1.28).epsilon(1e-15));
    // past the boosted bound the term saturates
    CHECK(surrogate_term(1.7, 1.0, 0.28, 0.6) == doctest::Approx(1.6).epsilon(1e-15));
}

TEST_CASE("boosting monotonicity in r for positive-advantage experience terms") {
    double prev = -1e9;
    for (double r = 1.0; r <= 1.6 + 1e-12; r += 0.01) {
        double v = surrogate_term(r, 1.0, 0.28, 0.6);
        CHECK(v >= prev - 1e-12);
        prev = v;
        if (r > 1.28 + 1e-9 && r <= 1.6 + 1e-12) {
            double vanilla = surrogate_term(r, 1.0, 0.28, 0.28);
            CHECK(v > vanilla);
        }
    }
    CHECK(surrogate_term(1.8, 1.0, 0.28, 0.6) == surrogate_term(2.5, 1.0, 0.28, 0.6));
}

TEST_CASE("kl_divergence matches the frozen closed-form oracle") {
    PolicySnapshot uniform, sharp;
    uniform.action_vocabulary = {"a", "b"};
    sharp.action_vocabulary = {"a", "b"};
    uniform.logits["s"] = {0.0, 0.0};
    sharp.logits["s"] = {2.0, 0.0};
    // value computed independently at 30 digits: 0.4337808304830271870264946849
    CHECK(kl_divergence(uniform, sharp, {"s"}) ==
          doctest::Approx(0.43378083048302719).epsilon(1e-12));
    CHECK(kl_divergence(uniform, uniform, {"s"}) == 0.0);
}

TEST_CASE("kl_divergence is nonnegative on random policy pairs") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> d(0.0, 1.5);
    for (int trial = 0; trial < 1000; ++trial) {
        PolicySnapshot p, q;
        p.action_vocabulary = {"a", "b", "c"};
        q.action_vocabulary = p.action_vocabulary;
        p.logits["s"] = {d(rng), d(rng), d(rng)};
        q.logits["s"] = {d(rng), d(rng), d(rng)};
        CHECK(kl_divergence(p, q, {"s"}) >= 0.0);
    }
}

TEST_CASE("on-policy identity: loss equals -mean(advantage), gradient equals REINFORCE") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        Instance inst = random_instance(rng, false, 0.0);  // old == new
        inst.pi_old = inst.pi;
        for (TrainSample& s : inst.batch.samples)
            for (const Decision& d : s.decisions)
                s.logprob_old[static_cast<size_t>(d.token_index)] =
                    policy_log_prob(inst.pi, d.state_key, d.action_id);

        ClipConfig cfg;
        cfg.kl_beta = 0.0;
        LossStats stats = navigating_loss(inst.batch, cfg, inst.pi, inst.pi_old);

        double mean_adv = 0.0;
        for (const TrainSample& s : inst.batch.samples) mean_adv += s.advantage * s.decay;
        mean_adv /= static_cast<double>(inst.batch.samples.size());
        CHECK(std::fabs(stats.loss - (-mean_adv)) < 1e-12);

        // plain policy-gradient oracle: -(1/N) sum_i A_i * grad log pi(tau_i)
        Gradient expected;
        const size_t vocab = inst.pi.action_vocabulary.size();
        for (const TrainSample& s : inst.batch.samples) {
            for (const Decision& d : s.decisions) {
                auto probs = policy_probs(inst.pi, d.state_key);
                auto [it, ins] = expected.try_emplace(d.state_key,
                                                      std::vector<double>(vocab, 0.0));
                for (size_t a = 0; a < vocab; ++a) {
                    double indicator = static_cast<int>(a) == d.action_id ? 1.0 : 0.0;
                    it->second[a] += -s.advantage * (indicator - probs[a]) /
                                     static_cast<double>(inst.batch.samples.size());
                }
            }
        }
        for (const auto& [state, row] : expected) {
            auto it = stats.grad.find(state);
            REQUIRE(it != stats.grad.end());
            for (size_t a = 0; a < row.size(); ++a)
                CHECK(std::fabs(row[a] - it->second[a]) < 1e-12);
        }
    }
}

TEST_CASE("analytic gradient matches central finite differences, trajectory mode") {
    std::mt19937_64 rng(31);
    ClipConfig cfg;  // includes the KL term at beta=0.001
    int checked = 0;
    while (checked < 60) {
        Instance inst = random_instance(rng, false);
        if (!ratios_clear_of_kinks(inst, cfg, 1e-3)) continue;
        LossStats stats = navigating_loss(inst.batch, cfg, inst.pi, inst.pi_old);
        auto loss_fn = [&](const PolicySnapshot& p) {
            return navigating_loss(inst.batch, cfg, p, inst.pi_old).loss;
        };
        double err = finite_diff_check(loss_fn, inst.pi, stats.grad, 1e-5);
        CHECK(err < 1e-5);
        ++checked;
    }
}

TEST_CASE("analytic gradient matches central finite differences, token mode") {
    std::mt19937_64 rng(37);
    ClipConfig cfg;
    int checked = 0;
    while (checked < 60) {
        Instance inst = random_instance(rng, true);
        if (!ratios_clear_of_kinks(inst, cfg, 1e-3)) continue;
        LossStats stats = navigating_loss(inst.batch, cfg, inst.pi, inst.pi_old);
        auto loss_fn = [&](const PolicySnapshot& p) {
            return navigating_loss(inst.batch, cfg, p, inst.pi_old).loss;
        };
        double err = finite_diff_check(loss_fn, inst.pi, stats.grad, 1e-5);
        CHECK(err < 1e-5);
        ++checked;
    }
}

TEST_CASE("finite_diff_check calibration on a quadratic") {
    PolicySnapshot theta;
    theta.action_vocabulary = {"a", "b", "c"};
    theta.logits["s0"] = {0.3, -0.7, 1.1};
    theta.logits["s1"] = {-0.2, 0.5, 0.0};
    auto loss_fn = [](const PolicySnapshot& p) {
        double sum = 0.0;
        for (const auto& [state, row] : p.logits)
            for (double v : row) sum += 0.5 * v * v;
        return sum;
    };
    Gradient analytic;
    for (const auto& [state, row] : theta.logits) analytic[state] = row;  // d/dv of v^2/2
    CHECK(finite_diff_check(loss_fn, theta, analytic, 1e-5) < 1e-9);
}

TEST_CASE("loss is invariant under permutation of trajectories") {
    std::mt19937_64 rng(41);
    Instance inst = random_instance(rng, false);
    ClipConfig cfg;
    LossStats before = navigating_loss(inst.batch, cfg, inst.pi, inst.pi_old);
    TrainBatch shuffled = inst.batch;
    std::reverse(shuffled.samples.begin(), shuffled.samples.end());
    LossStats after = navigating_loss(shuffled, cfg, inst.pi, inst.pi_old);
    CHECK(before.loss == after.loss);  // bit-stable via fixed reduction order
}

TEST_CASE("sgd_update moves probability toward positive-advantage actions") {
    PolicySnapshot pi;
    pi.action_vocabulary = {"a", "b"};
    pi.logits["s"] = {0.0, 0.0};
    PolicySnapshot pi_old = pi;

    TrainBatch batch;
    TrainSample s;
    s.trajectory_id = "t";
    s.advantage = 1.0;
    s.n_tokens = 1;
    s.loss_mask = {true};
    s.logprob_old = {policy_log_prob(pi_old, "s", 0)};
    s.decisions = {{0, "s", 0, 0}};
    batch.samples.push_back(s);

    ClipConfig cfg;
    double before = policy_probs(pi, "s")[0];
    LossStats stats = navigating_loss(batch, cfg, pi, pi_old);
    sgd_update(pi, stats.grad, 0.5);
    double after = policy_probs(pi, "s")[0];
    CHECK(after > before);

    // zero gradient and zero learning rate are both identities
    PolicySnapshot copy = pi;
    sgd_update(pi, Gradient{}, 0.5);
    CHECK(pi == copy);
    sgd_update(pi, stats.grad, 0.0);
    CHECK(pi == copy);
}

TEST_CASE("clip saturation kills the gradient past the boosted bound") {
    PolicySnapshot pi, pi_old;
    pi.action_vocabulary = {"a", "b"};
    pi_old.action_vocabulary = {"a", "b"};
    pi.logits["s"] = {1.0, 0.0};
    pi_old.logits["s"] = {0.0, 0.0};

    TrainBatch batch;
    TrainSample s;
    s.trajectory_id = "t";
    s.guidance = Guidance::experience;
    s.advantage = 1.0;
    s.n_tokens = 1;
    s.loss_mask = {true};
    // choose old log-prob so the ratio lands beyond 1.6
    s.logprob_old = {policy_log_prob(pi, "s", 0) - std::log(1.7)};
    s.decisions = {{0, "s", 0, 0}};
    batch.samples.push_back(s);

    ClipConfig cfg;
    cfg.kl_beta = 0.0;
    LossStats stats = navigating_loss(batch, cfg, pi, pi_old);
    CHECK(stats.loss == doctest::Approx(-1.6).epsilon(1e-12));
    CHECK(stats.grad.empty());
    CHECK(stats.clip_frac_boosted == 1.0);
}

TEST_CASE("non-finite ratios raise NumericError naming the trajectory") {
    PolicySnapshot pi, pi_old;
    pi.action_vocabulary = {"a"};
    pi_old.action_vocabulary = {"a"};
    TrainBatch batch;
    TrainSample s;
    s.trajectory_id = "bad-traj";
    s.advantage = 1.0;
    s.n_tokens = 1;
    s.loss_mask = {true};
    s.logprob_old = {std::numeric_limits<double>::quiet_NaN()};
    s.decisions = {{0, "s", 0, 0}};
    batch.samples.push_back(s);
    ClipConfig cfg;
    try {
        navigating_loss(batch, cfg, pi, pi_old);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(e.trajectory_id == "bad-traj");
    }
}
