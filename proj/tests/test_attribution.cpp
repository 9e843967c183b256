#include "doctest.h"

#include <cmath>
#include <numeric>
#include <random>

#include "evolver/attribution.hpp"
#include "evolver/gateway.hpp"
#include "evolver/mock_backend.hpp"

using namespace evolver;

namespace {

Trajectory small_trajectory(int n_steps) {
    Trajectory t;
    t.id = "t";
    t.task_id = "task";
    t.terminal = true;
    int tok = 0;
    for (int i = 0; i < n_steps; ++i) {
        Step s;
        s.index = i;
        s.action = "move east";
        s.observation = "You moved east. You are on road at (" + std::to_string(i) + ",0).";
        s.token_span = {tok, tok + 2};
        tok += 14;
        t.steps.push_back(s);
    }
    return t;
}

Task small_task() {
    Task task;
    task.id = "task";
    task.query = "enter the hospital";
    task.origin = TaskOrigin::target;
    return task;
}

}  // namespace

TEST_CASE("attribution prompt carries the sign-conditional rules and EVAL-STEP blocks") {
    auto prompt = build_attribution_prompt(small_task(), small_trajectory(2), 0.8);
    CHECK(prompt.system_text.find("If Score is POSITIVE >0") != std::string::npos);
    CHECK(prompt.system_text.find("If Score is NEGATIVE <=0") != std::string::npos);
    CHECK(prompt.system_text.find("actively corrected or mitigated") != std::string::npos);
    CHECK(prompt.user_text.find(">>> EVAL-STEP 0 <<<") != std::string::npos);
    CHECK(prompt.user_text.find(">>> EVAL-STEP 1 <<<") != std::string::npos);
    CHECK(prompt.user_text.find("EVAL-STEP 2") == std::string::npos);
    CHECK(prompt.user_text.find("OVERALL PERFORMANCE SCORE 0.8") != std::string::npos);

    auto one = build_attribution_prompt(small_task(), small_trajectory(1), 0.0);
    CHECK(one.user_text.find(">>> EVAL-STEP 0 <<<") != std::string::npos);
    CHECK(one.user_text.find("EVAL-STEP 1") == std::string::npos);

    CHECK_THROWS(build_attribution_prompt(small_task(), Trajectory{}, 0.5));
}

TEST_CASE("parse_attribution reads ordered judgments with rationales") {
    auto labels = parse_attribution(
        "Step 0 Analysis: helped\nStep 0 Judgment: GOOD\n"
        "Step 1 Analysis: wasted\nStep 1 Judgment: BAD\n",
        2);
    REQUIRE(labels.size() == 2);
    CHECK(labels[0].label == AttrLabel::GOOD);
    CHECK(labels[0].rationale == "helped");
    CHECK(labels[1].label == AttrLabel::BAD);
}

TEST_CASE("parse_attribution rejects missing or extra judgments") {
    CHECK_THROWS_AS(parse_attribution("Step 0 Judgment: GOOD\n", 2), AttributionParseError);
    CHECK_THROWS_AS(
        parse_attribution("Step 0 Judgment: GOOD\nStep 1 Judgment: BAD\nStep 2 Judgment: GOOD\n",
                          2),
        AttributionParseError);
    try {
        parse_attribution("Step 0 Judgment: GOOD\n", 3);
    } catch (const AttributionParseError& e) {
        CHECK(e.step_index == 1);  // names the first missing step
    }
}

TEST_CASE("parse_attribution matches a reference regex oracle over case variants") {
    std::mt19937_64 rng(13);
    const std::string words[2] = {"good", "bad"};
    for (int trial = 0; trial < 300; ++trial) {
        int n = 1 + static_cast<int>(rng() % 4);
        std::string response;
        std::vector<int> expected;
        for (int i = 0; i < n; ++i) {
            int w = static_cast<int>(rng() % 2);
            std::string word = words[w];
            for (char& c : word)
                if (rng() % 2) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
            response += "Step " + std::to_string(i) + " Judgment: " + word + "\n";
            expected.push_back(w);
        }
        auto labels = parse_attribution(response, n);
        REQUIRE(static_cast<int>(labels.size()) == n);
        for (int i = 0; i < n; ++i)
            CHECK((labels[static_cast<size_t>(i)].label == AttrLabel::GOOD) == (expected[static_cast<size_t>(i)] == 0));
    }
}

TEST_CASE("attribute_trajectory falls back to all-BAD after a failed retry") {
    auto backend = std::make_shared<MockBackend>("attr-garbage");
    Gateway gateway(backend);
    auto labels = attribute_trajectory(small_task(), small_trajectory(3), 0.9, gateway);
    REQUIRE(labels.size() == 3);
    for (const auto& l : labels) {
        CHECK(l.label == AttrLabel::BAD);
        CHECK(l.rationale == "attribution parse failure");
    }
}

TEST_CASE("quantify applies the configured mapping") {
    std::vector<AttributionLabel> labels = {{0, AttrLabel::GOOD, ""},
                                            {1, AttrLabel::BAD, ""},
                                            {2, AttrLabel::GOOD, ""}};
    auto def = quantify(labels, {1.0, -1.0});
    CHECK(def == std::vector<double>{1.0, -1.0, 1.0});
    auto zero_bad = quantify(labels, {1.0, 0.0});
    CHECK(zero_bad == std::vector<double>{1.0, 0.0, 1.0});
    auto all_good = quantify({{0, AttrLabel::GOOD, ""}, {1, AttrLabel::GOOD, ""}}, {1.0, -1.0});
    CHECK(all_good == std::vector<double>{1.0, 1.0});
}

TEST_CASE("trajectory-level standardization uses per-trajectory means") {
    // means {1, -1}: mu 0, sigma 1; a step worth +1 maps to ~1
    std::vector<std::vector<double>> group = {{1.0, 1.0}, {-1.0, -1.0}};
    auto out = standardize_attribution(group, StandardizeMode::trajectory_level);
    CHECK(out[0][0] == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(out[1][1] == doctest::Approx(-1.0).epsilon(1e-7));
}

TEST_CASE("standardization neutralizes degenerate channels") {
    std::vector<std::vector<double>> same = {{1.0, 1.0}, {1.0, 1.0, 1.0}};
    for (const auto& row : standardize_attribution(same, StandardizeMode::trajectory_level))
        for (double v : row) CHECK(v == 0.0);

    std::vector<std::vector<double>> single = {{0.4, 0.4}};
    for (const auto& row : standardize_attribution(single, StandardizeMode::trajectory_level))
        for (double v : row) CHECK(v == 0.0);
}

TEST_CASE("step-level standardization pools all steps") {
    std::vector<std::vector<double>> group = {{1.0, -1.0}, {1.0, 1.0}};
    auto out = standardize_attribution(group, StandardizeMode::step_level);
    // pooled mean 0.5, population sigma sqrt(3)/2
    double sigma = std::sqrt(3.0) / 2.0;
    CHECK(out[0][0] == doctest::Approx(0.5 / (sigma + 1e-8)).epsilon(1e-9));
    CHECK(out[0][1] == doctest::Approx(-1.5 / (sigma + 1e-8)).epsilon(1e-9));
}

TEST_CASE("standardize_outcome on {1,0} gives ~{+1,-1} and degenerate cases give 0") {
    auto out = standardize_outcome({1.0, 0.0});
    CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(out[1] == doctest::Approx(-1.0).epsilon(1e-6));
    for (double v : standardize_outcome({0.3, 0.3, 0.3})) CHECK(v == 0.0);
    CHECK(standardize_outcome({0.9})[0] == 0.0);
}

TEST_CASE("channel independence: positive rescaling leaves standardized outcomes put") {
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> r(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> rewards;
        for (int i = 0; i < 6; ++i) rewards.push_back(r(rng));
        std::vector<double> scaled = rewards;
        double c = 0.5 + 3.0 * r(rng);
        for (double& v : scaled) v *= c;
        auto a = standardize_outcome(rewards);
        auto b = standardize_outcome(scaled);
        for (size_t i = 0; i < a.size(); ++i) CHECK(std::fabs(a[i] - b[i]) < 1e-6);
    }
}

TEST_CASE("fuse scales the attribution channel and adds the outcome at the last step") {
    auto fused = fuse({0.5, -0.5}, 1.0, 0.1);
    CHECK(fused[0] == doctest::Approx(0.05).epsilon(1e-15));
    CHECK(fused[1] == doctest::Approx(0.95).epsilon(1e-15));

    auto outcome_only = fuse({0.5, -0.5}, 1.0, 0.0);
    CHECK(outcome_only[0] == 0.0);
    CHECK(outcome_only[1] == 1.0);

    auto attr_only = fuse({0.5, -0.5}, 0.0, 0.1);
    CHECK(attr_only[1] == doctest::Approx(-0.05).epsilon(1e-15));
}

TEST_CASE("fuse satisfies superposition in alpha and the outcome") {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> d(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> attr;
        for (int i = 0; i < 5; ++i) attr.push_back(d(rng));
        double out1 = d(rng), out2 = d(rng), a1 = std::fabs(d(rng)), a2 = std::fabs(d(rng));
        auto lhs = fuse(attr, out1 + out2, a1 + a2);
        auto f1 = fuse(attr, out1, a1);
        auto f2 = fuse(attr, out2, a2);
        for (size_t t = 0; t < attr.size(); ++t)
            CHECK(lhs[t] == doctest::Approx(f1[t] + f2[t]).epsilon(1e-12));
    }
}

TEST_CASE("advantage equals hand-computed suffix sums") {
    auto a = advantage({0.5, -0.5, 1.0});
    CHECK(a == std::vector<double>{1.0, 0.5, 1.0});
    CHECK(advantage({}).empty());
    CHECK(advantage({3.25}) == std::vector<double>{3.25});
    auto zeros = advantage({0.0, 0.0, 0.0});
    for (double v : zeros) CHECK(v == 0.0);
}

TEST_CASE("advantage recurrence and brute-force oracle on random series") {
    std::mt19937_64 rng(37);
    std::normal_distribution<double> d(0.0, 2.0);
    for (int trial = 0; trial < 1000; ++trial) {
        int n = 1 + static_cast<int>(rng() % 12);
        std::vector<double> r;
        for (int i = 0; i < n; ++i) r.push_back(d(rng));
        auto a = advantage(r);
        // brute-force double loop
        for (int t = 0; t < n; ++t) {
            double sum = 0.0;
            for (int k = t; k < n; ++k) sum += r[static_cast<size_t>(k)];
            CHECK(a[static_cast<size_t>(t)] == doctest::Approx(sum).epsilon(1e-12));
        }
        // recurrence A_t = r_t + A_{t+1}
        for (int t = 0; t < n - 1; ++t)
            CHECK(a[static_cast<size_t>(t)] ==
                  doctest::Approx(r[static_cast<size_t>(t)] + a[static_cast<size_t>(t) + 1])
                      .epsilon(1e-12));
    }
}

TEST_CASE("broadcast_tokens expands spans and masks the rest") {
    auto out = broadcast_tokens({2.0, 3.0}, {{0, 2}, {2, 5}}, 5);
    CHECK(out.values == std::vector<double>{2, 2, 3, 3, 3});
    for (bool m : out.mask) CHECK(m);

    auto gap = broadcast_tokens({1.0}, {{2, 4}}, 6);
    CHECK(gap.values == std::vector<double>{0, 0, 1, 1, 0, 0});
    CHECK(gap.mask == std::vector<bool>{false, false, true, true, false, false});

    auto empty = broadcast_tokens({}, {}, 0);
    CHECK(empty.values.empty());

    CHECK_THROWS(broadcast_tokens({1.0, 1.0}, {{0, 3}, {2, 5}}, 6));  // overlap
}

TEST_CASE("broadcast preserves per-span totals") {
    std::mt19937_64 rng(43);
    std::normal_distribution<double> d(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        int n_spans = 1 + static_cast<int>(rng() % 5);
        std::vector<TokenSpan> spans;
        std::vector<double> adv;
        int tok = 0;
        for (int i = 0; i < n_spans; ++i) {
            int gap = static_cast<int>(rng() % 3);
            int len = 1 + static_cast<int>(rng() % 4);
            spans.push_back({tok + gap, tok + gap + len});
            tok += gap + len;
            adv.push_back(d(rng));
        }
        auto out = broadcast_tokens(adv, spans, tok);
        for (int i = 0; i < n_spans; ++i) {
            double sum = 0.0;
            for (int j = spans[static_cast<size_t>(i)].start; j < spans[static_cast<size_t>(i)].end; ++j)
                sum += out.values[static_cast<size_t>(j)];
            double span_len = spans[static_cast<size_t>(i)].end - spans[static_cast<size_t>(i)].start;
            CHECK(sum == doctest::Approx(span_len * adv[static_cast<size_t>(i)]).epsilon(1e-12));
        }
    }
}

TEST_CASE("mock attribution labels clean steps GOOD under a positive score") {
    auto backend = std::make_shared<MockBackend>("default");
    Gateway gateway(backend);
    Trajectory traj = small_trajectory(2);
    traj.steps[1].observation = "You cannot move east: open ground blocks the way.";
    auto labels = attribute_trajectory(small_task(), traj, 0.8, gateway);
    REQUIRE(labels.size() == 2);
    CHECK(labels[0].label == AttrLabel::GOOD);
    CHECK(labels[1].label == AttrLabel::BAD);

    // zero score: only error-correcting steps earn GOOD
    auto harsh = attribute_trajectory(small_task(), traj, 0.0, gateway);
    CHECK(harsh[0].label == AttrLabel::BAD);
    CHECK(harsh[1].label == AttrLabel::BAD);

    Trajectory corrected = small_trajectory(3);
    corrected.steps[0].observation = "unknown operation 'fly'.";
    auto fixed = attribute_trajectory(small_task(), corrected, 0.0, gateway);
    CHECK(fixed[0].label == AttrLabel::BAD);
    CHECK(fixed[1].label == AttrLabel::GOOD);  // recovered from the error
    CHECK(fixed[2].label == AttrLabel::BAD);
}
