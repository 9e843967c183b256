#include "doctest.h"

#include <cmath>
#include <regex>
#include <set>

#include "evolver/env.hpp"
#include "evolver/gateway.hpp"
#include "evolver/mock_backend.hpp"
#include "evolver/questioning.hpp"
#include "evolver/tokenize.hpp"

using namespace evolver;

namespace {

struct GridFixture {
    GridFixture(const std::string& scenario = "default")
        : backend(std::make_shared<MockBackend>(scenario)), gateway(backend) {
        spec.name = "gridmap";
        profile = builtin_profile("gridmap");
    }
    std::shared_ptr<MockBackend> backend;
    Gateway gateway;
    EnvSpec spec;
    EnvironmentProfile profile;
};

Trajectory explored_fixture(GridFixture& fix, int max_steps, const std::string& label) {
    // retry sessions until one exploration actually enters a building
    for (int attempt = 0; attempt < 16; ++attempt) {
        auto env = make_environment(fix.spec);
        LocalEnvSession session(*env);
        ExplorationConfig cfg;
        cfg.max_steps = max_steps;
        Trajectory traj =
            explore(session, fix.profile, cfg, fix.gateway, label + std::to_string(attempt));
        if (traj.terminal) return traj;
    }
    return {};
}

}  // namespace

TEST_CASE("lexical_similarity identities and the hand-counted example") {
    CHECK(lexical_similarity("pay the bill", "pay the bill") == 1.0);
    CHECK(lexical_similarity("alpha beta", "gamma delta") == 0.0);
    // intersection {send,money,to} = 3, union 5
    CHECK(lexical_similarity("send money to alice", "send money to bob") ==
          doctest::Approx(0.6).epsilon(1e-12));
    CHECK(lexical_similarity("", "") == 1.0);
    CHECK(lexical_similarity("a", "") == 0.0);
}

TEST_CASE("lexical_similarity is symmetric, reflexive and bounded") {
    uint64_t state = 77;
    auto word = [&state] {
        state = splitmix64(state);
        return "w" + std::to_string(state % 40);
    };
    for (int trial = 0; trial < 300; ++trial) {
        std::string a, b;
        for (int i = 0; i < 6; ++i) a += word() + " ";
        for (int i = 0; i < 6; ++i) b += word() + " ";
        double ab = lexical_similarity(a, b);
        CHECK(ab == lexical_similarity(b, a));
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0);
        CHECK(lexical_similarity(a, a) == 1.0);
    }
}

TEST_CASE("curate_realtime rejects duplicates and names the match") {
    AcceptedCorpus corpus;
    CurationConfig cfg;
    Task t1;
    t1.id = "task-a";
    t1.query = "reach the hospital quickly";
    t1.origin = TaskOrigin::target;
    CHECK(curate_realtime(t1, corpus, cfg).accepted);  // empty corpus accepts

    Task dup = t1;
    dup.id = "task-b";
    auto decision = curate_realtime(dup, corpus, cfg);
    CHECK(!decision.accepted);
    CHECK(decision.reason.find("task-a") != std::string::npos);
    CHECK(decision.reason.find("1") != std::string::npos);  // score
}

TEST_CASE("curate_realtime rejects a planted near-duplicate above 0.8") {
    AcceptedCorpus corpus;
    CurationConfig cfg;
    Task base;
    base.id = "task-a";
    // ten tokens
    base.query = "alpha beta gamma delta epsilon zeta eta theta iota kappa";
    base.origin = TaskOrigin::target;
    REQUIRE(curate_realtime(base, corpus, cfg).accepted);

    Task close = base;
    close.id = "task-b";
    // 10 shared tokens of 12 total -> jaccard 10/12 = 0.833 > 0.8
    close.query = base.query + " lambda mu";
    double sim = lexical_similarity(base.query, close.query);
    CHECK(sim == doctest::Approx(10.0 / 12.0).epsilon(1e-12));
    CHECK(!curate_realtime(close, corpus, cfg).accepted);
}

TEST_CASE("curate_realtime acceptance is monotone in the thresholds") {
    uint64_t state = 5;
    auto word = [&state] {
        state = splitmix64(state);
        return "w" + std::to_string(state % 12);
    };
    for (int trial = 0; trial < 100; ++trial) {
        Task a, b;
        a.id = "a";
        b.id = "b";
        a.origin = b.origin = TaskOrigin::target;
        for (int i = 0; i < 8; ++i) a.query += word() + " ";
        for (int i = 0; i < 8; ++i) b.query += word() + " ";
        for (double hi = 0.9; hi >= 0.1; hi -= 0.2) {
            CurationConfig strict;
            strict.lexical_threshold = hi - 0.1;
            CurationConfig loose;
            loose.lexical_threshold = hi;
            AcceptedCorpus c1, c2;
            curate_realtime(a, c1, strict);
            curate_realtime(a, c2, loose);
            bool strict_accepts = curate_realtime(b, c1, strict).accepted;
            bool loose_accepts = curate_realtime(b, c2, loose).accepted;
            // lowering the threshold never converts reject into accept
            if (!loose_accepts) CHECK(!strict_accepts);
        }
    }
}

TEST_CASE("semantic check rejects high-cosine candidates") {
    AcceptedCorpus corpus;
    CurationConfig cfg;
    cfg.lexical_threshold = 0.99;  // let the semantic line do the work
    cfg.semantic_threshold = 0.85;
    Task a;
    a.id = "a";
    a.query = "please walk across town and then carefully enter the main hospital building";
    a.origin = TaskOrigin::target;
    a.embedding = embed_text(a.query, 64);
    REQUIRE(curate_realtime(a, corpus, cfg).accepted);
    Task b = a;
    b.id = "b";
    // one token swapped out of twelve: lexical 11/13, cosine ~11/12
    b.query = "please walk across town and then carefully enter the main school building";
    b.embedding = embed_text(b.query, 64);
    auto decision = curate_realtime(b, corpus, cfg);
    CHECK(!decision.accepted);
    CHECK(decision.reason.find("semantic") != std::string::npos);
}

TEST_CASE("curate_post drops undefined operations and keeps replayable tasks") {
    EnvSpec spec;
    spec.name = "gridmap";
    auto factory = [&spec]() { return make_environment(spec); };
    CurationConfig cfg;

    Task good;
    good.id = "task-good";
    good.query = "go south then enter the hospital";
    good.origin = TaskOrigin::synthetic;
    // recorded from a valid walk: soft failures along the way are fine
    good.reference_solution = {{"move south", "You moved south."},
                               {"move south", "You moved south."},
                               {"enter", "nothing to enter here."}};

    Task bad;
    bad.id = "task-bad";
    bad.query = "teleport to the factory";
    bad.origin = TaskOrigin::synthetic;
    bad.reference_solution = {{"teleport factory", "zap"}};

    auto kept = curate_post({good, bad}, factory, cfg);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].id == "task-good");
}

TEST_CASE("curate_post dedups mutual duplicates keeping the earlier id") {
    EnvSpec spec;
    spec.name = "gridmap";
    auto factory = [&spec]() { return make_environment(spec); };
    CurationConfig cfg;
    Task t1, t2;
    t1.id = "task-b";
    t2.id = "task-a";
    t1.query = t2.query = "walk to the school and enter";
    t1.origin = t2.origin = TaskOrigin::synthetic;
    t1.reference_solution = t2.reference_solution = {{"move east", "You moved east."}};
    auto kept = curate_post({t1, t2}, factory, cfg);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].id == "task-a");
}

TEST_CASE("hybrid sampler: pure synthetic when target is empty") {
    Task s;
    s.id = "s";
    s.query = "synthetic";
    s.origin = TaskOrigin::synthetic;
    HybridSampler sampler({}, {s}, 1.0, 7);
    for (int i = 0; i < 20; ++i) {
        auto draw = sampler.next();
        CHECK(draw.synthetic);
        REQUIRE(draw.advantage_decay.has_value());
        CHECK(*draw.advantage_decay == 0.5);
    }
    CHECK_THROWS(HybridSampler({}, {}, 1.0, 7));
    CHECK_THROWS(HybridSampler({}, {s}, 0.0, 7));
    CHECK_THROWS(HybridSampler({}, {s}, 1.5, 7));
}

TEST_CASE("hybrid sampler frequency converges to lambda") {
    Task s, t;
    s.id = "s";
    s.query = "synthetic";
    s.origin = TaskOrigin::synthetic;
    t.id = "t";
    t.query = "target";
    t.origin = TaskOrigin::target;
    HybridSampler sampler({t}, {s}, 0.5, 1234);
    int synthetic = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        auto draw = sampler.next();
        if (draw.synthetic) {
            ++synthetic;
            CHECK(draw.advantage_decay.has_value());
        } else {
            CHECK(!draw.advantage_decay.has_value());
        }
    }
    double frac = static_cast<double>(synthetic) / n;
    CHECK(frac == doctest::Approx(0.5).epsilon(0.04));  // 0.5 +- 0.02

    // chi-square with 1 dof at p > 0.01 (critical value 6.63)
    double expected = n / 2.0;
    double chi2 = (synthetic - expected) * (synthetic - expected) / expected +
                  ((n - synthetic) - expected) * ((n - synthetic) - expected) / expected;
    CHECK(chi2 < 6.63);

    // determinism under the same seed
    HybridSampler again({t}, {s}, 0.5, 1234);
    int synthetic2 = 0;
    for (int i = 0; i < n; ++i)
        if (again.next().synthetic) ++synthetic2;
    CHECK(synthetic2 == synthetic);
}

TEST_CASE("explore respects the window law") {
    GridFixture fix;
    auto env = make_environment(fix.spec);
    LocalEnvSession session(*env);
    ExplorationConfig cfg;
    cfg.n_breadth = 2;
    cfg.n_depth_window = 4;
    cfg.max_steps = 9;
    fix.gateway.clear_log();
    explore(session, fix.profile, cfg, fix.gateway, "w1");

    auto log = fix.gateway.call_log();
    static const std::regex obs_re(R"(OBS (\d+):)");
    static const std::regex step_re(R"(STEP (\d+))");
    for (const CallRecord& rec : log) {
        if (rec.tag != Tag::explore) continue;
        std::smatch m;
        REQUIRE(std::regex_search(rec.request_text, m, step_re));
        int t = std::stoi(m[1]);
        std::set<int> seen;
        auto begin = std::sregex_iterator(rec.request_text.begin(), rec.request_text.end(),
                                          obs_re);
        for (auto it = begin; it != std::sregex_iterator(); ++it)
            seen.insert(std::stoi((*it)[1]));
        if (t > cfg.n_breadth) {
            // exactly observations t-N_d .. t-1
            std::set<int> expected;
            for (int j = std::max(0, t - cfg.n_depth_window); j <= t - 1; ++j)
                expected.insert(j);
            CHECK(seen == expected);
        } else {
            std::set<int> expected;
            for (int j = 0; j <= t - 1; ++j) expected.insert(j);
            CHECK(seen == expected);
        }
    }
}

TEST_CASE("explore window of one keeps exactly the latest observation") {
    GridFixture fix;
    auto env = make_environment(fix.spec);
    LocalEnvSession session(*env);
    ExplorationConfig cfg;
    cfg.n_breadth = 1;
    cfg.n_depth_window = 1;
    cfg.max_steps = 6;
    fix.gateway.clear_log();
    explore(session, fix.profile, cfg, fix.gateway, "w2");
    static const std::regex obs_re(R"(OBS (\d+):)");
    static const std::regex step_re(R"(STEP (\d+))");
    for (const CallRecord& rec : fix.gateway.call_log()) {
        if (rec.tag != Tag::explore) continue;
        std::smatch m;
        std::regex_search(rec.request_text, m, step_re);
        int t = std::stoi(m[1]);
        if (t <= cfg.n_breadth) continue;
        std::vector<int> seen;
        auto begin = std::sregex_iterator(rec.request_text.begin(), rec.request_text.end(),
                                          obs_re);
        for (auto it = begin; it != std::sregex_iterator(); ++it)
            seen.push_back(std::stoi((*it)[1]));
        REQUIRE(seen.size() == 1);
        CHECK(seen[0] == t - 1);
    }
}

TEST_CASE("explore with a zero budget returns an empty truncated trajectory") {
    GridFixture fix;
    auto env = make_environment(fix.spec);
    LocalEnvSession session(*env);
    ExplorationConfig cfg;
    cfg.n_breadth = 0;
    cfg.max_steps = 0;
    Trajectory t = explore(session, fix.profile, cfg, fix.gateway, "zero");
    CHECK(t.steps.empty());
    CHECK(t.truncated);
    CHECK(!t.terminal);
}

TEST_CASE("synthesize_task copies the difficulty and names an explored entity") {
    GridFixture fix;
    Trajectory traj = explored_fixture(fix, 25, "s1");
    REQUIRE(!traj.steps.empty());

    UserPreference pref;
    pref.difficulty.n_entities = 2;
    pref.difficulty.level = DifficultyLevel::hard;

    Task task = synthesize_task(traj, pref, fix.gateway);
    CHECK(task.origin == TaskOrigin::synthetic);
    CHECK(task.difficulty.n_entities == 2);
    CHECK(!task.query.empty());
    bool mentions_entity = false;
    for (const auto& e : fix.profile.entities)
        if (task.query.find(e.name) != std::string::npos) mentions_entity = true;
    CHECK(mentions_entity);
    CHECK_THROWS(synthesize_task(Trajectory{}, pref, fix.gateway));
}

TEST_CASE("extract_reference_solution returns verbatim actions in order") {
    GridFixture fix;
    Trajectory traj = explored_fixture(fix, 25, "s2");
    REQUIRE(!traj.steps.empty());
    Task task;
    task.id = "t";
    task.query = "anything";
    auto solution = extract_reference_solution(traj, task, fix.gateway);
    std::set<std::string> actions;
    for (const Step& s : traj.steps) actions.insert(s.action);
    for (const SolutionStep& s : solution) CHECK(actions.count(s.action) == 1);

    Trajectory single;
    single.steps.push_back(
        {0, "enter", "You entered the hospital.", std::nullopt, {0, 1}});
    auto one = extract_reference_solution(single, task, fix.gateway);
    REQUIRE(one.size() == 1);
    CHECK(one[0].action == "enter");
}

TEST_CASE("extraction citing an out-of-range step raises an error") {
    GridFixture fix("cite-out-of-range");
    Trajectory traj;
    for (int i = 0; i < 5; ++i)
        traj.steps.push_back({i, "move east", "You moved east.", std::nullopt, {i * 3, i * 3 + 2}});
    Task task;
    task.query = "q";
    CHECK_THROWS_AS(extract_reference_solution(traj, task, fix.gateway), ExtractionError);
}

TEST_CASE("judge: full coverage lands in the success band, repetition scores zero") {
    GridFixture fix;
    Task task;
    task.id = "t";
    task.query = "enter the hospital";
    task.origin = TaskOrigin::synthetic;
    task.reference_solution = {{"move south", "You moved south."},
                               {"enter", "You entered the hospital."}};

    Trajectory covered;
    covered.id = "c";
    covered.terminal = true;
    covered.steps = {
        {0, "move south", "You moved south. You are on road at (1,1).", std::nullopt, {0, 2}},
        {1, "enter", "You entered the hospital.", std::nullopt, {4, 5}}};
    JudgeVerdict verdict = judge(task, covered, fix.gateway);
    CHECK(verdict.relevance_pass);
    CHECK(verdict.score >= 0.6);
    CHECK(verdict.covered_reference_steps.size() == 2);

    Trajectory repeated;
    repeated.id = "r";
    repeated.terminal = true;
    repeated.steps = {
        {0, "move north", "You cannot move north: open ground blocks the way.", std::nullopt, {0, 2}},
        {1, "move north", "You cannot move north: open ground blocks the way.", std::nullopt, {4, 6}},
        {2, "move north", "You cannot move north: open ground blocks the way.", std::nullopt, {8, 10}}};
    JudgeVerdict zero = judge(task, repeated, fix.gateway);
    CHECK(!zero.relevance_pass);
    CHECK(zero.score == 0.0);

    Trajectory empty;
    empty.id = "e";
    empty.truncated = true;
    JudgeVerdict floor = judge(task, empty, fix.gateway);
    CHECK(floor.score == 0.0);
}

TEST_CASE("judge invariant: relevance fail forces zero and bands match coverage") {
    GridFixture fix;
    Task task;
    task.id = "t";
    task.query = "enter the school";
    task.origin = TaskOrigin::synthetic;
    task.reference_solution = {{"move east", "You moved east."},
                               {"enter", "You entered the school."}};

    // a partially covering trajectory: one ref action present, final one absent
    Trajectory partial;
    partial.id = "p";
    partial.truncated = true;
    partial.steps = {
        {0, "move east", "You moved east. You are on road at (2,0).", std::nullopt, {0, 2}},
        {1, "move west", "You moved west. You are on road at (1,0).", std::nullopt, {4, 6}}};
    JudgeVerdict verdict = judge(task, partial, fix.gateway);
    if (verdict.relevance_pass) {
        bool full = verdict.covered_reference_steps.size() == task.reference_solution.size();
        if (full) CHECK(verdict.score >= 0.6);
        else CHECK(verdict.score <= 0.4);
    } else {
        CHECK(verdict.score == 0.0);
    }
}

TEST_CASE("judge retries once then falls back to zero with a diagnostic rationale") {
    GridFixture fix("judge-garbage");
    Task task;
    task.id = "t";
    task.query = "anything";
    task.origin = TaskOrigin::target;
    Trajectory traj;
    traj.id = "x";
    traj.terminal = true;
    traj.steps = {{0, "move east", "You moved east.", std::nullopt, {0, 2}}};
    JudgeVerdict verdict = judge(task, traj, fix.gateway);
    CHECK(verdict.score == 0.0);
    CHECK(verdict.rationale == "judge parse failure");
}
