#include "doctest.h"

#include <cmath>
#include <cstdlib>

#include "evolver/gateway.hpp"
#include "evolver/mock_backend.hpp"
#include "evolver/optimizer.hpp"
#include "evolver/policy_backend.hpp"
#include "evolver/tokenize.hpp"

using namespace evolver;

TEST_CASE("tokenize splits on whitespace and punctuation") {
    CHECK(tokenize("pay the bill").size() == 3);
    CHECK(tokenize("").empty());
    CHECK(tokenize("don't stop").size() == 4);  // don ' t stop
}

TEST_CASE("token offsets round-trip to the original text") {
    std::string text = "move north; then enter the hospital (quickly).";
    for (const Token& t : tokenize(text))
        CHECK(text.substr(t.begin, t.end - t.begin) == t.text);
}

TEST_CASE("token counts are additive across a separator join") {
    std::string a = "show_api_doc pay_bill";
    std::string b = "call pay_bill now";
    CHECK(count_tokens(a + " " + b) == count_tokens(a) + count_tokens(b));
    CHECK(count_tokens(a + "\n" + b) == count_tokens(a) + count_tokens(b));
}

TEST_CASE("embed is deterministic and unit norm") {
    uint64_t state = 11;
    for (int trial = 0; trial < 200; ++trial) {
        state = splitmix64(state);
        std::string text = "word" + std::to_string(state % 1000) + " tail" +
                           std::to_string(state % 17);
        std::vector<double> v1 = embed_text(text, 64);
        std::vector<double> v2 = embed_text(text, 64);
        CHECK(v1 == v2);
        double norm = 0;
        for (double x : v1) norm += x * x;
        CHECK(std::fabs(norm - 1.0) < 1e-9);
    }
}

TEST_CASE("embed maps empty text to the canonical unit vector") {
    std::vector<double> v = embed_text("", 64);
    CHECK(v[0] == 1.0);
    CHECK(std::fabs(cosine(v, v) - 1.0) < 1e-12);
}

TEST_CASE("token-disjoint texts stay mostly uncorrelated") {
    uint64_t state = 3;
    int below = 0;
    const int trials = 1000;
    for (int trial = 0; trial < trials; ++trial) {
        std::string a, b;
        for (int i = 0; i < 8; ++i) {
            state = splitmix64(state);
            a += "alpha" + std::to_string(state % 50000) + " ";
            state = splitmix64(state);
            b += "beta" + std::to_string(state % 50000) + " ";
        }
        if (std::fabs(cosine(embed_text(a, 64), embed_text(b, 64))) < 0.3) ++below;
    }
    CHECK(below >= trials * 95 / 100);
}

TEST_CASE("mock determinism: identical request and scenario give identical bytes") {
    auto backend = std::make_shared<MockBackend>("default");
    Gateway gateway(backend);
    CompletionRequest req;
    req.tag = Tag::judge;
    req.messages = {{"user", "TASK: t\nREFERENCE STEPS (total 0):\nAGENT TRAJECTORY (total 0 "
                             "steps):\n"}};
    auto r1 = gateway.complete(req);
    auto r2 = gateway.complete(req);
    CHECK(r1.text == r2.text);
}

TEST_CASE("gateway logs every call with tag and digest") {
    auto backend = std::make_shared<MockBackend>("default");
    Gateway gateway(backend);
    CompletionRequest req;
    req.tag = Tag::summarize;
    req.messages = {{"user", "SUMMARIZE:\nhello world"}};
    gateway.complete(req);
    auto log = gateway.call_log();
    REQUIRE(log.size() == 1);
    CHECK(log[0].tag == Tag::summarize);
    CHECK(log[0].digest == request_digest(req));
    CHECK(log[0].request_text.find("hello world") != std::string::npos);
}

TEST_CASE("judge and attribute tags retry once; policy does not") {
    struct Flaky : Backend {
        int calls = 0;
        CompletionResponse complete(const CompletionRequest&) override {
            ++calls;
            throw std::runtime_error("transient");
        }
        std::string name() const override { return "flaky"; }
    };
    auto flaky = std::make_shared<Flaky>();
    Gateway gateway(flaky);

    CompletionRequest judge_req;
    judge_req.tag = Tag::judge;
    CHECK_THROWS_AS(gateway.complete(judge_req), GatewayError);
    CHECK(flaky->calls == 2);

    flaky->calls = 0;
    CompletionRequest policy_req;
    policy_req.tag = Tag::policy;
    CHECK_THROWS_AS(gateway.complete(policy_req), GatewayError);
    CHECK(flaky->calls == 1);
}

TEST_CASE("canned responses take precedence via request digest") {
    auto backend = std::make_shared<MockBackend>("default");
    CompletionRequest req;
    req.tag = Tag::judge;
    req.messages = {{"user", "anything"}};
    backend->add_canned(request_digest(req), "RELEVANCE: PASS\nSCORE: 0.77\n");
    Gateway gateway(backend);
    CHECK(gateway.complete(req).text == "RELEVANCE: PASS\nSCORE: 0.77\n");
}

TEST_CASE("tabular backend: temperature zero is greedy argmax every time") {
    auto policy = std::make_shared<PolicySnapshot>();
    policy->action_vocabulary = {"left", "right", "wait"};
    policy->logits[policy_state_key("q", "obs")] = {0.1, 2.0, -1.0};
    auto backend = std::make_shared<TabularBackend>(policy, 42);
    Gateway gateway(backend);
    CompletionRequest req;
    req.tag = Tag::policy;
    req.temperature = 0.0;
    req.messages = {{"user", "q"}, {"environment", "obs"}};
    for (int i = 0; i < 10; ++i) CHECK(gateway.complete(req).text == "right");
}

TEST_CASE("tabular backend reports the unbiased log-prob of the sampled action") {
    auto policy = std::make_shared<PolicySnapshot>();
    policy->action_vocabulary = {"a", "b"};
    auto backend = std::make_shared<TabularBackend>(policy, 7);
    Gateway gateway(backend);
    CompletionRequest req;
    req.tag = Tag::policy;
    req.temperature = 1.0;
    req.messages = {{"user", "task"}, {"environment", "somewhere"}};
    auto resp = gateway.complete(req);
    REQUIRE(resp.per_token_logprobs.size() == 1);
    // uniform two-action policy
    CHECK(std::fabs(resp.per_token_logprobs[0] - std::log(0.5)) < 1e-12);
}

TEST_CASE("experience advice biases sampling toward the advised action") {
    auto policy = std::make_shared<PolicySnapshot>();
    policy->action_vocabulary = {"a", "b", "c", "d"};
    auto backend = std::make_shared<TabularBackend>(policy, 9, 6.0);
    Gateway gateway(backend);

    std::string obs = "at the crossing";
    int advised = 0;
    const int total = 200;
    for (int i = 0; i < total; ++i) {
        CompletionRequest req;
        req.tag = Tag::policy;
        req.temperature = 1.0;
        req.messages = {{"system", "nonce " + std::to_string(i)},
                        {"memory", "<EXP>IF at the crossing THEN take c</EXP>"},
                        {"user", "task"},
                        {"environment", obs}};
        if (gateway.complete(req).text == "c") ++advised;
    }
    CHECK(advised > total / 2);  // uniform would give ~25%

    // advice for a different observation leaves sampling unbiased
    int advised_elsewhere = 0;
    for (int i = 0; i < total; ++i) {
        CompletionRequest req;
        req.tag = Tag::policy;
        req.temperature = 1.0;
        req.messages = {{"system", "nonce " + std::to_string(i)},
                        {"memory", "<EXP>IF somewhere else THEN take c</EXP>"},
                        {"user", "task"},
                        {"environment", obs}};
        if (gateway.complete(req).text == "c") ++advised_elsewhere;
    }
    CHECK(advised_elsewhere < total / 2);
}

TEST_CASE("parse_advice extracts take and avoid forms") {
    auto take = parse_advice("IF on road at (1,5) THEN take enter");
    REQUIRE(take.has_value());
    CHECK(take->when == "on road at (1,5)");
    CHECK(take->action == "enter");
    CHECK(!take->avoid);

    auto avoid = parse_advice("IF near the edge THEN avoid move north");
    REQUIRE(avoid.has_value());
    CHECK(avoid->avoid);
    CHECK(avoid->action == "move north");

    CHECK(!parse_advice("free-form advice with no structure").has_value());
}

TEST_CASE("backend kind honors the environment variable") {
    CHECK(backend_kind_from_env("mock") == "mock");
    setenv("EVOLVER_MODEL_BACKEND", "tabular", 1);
    CHECK(backend_kind_from_env("mock") == "tabular");
    unsetenv("EVOLVER_MODEL_BACKEND");
}
