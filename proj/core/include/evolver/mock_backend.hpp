#ifndef EVOLVER_MOCK_BACKEND_HPP
#define EVOLVER_MOCK_BACKEND_HPP

#include <functional>
#include <map>
#include <string>

#include "evolver/gateway.hpp"

namespace evolver {

// Deterministic scripted responders, one per tag. The same request under the
// same scenario always yields identical bytes; canned responses keyed by
// request digest take precedence over the programmed behavior.
class MockBackend : public Backend {
public:
    explicit MockBackend(std::string scenario = "default");

    CompletionResponse complete(const CompletionRequest& req) override;
    std::string name() const override { return "mock"; }

    void add_canned(uint64_t digest, std::string response);
    void set_responder(Tag tag, std::function<std::string(const CompletionRequest&)> fn);
    const std::string& scenario() const { return scenario_; }

private:
    std::string scenario_;
    std::map<uint64_t, std::string> canned_;
    std::map<Tag, std::function<std::string(const CompletionRequest&)>> responders_;
};

// The individual responders, exposed so tests can call them directly.
namespace mock {

std::string explore_action(const std::string& prompt, const std::string& scenario);
std::string synthesize_query(const std::string& prompt, const std::string& scenario);
std::string extract_response(const std::string& prompt, const std::string& scenario);
std::string judge_verdict(const std::string& prompt, const std::string& scenario);
std::string attribute_labels(const std::string& prompt, const std::string& scenario);
std::string refine_order(const std::string& prompt, const std::string& scenario);
std::string validate_verdict(const std::string& prompt, const std::string& scenario);
std::string summarize(const std::string& prompt, const std::string& scenario);
std::string policy_action(const std::string& prompt, const std::string& scenario);

// True when the observation reports a failed or wasted interaction.
bool observation_is_error(const std::string& observation);

}  // namespace mock

}  // namespace evolver

#endif  // EVOLVER_MOCK_BACKEND_HPP
