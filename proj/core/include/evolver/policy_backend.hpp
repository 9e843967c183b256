#ifndef EVOLVER_POLICY_BACKEND_HPP
#define EVOLVER_POLICY_BACKEND_HPP

#include <map>
#include <memory>
#include <mutex>

#include "evolver/gateway.hpp"
#include "evolver/types.hpp"

namespace evolver {

// Canonical state key for the tabular policy: the whitespace-normalized task
// query plus the latest environment observation (the policy's observable
// context), so distinct goals never alias onto one table row.
std::string policy_state_key(std::string_view query, std::string_view observation);

// Parsed in-context advice from an injected <EXP> block.
struct ExperienceAdvice {
    std::string when;     // normalized observation it applies to
    std::string action;   // action text
    bool avoid = false;   // true biases away from the action
};
std::optional<ExperienceAdvice> parse_advice(const std::string& content);

// Samples actions from a tabular softmax policy. Injected experience advice
// biases sampling only; reported log-probs are always those of the unbiased
// policy, which is what optimization conditions on after stripping.
class TabularBackend : public Backend {
public:
    TabularBackend(std::shared_ptr<const PolicySnapshot> policy, uint64_t seed,
                   double advice_bias = 2.0);

    CompletionResponse complete(const CompletionRequest& req) override;
    std::string name() const override { return "tabular"; }

    void set_policy(std::shared_ptr<const PolicySnapshot> policy);
    std::shared_ptr<const PolicySnapshot> policy() const;

    static std::string state_key_from_messages(const std::vector<ChatMessage>& messages);

private:
    mutable std::mutex mu_;
    std::shared_ptr<const PolicySnapshot> policy_;
    uint64_t seed_;
    double advice_bias_;
};

}  // namespace evolver

#endif  // EVOLVER_POLICY_BACKEND_HPP
