#ifndef EVOLVER_CONTEXT_HPP
#define EVOLVER_CONTEXT_HPP

#include <optional>
#include <string>
#include <vector>

#include "evolver/env.hpp"
#include "evolver/gateway.hpp"
#include "evolver/types.hpp"

namespace evolver {

enum class Role { llm, environment, memory, system, user };
const char* to_string(Role role);

// The sampling decision behind an llm message.
struct DecisionMeta {
    std::string state_key;
    int action_id = 0;
    double logprob = 0.0;
    int step_index = 0;
};

struct Message {
    Role role = Role::environment;
    std::string text;
    bool loss_mask = false;  // true only for llm-generated text
    int token_count = 0;
    std::optional<DecisionMeta> decision;
};

Message make_message(Role role, std::string text);

// Mutable working context of one rollout.
class LiveContextTimeline {
public:
    explicit LiveContextTimeline(std::optional<int> token_budget = std::nullopt);

    void append(Message m);
    void insert(size_t index, Message m);
    void replace(size_t index, Message m);
    void erase(size_t index);

    const std::vector<Message>& messages() const { return messages_; }
    int total_tokens() const { return total_tokens_; }
    std::optional<int> token_budget() const { return token_budget_; }

private:
    std::vector<Message> messages_;
    int total_tokens_ = 0;
    std::optional<int> token_budget_;
};

// Append-only record of frozen LCT copies, one per generated action.
class TimelineSnapshotRecorder {
public:
    // Precondition: the latest LCT message is an llm action.
    void record_snapshot(const LiveContextTimeline& lct);
    const std::vector<std::vector<Message>>& snapshots() const { return snapshots_; }

private:
    std::vector<std::vector<Message>> snapshots_;
};

// One training sample after merging: token sequence plus aligned loss mask.
struct TrainingSample {
    std::vector<Message> messages;
    std::vector<std::string> tokens;
    std::vector<int> message_first_token;  // per message, index of its first token
    std::vector<bool> loss_mask;           // per token
    std::string text() const;              // messages joined with newlines
};

TrainingSample sample_from_messages(const std::vector<Message>& messages);

// Subsumes snapshots that are (non-strict) token-prefixes of later ones and
// aligns loss masks so every llm token occurrence lands in exactly one sample.
std::vector<TrainingSample> merge_timelines(const TimelineSnapshotRecorder& tsr);

enum class CmtKind { basic_causal, reasoning_augmented, sliding_window, self_managing };
const char* to_string(CmtKind kind);
CmtKind cmt_kind_from_string(const std::string& name);

struct CmtOptions {
    std::optional<int> token_budget;
    int max_steps = kDefaultMaxSteps;
    double temperature = 1.0;
    std::string system_prompt = "You are an agent completing a task in an environment.";
    std::string nonce;                     // rollout identity line, keeps sampling streams apart
    std::optional<Experience> experience;  // injected for experience-guided rollouts
    int sliding_keep_window = 6;           // most recent messages kept verbatim
    std::string trajectory_id = "traj-0";
};

struct RolloutResult {
    Trajectory trajectory;
    TimelineSnapshotRecorder tsr;
    std::string initial_observation;
};

// Runs one episode under the selected context-managing template against a
// live environment instance via the registry-style interface.
class EnvSession {
public:
    virtual ~EnvSession() = default;
    virtual std::string state() = 0;
    virtual StepOutcome step(const std::string& action) = 0;
};

class LocalEnvSession : public EnvSession {
public:
    explicit LocalEnvSession(Environment& env) : env_(env) {}
    std::string state() override { return env_.state(); }
    StepOutcome step(const std::string& action) override { return env_.step(action); }

private:
    Environment& env_;
};

RolloutResult run_template(CmtKind kind, EnvSession& env, const Task& task, Gateway& model,
                           const CmtOptions& options);

// Splits "<think>...</think>action" into its parts; think stays empty when
// the markers are absent.
std::pair<std::string, std::string> split_think(const std::string& response);

void dump_timeline(const std::string& path, const TimelineSnapshotRecorder& tsr,
                   const std::vector<TrainingSample>& samples);

}  // namespace evolver

#endif  // EVOLVER_CONTEXT_HPP
