#ifndef EVOLVER_QUESTIONING_HPP
#define EVOLVER_QUESTIONING_HPP

#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "evolver/context.hpp"
#include "evolver/env.hpp"
#include "evolver/gateway.hpp"
#include "evolver/types.hpp"

namespace evolver {

struct ExplorationConfig {
    int n_breadth = 3;        // breadth-first steps before the myopic phase
    int n_depth_window = 17;  // most recent observations kept in the prompt
    int max_steps = kDefaultMaxSteps;
    double temperature = 1.0;
};

struct CurationConfig {
    double lexical_threshold = 0.8;
    double semantic_threshold = 0.85;
    bool feasibility_required = true;
};

struct JudgeVerdict {
    double score = 0.0;
    bool relevance_pass = false;
    std::string rationale;
    std::vector<int> covered_reference_steps;
};

class SynthesisError : public std::runtime_error {
public:
    SynthesisError(std::string message, std::string raw_response)
        : std::runtime_error(std::move(message)), raw_response(std::move(raw_response)) {}
    std::string raw_response;
};

class ExtractionError : public std::runtime_error {
public:
    explicit ExtractionError(std::string message) : std::runtime_error(std::move(message)) {}
};

// Two-phase profile-guided exploration: the first n_breadth prompts instruct
// coverage of unvisited entities, later prompts carry only the most recent
// n_depth_window observations. A mid-episode environment failure returns the
// partial trajectory with truncated=true.
Trajectory explore(EnvSession& env, const EnvironmentProfile& profile,
                   const ExplorationConfig& cfg, Gateway& model,
                   const std::string& session_label = "");

// One model call over the distilled trajectory plus preferences; the task
// difficulty is copied from the preference verbatim.
Task synthesize_task(const Trajectory& traj, const UserPreference& pref, Gateway& model);

// Ordered subset of the trajectory's steps; every returned action appears
// verbatim in the trajectory, indices outside it raise ExtractionError.
std::vector<SolutionStep> extract_reference_solution(const Trajectory& traj, const Task& task,
                                                     Gateway& model);

// Jaccard over case-folded token sets (whitespace/punctuation split,
// punctuation dropped). Symmetric, 1 on equal sets, 0 on disjoint ones.
double lexical_similarity(const std::string& a, const std::string& b);

struct CurationDecision {
    bool accepted = false;
    std::string reason;  // names the matched task id and score on reject
};

// Accepted-task corpus; check-and-insert runs under one lock so concurrent
// synthesis never double-accepts near-duplicates.
class AcceptedCorpus {
public:
    CurationDecision try_accept(const Task& candidate, const CurationConfig& cfg);
    std::vector<Task> tasks() const;
    size_t size() const;

private:
    mutable std::mutex mu_;
    std::vector<Task> tasks_;
};

CurationDecision curate_realtime(const Task& candidate, AcceptedCorpus& corpus,
                                 const CurationConfig& cfg);

// Batch dedup (earlier lexicographic id wins between mutual duplicates) then
// action-by-action feasibility replay in a fresh environment; a task survives
// only if no action hits an undefined operation.
std::vector<Task> curate_post(const std::vector<Task>& tasks,
                              const std::function<std::unique_ptr<Environment>()>& env_factory,
                              const CurationConfig& cfg);

struct HybridDraw {
    Task task;
    bool synthetic = false;
    std::optional<double> advantage_decay;  // 0.5 on synthetic draws
};

// p_hybrid: synthetic with probability lambda, target otherwise, uniform
// within each pool; deterministic under a fixed seed.
class HybridSampler {
public:
    HybridSampler(std::vector<Task> target, std::vector<Task> synthetic, double lambda,
                  uint64_t seed, double decay = 0.5);
    HybridDraw next();

private:
    std::vector<Task> target_;
    std::vector<Task> synthetic_;
    double lambda_;
    uint64_t seed_;
    double decay_;
    uint64_t counter_ = 0;
};

// Reference-based judge: relevance/repetition gate first, then coverage of
// essential steps decides the scoring band ([0.6,1] covered, [0,0.4] not).
// An unparseable response is retried once, then scores 0.
JudgeVerdict judge(const Task& task, const Trajectory& traj, Gateway& model);

}  // namespace evolver

#endif  // EVOLVER_QUESTIONING_HPP
