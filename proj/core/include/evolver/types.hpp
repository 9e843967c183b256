#ifndef EVOLVER_TYPES_HPP
#define EVOLVER_TYPES_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace evolver {

// Default caps shared across the system.
inline constexpr int kDefaultMaxSteps = 30;
inline constexpr int kDefaultEmbeddingDim = 64;
inline constexpr double kEmbeddingNormTolerance = 1e-6;

// ============================================================================
// Environment profile
// ============================================================================

struct ProfileEntity {
    std::string name;
    std::string description;
    bool operator==(const ProfileEntity&) const = default;
};

struct ProfileAttribute {
    std::string name;
    std::string description;
    std::string entity;  // must name an entity in the same profile
    bool operator==(const ProfileAttribute&) const = default;
};

struct ProfileOperation {
    std::string name;
    std::string description;
    bool operator==(const ProfileOperation&) const = default;
};

// Structured summary of what an environment contains and supports. Primes
// exploration and task synthesis.
struct EnvironmentProfile {
    std::vector<ProfileEntity> entities;
    std::vector<ProfileAttribute> attributes;
    std::vector<ProfileOperation> operations;
    bool operator==(const EnvironmentProfile&) const = default;
};

// Empty result means the profile is well-formed. Each violation names the
// field and the broken rule.
std::vector<std::string> validate_profile(const EnvironmentProfile& profile);

// ============================================================================
// User preference
// ============================================================================

enum class DifficultyLevel { easy, medium, hard };

struct Difficulty {
    int n_entities = 2;
    int n_attributes = 3;
    int n_operations = 3;
    DifficultyLevel level = DifficultyLevel::hard;
    bool operator==(const Difficulty&) const = default;
};

struct UserPreference {
    Difficulty difficulty;
    std::string style_rubric;
    bool operator==(const UserPreference&) const = default;
};

std::vector<std::string> validate_preference(const UserPreference& pref);

// ============================================================================
// Task
// ============================================================================

enum class TaskOrigin { synthetic, target };

struct SolutionStep {
    std::string action;
    std::string observation_summary;
    bool operator==(const SolutionStep&) const = default;
};

struct Task {
    std::string id;
    std::string query;
    std::vector<SolutionStep> reference_solution;
    Difficulty difficulty;
    TaskOrigin origin = TaskOrigin::synthetic;
    std::optional<std::vector<double>> embedding;  // unit norm when present
    bool operator==(const Task&) const = default;
};

std::vector<std::string> validate_task(const Task& task);

// ============================================================================
// Trajectory
// ============================================================================

// Half-open [start, end) range into a token stream.
struct TokenSpan {
    int start = 0;
    int end = 0;
    bool operator==(const TokenSpan&) const = default;
};

struct Step {
    int index = 0;
    std::string action;
    std::string observation;
    std::optional<std::string> think;
    TokenSpan token_span;
    bool operator==(const Step&) const = default;
};

enum class Guidance { vanilla, experience };

struct Trajectory {
    std::string id;
    std::string task_id;
    std::vector<Step> steps;
    bool terminal = false;
    bool truncated = false;
    Guidance guidance = Guidance::vanilla;
    std::vector<std::string> injected_experience_ids;
    double outcome_reward = 0.0;  // R_out in [0,1]
    // Aligned to the trajectory token stream; a rollout records the sampling
    // log-prob on the first token of each action span and zero elsewhere.
    std::vector<double> per_token_logprob_old;
    bool operator==(const Trajectory&) const = default;
};

std::vector<std::string> validate_trajectory(const Trajectory& t,
                                             int max_steps = kDefaultMaxSteps);

// ============================================================================
// Rollout group
// ============================================================================

struct RolloutGroup {
    std::string task_id;
    std::vector<Trajectory> trajectories;
    int n_vanilla = 0;
    int n_experience = 0;
};

std::vector<std::string> validate_group(const RolloutGroup& group);

// ============================================================================
// Experience
// ============================================================================

enum class Provenance { success, failure, comparative };

struct Experience {
    std::string id;
    std::string when_to_use;
    std::string content;
    std::vector<double> embedding;  // unit L2 norm
    Provenance provenance = Provenance::success;
    bool validated = false;
    bool operator==(const Experience&) const = default;
};

std::vector<std::string> validate_experience(const Experience& e);

// ============================================================================
// Policy snapshot
// ============================================================================

enum class PolicyKind { tabular_softmax, external };

// Tabular softmax policy over a fixed action vocabulary. State keys are the
// whitespace-normalized text of what the policy observes. An external policy
// carries no parameters; its log-probs come from the gateway.
struct PolicySnapshot {
    PolicyKind kind = PolicyKind::tabular_softmax;
    std::vector<std::string> action_vocabulary;
    std::map<std::string, std::vector<double>> logits;  // state key -> logits
    double temperature = 1.0;
    bool operator==(const PolicySnapshot&) const = default;
};

std::vector<std::string> validate_policy(const PolicySnapshot& p);

// Collapses runs of whitespace to single spaces and trims the ends; the
// canonical form used for tabular state keys.
std::string normalize_whitespace(std::string_view text);

const char* to_string(Guidance g);
const char* to_string(TaskOrigin o);
const char* to_string(Provenance p);
const char* to_string(DifficultyLevel l);

}  // namespace evolver

#endif  // EVOLVER_TYPES_HPP
