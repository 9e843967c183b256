#ifndef EVOLVER_ATTRIBUTION_HPP
#define EVOLVER_ATTRIBUTION_HPP

#include <stdexcept>
#include <string>
#include <vector>

#include "evolver/gateway.hpp"
#include "evolver/types.hpp"

namespace evolver {

enum class AttrLabel { GOOD, BAD };

struct AttributionLabel {
    int step_index = 0;
    AttrLabel label = AttrLabel::BAD;
    std::string rationale;
};

struct LabelMapping {
    double good = 1.0;
    double bad = -1.0;
};

struct AttributionPrompt {
    std::string system_text;
    std::string user_text;
};

class AttributionParseError : public std::runtime_error {
public:
    AttributionParseError(std::string message, int step_index)
        : std::runtime_error(std::move(message)), step_index(step_index) {}
    int step_index = 0;
};

// Single-pass evaluation prompt covering the whole trajectory: sign-conditional
// rules in the system text, EVAL-STEP blocks plus the overall score in the
// user text.
AttributionPrompt build_attribution_prompt(const Task& task, const Trajectory& traj,
                                           double outcome_score);

// Expects exactly n_steps "Step i Judgment: GOOD|BAD" entries (case-insensitive),
// in order; throws AttributionParseError naming the first bad index otherwise.
std::vector<AttributionLabel> parse_attribution(const std::string& response, int n_steps);

// One gateway call with a single retry; an unparseable second response marks
// every step BAD so the group keeps its size.
std::vector<AttributionLabel> attribute_trajectory(const Task& task, const Trajectory& traj,
                                                   double outcome_score, Gateway& model);

std::vector<double> quantify(const std::vector<AttributionLabel>& labels,
                             const LabelMapping& mapping);

enum class StandardizeMode { trajectory_level, step_level };

// Channel standardization for a rollout group. trajectory_level computes the
// statistics over per-trajectory means so every trajectory weighs equally;
// step_level pools all steps. Near-zero sigma neutralizes the whole channel.
std::vector<std::vector<double>> standardize_attribution(
    const std::vector<std::vector<double>>& group_series, StandardizeMode mode,
    double eps = 1e-8);

std::vector<double> standardize_outcome(const std::vector<double>& outcome_rewards,
                                        double eps = 1e-8);

// r_hat_t = alpha * r_attr_hat_t + [t == T] * r_out_hat
std::vector<double> fuse(const std::vector<double>& attr_hat, double outcome_hat, double alpha);

// Undiscounted suffix sums: A_t = sum_{k>=t} r_hat_k.
std::vector<double> advantage(const std::vector<double>& fused);

struct TokenAdvantage {
    std::vector<double> values;  // per token; zero outside action spans
    std::vector<bool> mask;      // true on action-span tokens
};

// Broadcasts step advantages onto token spans; tokens outside any span carry
// no advantage and a false mask. Throws on overlapping or unordered spans.
TokenAdvantage broadcast_tokens(const std::vector<double>& step_advantages,
                                const std::vector<TokenSpan>& spans, int n_tokens);

// Bundled per-trajectory reward channels, persisted for audit.
struct RewardSeries {
    std::vector<double> r_attr;
    std::vector<double> r_attr_hat;
    double r_out = 0.0;
    double r_out_hat = 0.0;
    std::vector<double> fused;
    double alpha = 0.1;
};

struct AttributionRecord {
    std::string trajectory_id;
    uint64_t prompt_digest = 0;
    std::vector<std::string> labels;
    std::vector<std::string> rationales;
};

void append_attribution_record(const std::string& path, const AttributionRecord& record);

}  // namespace evolver

#endif  // EVOLVER_ATTRIBUTION_HPP
