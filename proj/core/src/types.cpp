#include "evolver/types.hpp"

#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

namespace evolver {

namespace {

bool names_unique(const std::vector<std::string>& names) {
    std::set<std::string> seen(names.begin(), names.end());
    return seen.size() == names.size();
}

}  // namespace

std::vector<std::string> validate_profile(const EnvironmentProfile& profile) {
    std::vector<std::string> violations;
    std::vector<std::string> entity_names;
    for (const auto& e : profile.entities) entity_names.push_back(e.name);
    std::vector<std::string> attr_names;
    for (const auto& a : profile.attributes) attr_names.push_back(a.name);
    std::vector<std::string> op_names;
    for (const auto& o : profile.operations) op_names.push_back(o.name);

    if (!names_unique(entity_names))
        violations.push_back("entities: names not unique");
    if (!names_unique(attr_names))
        violations.push_back("attributes: names not unique");
    if (!names_unique(op_names))
        violations.push_back("operations: names not unique");

    std::set<std::string> entity_set(entity_names.begin(), entity_names.end());
    for (const auto& a : profile.attributes) {
        if (!entity_set.count(a.entity))
            violations.push_back("attributes." + a.name +
                                 ": entity ref '" + a.entity + "' does not resolve");
    }
    return violations;
}

std::vector<std::string> validate_preference(const UserPreference& pref) {
    std::vector<std::string> violations;
    if (pref.difficulty.n_entities < 0)
        violations.push_back("difficulty.n_entities: negative count");
    if (pref.difficulty.n_attributes < 0)
        violations.push_back("difficulty.n_attributes: negative count");
    if (pref.difficulty.n_operations < 0)
        violations.push_back("difficulty.n_operations: negative count");
    return violations;
}

std::vector<std::string> validate_task(const Task& task) {
    std::vector<std::string> violations;
    if (task.query.empty()) violations.push_back("query: empty");
    if (task.origin == TaskOrigin::synthetic && task.reference_solution.empty())
        violations.push_back("reference_solution: empty but origin=synthetic");
    if (task.embedding) {
        double norm2 = 0.0;
        for (double v : *task.embedding) norm2 += v * v;
        if (std::fabs(std::sqrt(norm2) - 1.0) > kEmbeddingNormTolerance)
            violations.push_back("embedding: not unit norm");
    }
    return violations;
}

std::vector<std::string> validate_trajectory(const Trajectory& t, int max_steps) {
    std::vector<std::string> violations;
    if (static_cast<int>(t.steps.size()) > max_steps)
        violations.push_back("steps: step count exceeds max_steps");
    if (t.terminal == t.truncated)
        violations.push_back("terminal/truncated exclusivity");
    if (t.guidance == Guidance::experience && t.injected_experience_ids.empty())
        violations.push_back("injected_experience_ids: empty but guidance=experience");
    if (t.guidance == Guidance::vanilla && !t.injected_experience_ids.empty())
        violations.push_back("injected_experience_ids: non-empty but guidance=vanilla");
    if (t.outcome_reward < 0.0 || t.outcome_reward > 1.0)
        violations.push_back("outcome_reward: outside [0,1]");

    int prev_end = 0;
    for (size_t i = 0; i < t.steps.size(); ++i) {
        const Step& s = t.steps[i];
        std::string prefix = "steps[" + std::to_string(i) + "]";
        if (s.index != static_cast<int>(i))
            violations.push_back(prefix + ".index: not consecutive from 0");
        if (s.token_span.start >= s.token_span.end)
            violations.push_back(prefix + ".token_span: start not before end");
        if (s.token_span.start < prev_end)
            violations.push_back(prefix + ".token_span: overlaps or precedes previous span");
        prev_end = s.token_span.end;
    }
    if (!t.per_token_logprob_old.empty() &&
        static_cast<int>(t.per_token_logprob_old.size()) < prev_end)
        violations.push_back("per_token_logprob_old: shorter than last token span");
    return violations;
}

std::vector<std::string> validate_group(const RolloutGroup& group) {
    std::vector<std::string> violations;
    int nv = 0, ne = 0;
    for (const auto& t : group.trajectories) {
        if (t.guidance == Guidance::vanilla) ++nv; else ++ne;
        if (t.task_id != group.task_id)
            violations.push_back("trajectories: task_id mismatch for " + t.id);
    }
    if (nv != group.n_vanilla)
        violations.push_back("n_vanilla: does not match guidance tags");
    if (ne != group.n_experience)
        violations.push_back("n_experience: does not match guidance tags");
    if (group.n_vanilla + group.n_experience !=
        static_cast<int>(group.trajectories.size()))
        violations.push_back("counts: N_v + N_e != trajectory count");
    return violations;
}

std::vector<std::string> validate_experience(const Experience& e) {
    std::vector<std::string> violations;
    if (e.when_to_use.empty()) violations.push_back("when_to_use: empty");
    if (e.content.empty()) violations.push_back("content: empty");
    double norm2 = 0.0;
    for (double v : e.embedding) norm2 += v * v;
    if (std::fabs(std::sqrt(norm2) - 1.0) > kEmbeddingNormTolerance)
        violations.push_back("embedding: not unit norm");
    return violations;
}

std::vector<std::string> validate_policy(const PolicySnapshot& p) {
    std::vector<std::string> violations;
    if (p.temperature < 0.0)
        violations.push_back("temperature: negative");
    if (p.kind == PolicyKind::external) {
        if (!p.logits.empty())
            violations.push_back("logits: external policy carries no parameters");
        return violations;
    }
    const size_t vocab = p.action_vocabulary.size();
    for (const auto& [state, row] : p.logits) {
        if (row.size() != vocab)
            violations.push_back("logits['" + state + "']: size does not match action vocabulary");
        for (double v : row) {
            if (!std::isfinite(v)) {
                violations.push_back("logits['" + state + "']: non-finite value");
                break;
            }
        }
    }
    return violations;
}

std::string normalize_whitespace(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool in_space = true;  // trims leading whitespace
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!in_space) out.push_back(' ');
            in_space = true;
        } else {
            out.push_back(c);
            in_space = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

const char* to_string(Guidance g) {
    return g == Guidance::vanilla ? "vanilla" : "experience";
}

const char* to_string(TaskOrigin o) {
    return o == TaskOrigin::synthetic ? "synthetic" : "target";
}

const char* to_string(Provenance p) {
    switch (p) {
        case Provenance::success: return "success";
        case Provenance::failure: return "failure";
        default: return "comparative";
    }
}

const char* to_string(DifficultyLevel l) {
    switch (l) {
        case DifficultyLevel::easy: return "easy";
        case DifficultyLevel::medium: return "medium";
        default: return "hard";
    }
}

}  // namespace evolver
