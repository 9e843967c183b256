#include "evolver/attribution.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>

#include "evolver/tokenize.hpp"

#include "json.hpp"

namespace evolver {

namespace {

constexpr double kNeutralizeSigma = 1e-12;

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double pop_sigma(const std::vector<double>& xs, double mu) {
    if (xs.empty()) return 0.0;
    double var = 0.0;
    for (double x : xs) var += (x - mu) * (x - mu);
    return std::sqrt(var / static_cast<double>(xs.size()));
}

std::string format_score(double score) {
    std::ostringstream out;
    out << score;
    return out.str();
}

}  // namespace

AttributionPrompt build_attribution_prompt(const Task& task, const Trajectory& traj,
                                           double outcome_score) {
    if (traj.steps.empty())
        throw std::invalid_argument("build_attribution_prompt: empty trajectory");

    AttributionPrompt prompt;
    prompt.system_text =
        "You are an expert process reward evaluator specializing in attributional "
        "analysis.\n"
        "\n"
        "INPUTS: A user's TASK, a numbered SOLUTION TRAJECTORY of steps, and a final "
        "OVERALL PERFORMANCE SCORE.\n"
        "\n"
        "YOUR TASK: Attribute the contribution of each step in the trajectory to the "
        "final score based on the following rules.\n"
        "\n"
        "EVALUATION RULES:\n"
        "- If Score is POSITIVE >0:\n"
        "  - GOOD: The step contributed positively to the solution.\n"
        "  - BAD: The step was irrelevant, neutral, or detrimental.\n"
        "- If Score is NEGATIVE <=0:\n"
        "  - GOOD: The step only if it actively corrected or mitigated an error.\n"
        "  - BAD: The step introduced, propagated, or failed to fix an error.\n"
        "\n"
        "FOCUS: Evaluate strictly on the technical impact of each step's action. Ignore "
        "superficial elements like politeness. Reply in the required format only.";

    std::ostringstream user;
    user << "TASK DESCRIPTION\n" << task.query << "\n\n";
    user << "SOLUTION TRAJECTORY (total " << traj.steps.size() << " steps)\n";
    for (const Step& s : traj.steps) {
        user << ">>> EVAL-STEP " << s.index << " <<<\n";
        user << "<ACTION> " << s.action << " <END>\n";
        user << "<OBSERVATION> " << s.observation << " <END>\n";
    }
    user << "\nOVERALL PERFORMANCE SCORE " << format_score(outcome_score) << "\n\n";
    user << "REQUIRED OUTPUT FORMAT:\n";
    user << "Step 0 Analysis: <your reasoning>\n";
    user << "Step 0 Judgment: GOOD/BAD\n";
    user << "[...continue for all steps...]\n";
    prompt.user_text = user.str();
    return prompt;
}

std::vector<AttributionLabel> parse_attribution(const std::string& response, int n_steps) {
    if (n_steps < 1) throw std::invalid_argument("parse_attribution: n_steps must be >= 1");

    static const std::regex judgment_re(R"(Step\s+(\d+)\s+Judgment:\s*(good|bad))",
                                        std::regex::icase);
    static const std::regex analysis_re(R"(Step\s+(\d+)\s+Analysis:\s*(.*))",
                                        std::regex::icase);

    std::map<int, std::string> rationales;
    std::map<int, AttrLabel> labels;
    std::istringstream in(response);
    std::string line;
    while (std::getline(in, line)) {
        std::smatch m;
        if (std::regex_search(line, m, analysis_re)) {
            rationales[std::stoi(m[1])] = m[2];
        } else if (std::regex_search(line, m, judgment_re)) {
            int idx = std::stoi(m[1]);
            std::string word = m[2];
            for (char& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            if (labels.count(idx))
                throw AttributionParseError("duplicate judgment for step " + std::to_string(idx),
                                            idx);
            labels[idx] = word == "good" ? AttrLabel::GOOD : AttrLabel::BAD;
        }
    }

    for (const auto& [idx, label] : labels) {
        if (idx < 0 || idx >= n_steps)
            throw AttributionParseError("judgment for out-of-range step " + std::to_string(idx),
                                        idx);
    }
    std::vector<AttributionLabel> out;
    for (int i = 0; i < n_steps; ++i) {
        auto it = labels.find(i);
        if (it == labels.end())
            throw AttributionParseError("missing judgment for step " + std::to_string(i), i);
        AttributionLabel label;
        label.step_index = i;
        label.label = it->second;
        auto rat = rationales.find(i);
        if (rat != rationales.end()) label.rationale = rat->second;
        out.push_back(std::move(label));
    }
    return out;
}

std::vector<AttributionLabel> attribute_trajectory(const Task& task, const Trajectory& traj,
                                                   double outcome_score, Gateway& model) {
    AttributionPrompt prompt = build_attribution_prompt(task, traj, outcome_score);
    CompletionRequest req;
    req.tag = Tag::attribute;
    req.temperature = 0.0;
    req.messages = {{"system", prompt.system_text}, {"user", prompt.user_text}};

    const int n_steps = static_cast<int>(traj.steps.size());
    for (int attempt = 0; attempt < 2; ++attempt) {
        try {
            return parse_attribution(model.complete(req).text, n_steps);
        } catch (const AttributionParseError&) {
            if (attempt == 0) continue;
            // conservative fallback: keep the trajectory, bias against it
            std::vector<AttributionLabel> fallback;
            for (int i = 0; i < n_steps; ++i)
                fallback.push_back({i, AttrLabel::BAD, "attribution parse failure"});
            return fallback;
        }
    }
    return {};
}

std::vector<double> quantify(const std::vector<AttributionLabel>& labels,
                             const LabelMapping& mapping) {
    if (!std::isfinite(mapping.good) || !std::isfinite(mapping.bad))
        throw std::invalid_argument("quantify: mapping values must be finite");
    std::vector<double> out;
    out.reserve(labels.size());
    for (const AttributionLabel& l : labels)
        out.push_back(l.label == AttrLabel::GOOD ? mapping.good : mapping.bad);
    return out;
}

std::vector<std::vector<double>> standardize_attribution(
    const std::vector<std::vector<double>>& group_series, StandardizeMode mode, double eps) {
    if (group_series.empty())
        throw std::invalid_argument("standardize_attribution: empty group");

    double mu = 0.0, sigma = 0.0;
    if (mode == StandardizeMode::trajectory_level) {
        std::vector<double> means;
        means.reserve(group_series.size());
        for (const auto& series : group_series) means.push_back(mean_of(series));
        mu = mean_of(means);
        sigma = pop_sigma(means, mu);
    } else {
        std::vector<double> pooled;
        for (const auto& series : group_series)
            pooled.insert(pooled.end(), series.begin(), series.end());
        mu = mean_of(pooled);
        sigma = pop_sigma(pooled, mu);
    }

    std::vector<std::vector<double>> out(group_series.size());
    for (size_t i = 0; i < group_series.size(); ++i) {
        out[i].resize(group_series[i].size(), 0.0);
        if (sigma < kNeutralizeSigma) continue;  // degenerate channel neutralized
        for (size_t t = 0; t < group_series[i].size(); ++t)
            out[i][t] = (group_series[i][t] - mu) / (sigma + eps);
    }
    return out;
}

std::vector<double> standardize_outcome(const std::vector<double>& outcome_rewards, double eps) {
    if (outcome_rewards.empty())
        throw std::invalid_argument("standardize_outcome: empty group");
    double mu = mean_of(outcome_rewards);
    double sigma = pop_sigma(outcome_rewards, mu);
    std::vector<double> out(outcome_rewards.size(), 0.0);
    if (sigma < kNeutralizeSigma) return out;
    for (size_t i = 0; i < outcome_rewards.size(); ++i)
        out[i] = (outcome_rewards[i] - mu) / (sigma + eps);
    return out;
}

std::vector<double> fuse(const std::vector<double>& attr_hat, double outcome_hat, double alpha) {
    if (alpha < 0.0) throw std::invalid_argument("fuse: alpha must be >= 0");
    std::vector<double> out(attr_hat.size(), 0.0);
    for (size_t t = 0; t < attr_hat.size(); ++t) out[t] = alpha * attr_hat[t];
    if (!out.empty()) out.back() += outcome_hat;  // terminal step only
    return out;
}

std::vector<double> advantage(const std::vector<double>& fused) {
    std::vector<double> out(fused.size(), 0.0);
    double suffix = 0.0;
    for (size_t t = fused.size(); t-- > 0;) {
        suffix += fused[t];
        out[t] = suffix;
    }
    return out;
}

TokenAdvantage broadcast_tokens(const std::vector<double>& step_advantages,
                                const std::vector<TokenSpan>& spans, int n_tokens) {
    if (step_advantages.size() != spans.size())
        throw std::invalid_argument("broadcast_tokens: advantage/span count mismatch");
    TokenAdvantage out;
    out.values.assign(static_cast<size_t>(n_tokens), 0.0);
    out.mask.assign(static_cast<size_t>(n_tokens), false);
    int prev_end = 0;
    for (size_t t = 0; t < spans.size(); ++t) {
        const TokenSpan& span = spans[t];
        if (span.start < prev_end)
            throw std::invalid_argument("broadcast_tokens: overlapping or unordered spans");
        if (span.start >= span.end || span.end > n_tokens)
            throw std::invalid_argument("broadcast_tokens: span outside token stream");
        for (int j = span.start; j < span.end; ++j) {
            out.values[static_cast<size_t>(j)] = step_advantages[t];
            out.mask[static_cast<size_t>(j)] = true;
        }
        prev_end = span.end;
    }
    return out;
}

void append_attribution_record(const std::string& path, const AttributionRecord& record) {
    nlohmann::json j;
    j["trajectory_id"] = record.trajectory_id;
    std::ostringstream digest;
    digest << std::hex << record.prompt_digest;
    j["prompt_hash"] = digest.str();
    j["labels"] = record.labels;
    j["rationales"] = record.rationales;
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out << j.dump() << '\n';
}

}  // namespace evolver
