#include "evolver/questioning.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <set>
#include <sstream>

#include "evolver/tokenize.hpp"

namespace evolver {

namespace {

constexpr int kObsTruncationTokens = 512;
constexpr double kSuccessBandLow = 0.6;
constexpr double kFailureBandHigh = 0.4;

std::set<std::string> token_set(const std::string& text) {
    std::set<std::string> out;
    for (const Token& t : tokenize(text)) {
        if (!std::isalnum(static_cast<unsigned char>(t.text[0])) && t.text[0] != '_')
            continue;  // punctuation separates, it does not participate
        std::string folded = t.text;
        for (char& c : folded) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        out.insert(folded);
    }
    return out;
}

std::string truncate_tokens(const std::string& text, int limit) {
    auto toks = tokenize(text);
    if (static_cast<int>(toks.size()) <= limit) return text;
    return text.substr(0, toks[static_cast<size_t>(limit)].begin);
}

std::string render_profile(const EnvironmentProfile& profile) {
    std::ostringstream out;
    out << "ENVIRONMENT PROFILE:\n";
    for (const auto& e : profile.entities)
        out << "ENTITY " << e.name << ": " << e.description << "\n";
    for (const auto& a : profile.attributes)
        out << "ATTRIBUTE " << a.name << " (of " << a.entity << "): " << a.description << "\n";
    for (const auto& o : profile.operations)
        out << "OPERATION " << o.name << ": " << o.description << "\n";
    return out.str();
}

std::string render_distilled(const Trajectory& traj) {
    std::ostringstream out;
    for (const Step& s : traj.steps)
        out << "STEP " << s.index << ": ACTION " << s.action << " / OBS "
            << truncate_tokens(s.observation, kObsTruncationTokens) << "\n";
    return out.str();
}

}  // namespace

Trajectory explore(EnvSession& env, const EnvironmentProfile& profile,
                   const ExplorationConfig& cfg, Gateway& model,
                   const std::string& session_label) {
    if (cfg.n_breadth < 0 || cfg.n_depth_window < 1 || cfg.max_steps < cfg.n_breadth)
        throw std::invalid_argument("explore: invalid exploration config");

    Trajectory traj;
    traj.id = "explore-" + session_label;
    traj.truncated = true;  // flipped when the environment terminates the episode
    if (cfg.max_steps == 0) return traj;

    std::vector<std::string> observations;  // observation i = result of step i; 0 = initial
    std::set<std::string> visited_entities;
    int tokens = 0;

    auto note_entities = [&](const std::string& obs) {
        for (const auto& e : profile.entities)
            if (obs.find(e.name) != std::string::npos) visited_entities.insert(e.name);
    };

    try {
        observations.push_back(env.state());
    } catch (const std::exception&) {
        return traj;
    }
    note_entities(observations[0]);

    for (int t = 1; t <= cfg.max_steps; ++t) {  // 1-based step count
        bool breadth = t <= cfg.n_breadth;

        std::ostringstream system;
        system << "You are exploring an unknown environment to map out what it supports.\n";
        if (!session_label.empty()) system << "SESSION: " << session_label << "\n";
        system << render_profile(profile);
        if (breadth) {
            system << "MODE: BREADTH\n";
            system << "UNVISITED ENTITIES: ";
            std::string unvisited;
            for (const auto& e : profile.entities) {
                if (visited_entities.count(e.name)) continue;
                if (!unvisited.empty()) unvisited += ", ";
                unvisited += e.name;
            }
            system << (unvisited.empty() ? "NONE" : unvisited) << "\n";
        } else {
            system << "MODE: DEPTH\n";
        }

        std::ostringstream user;
        user << "STEP " << t << "\n";
        user << "RECENT OBSERVATIONS:\n";
        int first = breadth ? 0 : std::max(0, t - cfg.n_depth_window);
        for (int j = first; j <= t - 1; ++j)
            user << "OBS " << j << ": " << observations[static_cast<size_t>(j)] << "\n";
        user << "Reply with exactly one action.\n";

        CompletionRequest req;
        req.tag = Tag::explore;
        req.temperature = cfg.temperature;
        req.messages = {{"system", system.str()}, {"user", user.str()}};

        std::string action;
        StepOutcome outcome;
        try {
            action = normalize_whitespace(model.complete(req).text);
            outcome = env.step(action);
        } catch (const std::exception&) {
            return traj;  // partial trajectory, truncated=true
        }

        Step step;
        step.index = t - 1;
        step.action = action;
        step.observation = outcome.observation;
        int action_tokens = static_cast<int>(count_tokens(action));
        step.token_span = {tokens, tokens + action_tokens};
        tokens += action_tokens + static_cast<int>(count_tokens(outcome.observation));
        traj.steps.push_back(step);

        observations.push_back(outcome.observation);
        note_entities(outcome.observation);
        if (outcome.done) {
            traj.terminal = true;
            traj.truncated = false;
            break;
        }
    }
    return traj;
}

Task synthesize_task(const Trajectory& traj, const UserPreference& pref, Gateway& model) {
    if (traj.steps.empty()) throw std::invalid_argument("synthesize_task: empty trajectory");

    std::ostringstream user;
    user << "TASK SYNTHESIS\n";
    user << "EXPLORATION TRAJECTORY:\n" << render_distilled(traj);
    user << "USER PREFERENCES:\n";
    user << "difficulty: level=" << to_string(pref.difficulty.level)
         << " entities=" << pref.difficulty.n_entities
         << " attributes=" << pref.difficulty.n_attributes
         << " operations=" << pref.difficulty.n_operations << "\n";
    user << "style: " << pref.style_rubric << "\n";
    user << "REQUIRED OUTPUT FORMAT:\nQUERY: <one task query>\n";

    CompletionRequest req;
    req.tag = Tag::synthesize;
    req.temperature = 1.0;
    req.messages = {{"user", user.str()}};
    std::string response = model.complete(req).text;

    static const std::regex query_re(R"(QUERY: (.+))");
    std::smatch m;
    if (!std::regex_search(response, m, query_re) || m[1] == "NONE")
        throw SynthesisError("no usable QUERY line in synthesis output", response);

    Task task;
    task.query = normalize_whitespace(m[1].str());
    std::ostringstream id;
    id << "task-" << std::hex << fnv1a(task.query);
    task.id = id.str();
    task.difficulty = pref.difficulty;
    task.origin = TaskOrigin::synthetic;
    task.embedding = model.embed(task.query);
    return task;
}

std::vector<SolutionStep> extract_reference_solution(const Trajectory& traj, const Task& task,
                                                     Gateway& model) {
    if (traj.steps.empty())
        throw std::invalid_argument("extract_reference_solution: empty trajectory");

    std::ostringstream user;
    user << "REFERENCE SOLUTION EXTRACTION\n";
    user << "TASK: " << task.query << "\n";
    user << "TRAJECTORY (total " << traj.steps.size() << " steps):\n";
    user << render_distilled(traj);
    user << "REQUIRED OUTPUT FORMAT (one line per essential step, ascending):\n";
    user << "STEP <i>: <short observation summary>\n";

    CompletionRequest req;
    req.tag = Tag::extract;
    req.temperature = 0.0;
    req.messages = {{"user", user.str()}};
    std::string response = model.complete(req).text;

    static const std::regex step_re(R"(STEP (\d+): (.*))");
    std::vector<SolutionStep> solution;
    int prev = -1;
    std::istringstream in(response);
    std::string line;
    while (std::getline(in, line)) {
        std::smatch m;
        if (!std::regex_match(line, m, step_re)) continue;
        int idx = std::stoi(m[1]);
        if (idx < 0 || idx >= static_cast<int>(traj.steps.size()))
            throw ExtractionError("extraction cites step " + std::to_string(idx) +
                                  " outside the trajectory");
        if (idx <= prev) throw ExtractionError("extraction indices not ascending");
        prev = idx;
        solution.push_back({traj.steps[static_cast<size_t>(idx)].action, m[2]});
    }
    return solution;
}

double lexical_similarity(const std::string& a, const std::string& b) {
    std::set<std::string> sa = token_set(a);
    std::set<std::string> sb = token_set(b);
    if (sa.empty() && sb.empty()) return 1.0;  // equal (empty) token sets
    size_t inter = 0;
    for (const std::string& t : sa) inter += sb.count(t);
    size_t uni = sa.size() + sb.size() - inter;
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

CurationDecision AcceptedCorpus::try_accept(const Task& candidate, const CurationConfig& cfg) {
    std::lock_guard<std::mutex> lock(mu_);
    for (const Task& accepted : tasks_) {
        double lex = lexical_similarity(candidate.query, accepted.query);
        if (lex > cfg.lexical_threshold) {
            std::ostringstream reason;
            reason << "lexical duplicate of " << accepted.id << " (score " << lex << ")";
            return {false, reason.str()};
        }
    }
    if (candidate.embedding) {
        for (const Task& accepted : tasks_) {
            if (!accepted.embedding) continue;
            double sem = cosine(*candidate.embedding, *accepted.embedding);
            if (sem > cfg.semantic_threshold) {
                std::ostringstream reason;
                reason << "semantic duplicate of " << accepted.id << " (score " << sem << ")";
                return {false, reason.str()};
            }
        }
    }
    tasks_.push_back(candidate);
    return {true, ""};
}

std::vector<Task> AcceptedCorpus::tasks() const {
    std::lock_guard<std::mutex> lock(mu_);
    return tasks_;
}

size_t AcceptedCorpus::size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return tasks_.size();
}

CurationDecision curate_realtime(const Task& candidate, AcceptedCorpus& corpus,
                                 const CurationConfig& cfg) {
    return corpus.try_accept(candidate, cfg);
}

std::vector<Task> curate_post(const std::vector<Task>& tasks,
                              const std::function<std::unique_ptr<Environment>()>& env_factory,
                              const CurationConfig& cfg) {
    // lexical dedup across the batch; between mutual duplicates the earlier
    // lexicographic id survives
    std::vector<Task> deduped;
    for (const Task& candidate : tasks) {
        bool duplicate = false;
        for (Task& kept : deduped) {
            if (lexical_similarity(candidate.query, kept.query) > cfg.lexical_threshold) {
                duplicate = true;
                if (candidate.id < kept.id) kept = candidate;
                break;
            }
        }
        if (!duplicate) deduped.push_back(candidate);
    }

    if (!cfg.feasibility_required) return deduped;

    std::vector<Task> accepted;
    for (const Task& task : deduped) {
        bool feasible = true;
        std::unique_ptr<Environment> env = env_factory();  // batch error propagates
        for (const SolutionStep& step : task.reference_solution) {
            StepOutcome outcome = env->step(step.action);
            auto err = outcome.info.find("error");
            if (err != outcome.info.end() && err->second == "unknown_operation") {
                feasible = false;  // hallucinated operation: hard failure
                break;
            }
            if (outcome.done) break;  // solved early; remaining steps are moot
        }
        if (feasible) accepted.push_back(task);
    }
    return accepted;
}

HybridSampler::HybridSampler(std::vector<Task> target, std::vector<Task> synthetic,
                             double lambda, uint64_t seed, double decay)
    : target_(std::move(target)),
      synthetic_(std::move(synthetic)),
      lambda_(lambda),
      seed_(seed),
      decay_(decay) {
    if (lambda <= 0.0 || lambda > 1.0)
        throw std::invalid_argument("hybrid_sampler: lambda outside (0,1]");
    if (synthetic_.empty()) throw std::invalid_argument("hybrid_sampler: synthetic pool empty");
}

HybridDraw HybridSampler::next() {
    uint64_t r1 = splitmix64(seed_ ^ (counter_ * 2 + 1));
    uint64_t r2 = splitmix64(seed_ ^ (counter_ * 2 + 2));
    ++counter_;
    double u = static_cast<double>(r1 >> 11) * 0x1.0p-53;
    bool synthetic = target_.empty() || u < lambda_;
    const std::vector<Task>& pool = synthetic ? synthetic_ : target_;
    const Task& task = pool[r2 % pool.size()];
    HybridDraw draw;
    draw.task = task;
    draw.synthetic = synthetic;
    if (synthetic) draw.advantage_decay = decay_;
    return draw;
}

JudgeVerdict judge(const Task& task, const Trajectory& traj, Gateway& model) {
    if (task.origin == TaskOrigin::synthetic && task.reference_solution.empty())
        throw std::invalid_argument("judge: synthetic task without reference solution");

    std::ostringstream user;
    user << "TASK: " << task.query << "\n";
    user << "REFERENCE STEPS (total " << task.reference_solution.size() << "):\n";
    for (size_t i = 0; i < task.reference_solution.size(); ++i)
        user << "REF-STEP " << i << ": ACTION " << task.reference_solution[i].action
             << " | EXPECT " << task.reference_solution[i].observation_summary << "\n";
    user << "AGENT TRAJECTORY (total " << traj.steps.size() << " steps):\n";
    for (const Step& s : traj.steps) {
        user << ">>> EVAL-STEP " << s.index << " <<<\n";
        user << "<ACTION> " << s.action << " <END>\n";
        user << "<OBSERVATION> " << s.observation << " <END>\n";
    }
    user << "REQUIRED OUTPUT FORMAT:\nRELEVANCE: PASS|FAIL\nCOVERED: <indices|NONE>\nSCORE: "
            "<0..1>\nRATIONALE: <text>\n";

    CompletionRequest req;
    req.tag = Tag::judge;
    req.temperature = 0.0;
    req.messages = {{"system",
                     "You are a strict evaluator of agent task completion. Gate first on "
                     "relevance and repetition, then score continuously: correct solutions land "
                     "in the high range, incorrect attempts in the low range, graded by step "
                     "efficiency and intermediate errors. Check coverage of every essential "
                     "reference step, directly or through functionally equivalent alternatives."},
                    {"user", user.str()}};

    static const std::regex relevance_re(R"(RELEVANCE: (PASS|FAIL))");
    static const std::regex covered_re(R"(COVERED: ([0-9, ]+|NONE))");
    static const std::regex score_re(R"(SCORE: (-?[0-9.]+))");
    static const std::regex rationale_re(R"(RATIONALE: (.*))");

    for (int attempt = 0; attempt < 2; ++attempt) {
        std::string response = model.complete(req).text;
        std::smatch rel, cov, sc, rat;
        bool ok = std::regex_search(response, rel, relevance_re) &&
                  std::regex_search(response, sc, score_re);
        if (!ok) continue;

        JudgeVerdict verdict;
        verdict.relevance_pass = rel[1] == "PASS";
        if (std::regex_search(response, rat, rationale_re)) verdict.rationale = rat[1];
        if (std::regex_search(response, cov, covered_re) && cov[1] != "NONE") {
            std::istringstream in(cov[1]);
            std::string tok;
            while (std::getline(in, tok, ',')) {
                tok = normalize_whitespace(tok);
                if (!tok.empty()) verdict.covered_reference_steps.push_back(std::stoi(tok));
            }
        }
        if (!verdict.relevance_pass) {
            verdict.score = 0.0;
            return verdict;
        }
        double raw = std::stod(sc[1]);
        bool full_coverage =
            verdict.covered_reference_steps.size() == task.reference_solution.size();
        // clamp into the band the coverage implies
        verdict.score = full_coverage ? std::clamp(raw, kSuccessBandLow, 1.0)
                                      : std::clamp(raw, 0.0, kFailureBandHigh);
        return verdict;
    }

    JudgeVerdict fallback;
    fallback.score = 0.0;
    fallback.relevance_pass = false;
    fallback.rationale = "judge parse failure";
    return fallback;
}

}  // namespace evolver
