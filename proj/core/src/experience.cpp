#include "evolver/experience.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include "evolver/optimizer.hpp"
#include "evolver/policy_backend.hpp"
#include "evolver/serialize.hpp"
#include "evolver/tokenize.hpp"

#include "json.hpp"

namespace evolver {

ExperiencePool::ExperiencePool(int embedding_dim) : embedding_dim_(embedding_dim) {}

ExperiencePool::ExperiencePool(ExperiencePool&& other) noexcept {
    std::lock_guard<std::mutex> lock(other.mu_);
    experiences_ = std::move(other.experiences_);
    embedding_dim_ = other.embedding_dim_;
}

ExperiencePool& ExperiencePool::operator=(ExperiencePool&& other) noexcept {
    if (this != &other) {
        std::scoped_lock lock(mu_, other.mu_);
        experiences_ = std::move(other.experiences_);
        embedding_dim_ = other.embedding_dim_;
    }
    return *this;
}

void ExperiencePool::insert(Experience experience) {
    auto violations = validate_experience(experience);
    if (!violations.empty())
        throw std::invalid_argument("experience rejected: " + violations.front());
    if (static_cast<int>(experience.embedding.size()) != embedding_dim_)
        throw std::invalid_argument("experience rejected: embedding dim mismatch");
    if (!experience.validated)
        throw std::invalid_argument("experience rejected: not validated");
    std::lock_guard<std::mutex> lock(mu_);
    for (const Experience& e : experiences_)
        if (e.id == experience.id)
            throw std::invalid_argument("experience rejected: duplicate id " + experience.id);
    experiences_.push_back(std::move(experience));
}

std::vector<Experience> ExperiencePool::all() const {
    std::lock_guard<std::mutex> lock(mu_);
    return experiences_;
}

size_t ExperiencePool::size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return experiences_.size();
}

void ExperiencePool::save(const std::string& jsonl_path, const std::string& meta_path) const {
    std::vector<Experience> snapshot = all();
    write_jsonl(jsonl_path, snapshot);
    std::ifstream in(jsonl_path, std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ostringstream checksum;
    checksum << std::hex << fnv1a(content);
    nlohmann::json meta{{"embedding_dim", embedding_dim_},
                        {"count", snapshot.size()},
                        {"checksum", checksum.str()}};
    std::ofstream out(meta_path, std::ios::binary);
    out << meta.dump(2) << '\n';
}

ExperiencePool ExperiencePool::load(const std::string& jsonl_path) {
    std::vector<Experience> records = read_jsonl<Experience>(jsonl_path);
    int dim = records.empty() ? kDefaultEmbeddingDim
                              : static_cast<int>(records.front().embedding.size());
    ExperiencePool pool(dim);
    for (Experience& e : records) pool.insert(std::move(e));
    return pool;
}

RolloutPlan plan_rollout_mix(int n, double eta) {
    if (n < 1) throw std::invalid_argument("plan_rollout_mix: N must be >= 1");
    if (eta < 0.0 || eta > 1.0) throw std::invalid_argument("plan_rollout_mix: eta outside [0,1]");
    RolloutPlan plan;
    plan.n_total = n;
    plan.eta = eta;
    // extended precision keeps floor(eta*N) exact for every representable eta
    plan.n_experience = static_cast<int>(
        std::floor(static_cast<long double>(eta) * static_cast<long double>(n)));
    plan.n_vanilla = n - plan.n_experience;
    return plan;
}

std::string inject_experience(const std::string& system_prompt, const Experience& exp,
                              const std::string& query) {
    if (exp.content.find("<EXP>") != std::string::npos ||
        exp.content.find("</EXP>") != std::string::npos)
        throw InjectionError("experience content contains a literal <EXP> marker");
    return system_prompt + "<EXP>" + exp.content + "</EXP>" + query;
}

TrainingSample strip_experience(const TrainingSample& sample) {
    std::optional<size_t> exp_index;
    for (size_t i = 0; i < sample.messages.size(); ++i) {
        const std::string& text = sample.messages[i].text;
        if (text.find("<EXP>") != std::string::npos &&
            text.find("</EXP>") != std::string::npos) {
            exp_index = i;
            break;
        }
    }
    if (!exp_index) throw StripError("no <EXP> markers present; sample mislabeled");
    std::vector<Message> kept;
    for (size_t i = 0; i < sample.messages.size(); ++i)
        if (i != *exp_index) kept.push_back(sample.messages[i]);
    // re-deriving indices keeps spans, masks and offsets aligned
    TrainingSample stripped = sample_from_messages(kept);
    // preserve the merge-time mask alignment for the surviving messages
    size_t removed_tokens = static_cast<size_t>(sample.messages[*exp_index].token_count);
    size_t removed_start = static_cast<size_t>(sample.message_first_token[*exp_index]);
    for (size_t t = 0; t < stripped.loss_mask.size(); ++t) {
        size_t original = t < removed_start ? t : t + removed_tokens;
        if (original < sample.loss_mask.size())
            stripped.loss_mask[t] = sample.loss_mask[original];
    }
    return stripped;
}

std::vector<Experience> retrieve_candidates(const std::vector<double>& query_embedding,
                                            const ExperiencePool& pool, int k) {
    if (k < 1) throw std::invalid_argument("retrieve: k must be >= 1");
    std::vector<Experience> all = pool.all();
    if (all.empty()) throw std::invalid_argument("retrieve: pool is empty");
    std::vector<std::pair<double, size_t>> scored;
    scored.reserve(all.size());
    for (size_t i = 0; i < all.size(); ++i)
        scored.emplace_back(cosine(query_embedding, all[i].embedding), i);
    std::stable_sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return all[a.second].id < all[b.second].id;  // tie-break: ascending id
    });
    std::vector<Experience> out;
    for (size_t i = 0; i < std::min<size_t>(static_cast<size_t>(k), scored.size()); ++i)
        out.push_back(all[scored[i].second]);
    return out;
}

std::vector<Experience> retrieve(const std::string& query, const ExperiencePool& pool, int k,
                                 Gateway& model) {
    std::vector<Experience> candidates = retrieve_candidates(model.embed(query), pool, k);

    std::ostringstream prompt;
    prompt << "EXPERIENCE REFINEMENT\n";
    prompt << "QUERY: " << query << "\n";
    for (size_t i = 0; i < candidates.size(); ++i)
        prompt << "CAND " << i << ": WHEN " << candidates[i].when_to_use << " | CONTENT "
               << candidates[i].content << "\n";
    prompt << "REQUIRED OUTPUT FORMAT:\n";
    prompt << "ORDER: <comma-separated candidate indices, best first>\n";
    prompt << "REWRITE <i>: <optional rewritten content>\n";

    CompletionRequest req;
    req.tag = Tag::refine;
    req.temperature = 0.0;
    req.messages = {{"user", prompt.str()}};
    std::string response = model.complete(req).text;

    static const std::regex order_re(R"(ORDER: ([0-9, ]+))");
    std::smatch m;
    std::vector<Experience> out;
    if (std::regex_search(response, m, order_re)) {
        std::istringstream in(m[1]);
        std::string token;
        while (std::getline(in, token, ',')) {
            size_t idx = static_cast<size_t>(std::stoul(normalize_whitespace(token)));
            if (idx < candidates.size()) out.push_back(candidates[idx]);
        }
    }
    if (out.empty()) out = candidates;  // unusable refinement keeps the similarity order

    static const std::regex rewrite_re(R"(REWRITE (\d+): (.*))");
    auto begin = std::sregex_iterator(response.begin(), response.end(), rewrite_re);
    for (auto it = begin; it != std::sregex_iterator(); ++it) {
        size_t idx = static_cast<size_t>(std::stoul((*it)[1]));
        for (Experience& e : out)
            if (e.id == candidates[idx].id && (*it)[2].length() > 0) e.content = (*it)[2];
    }
    if (out.size() > static_cast<size_t>(k)) out.resize(static_cast<size_t>(k));
    return out;
}

namespace {

struct PoolRollout {
    Trajectory trajectory;
    std::string initial_observation;
    double score = 0.0;
};

std::string render_rollout(const PoolRollout& rollout, char label) {
    std::ostringstream out;
    out << "TRAJECTORY " << label << " (score " << rollout.score << "):\n";
    out << "CONTEXT: " << rollout.initial_observation << "\n";
    for (const Step& s : rollout.trajectory.steps)
        out << "STEP " << s.index << ": ACTION " << s.action << " / OBS " << s.observation
            << "\n";
    return out.str();
}

std::vector<std::pair<std::string, std::string>> parse_experiences(const std::string& response) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(response);
    std::string line;
    std::string when, content;
    auto flush = [&] {
        if (!when.empty() || !content.empty()) out.emplace_back(when, content);
        when.clear();
        content.clear();
    };
    while (std::getline(in, line)) {
        if (line == "EXPERIENCE") flush();
        else if (line.rfind("WHEN: ", 0) == 0) when = line.substr(6);
        else if (line.rfind("CONTENT: ", 0) == 0) content = line.substr(9);
    }
    flush();
    return out;
}

bool validate_with_model(const std::string& when, const std::string& content, Gateway& model) {
    CompletionRequest req;
    req.tag = Tag::validate;
    req.temperature = 0.0;
    req.messages = {{"user", "EXPERIENCE VALIDATION\nWHEN: " + when +
                                 "\nCONTENT: " + content +
                                 "\nREQUIRED OUTPUT FORMAT:\nVERDICT: PASS|FAIL\nREASON: "
                                 "<text>\n"}};
    std::string response = model.complete(req).text;
    return response.find("VERDICT: PASS") != std::string::npos;
}

}  // namespace

ExperiencePool build_pool(const std::vector<Task>& tasks, const PolicySnapshot& policy,
                          const std::function<std::unique_ptr<Environment>()>& env_factory,
                          int n_pc, Gateway& model, const BuildPoolOptions& options) {
    if (n_pc < 1) throw std::invalid_argument("build_pool: N_pc must be >= 1");

    ExperiencePool pool(options.embedding_dim);
    int next_id = 0;

    auto add_candidates = [&](const std::string& response, Provenance provenance) {
        for (const auto& [when, content] : parse_experiences(response)) {
            if (!validate_with_model(when, content, model)) continue;
            Experience exp;
            exp.id = "exp-" + std::to_string(next_id++);
            exp.when_to_use = when;
            exp.content = content;
            exp.embedding = model.embed(when);
            exp.provenance = provenance;
            exp.validated = true;
            if (!validate_experience(exp).empty()) continue;  // e.g. empty fields
            pool.insert(std::move(exp));
        }
    };

    PolicySnapshot rollout_policy = policy;
    rollout_policy.temperature = options.temperature;

    for (const Task& task : tasks) {
        std::vector<PoolRollout> rollouts;
        for (int i = 0; i < n_pc; ++i) {
            PoolRollout rollout;
            try {
                std::unique_ptr<Environment> env = env_factory();
                rollout.initial_observation = env->state();
                std::string obs = rollout.initial_observation;
                Trajectory& traj = rollout.trajectory;
                traj.id = "pool-" + task.id + "-" + std::to_string(i);
                traj.task_id = task.id;
                int tokens = 0;
                bool terminal = false;
                const std::vector<std::string> vocab = env->action_vocabulary();
                for (int t = 0; t < options.max_steps; ++t) {
                    std::string key = policy_state_key(task.query, obs);
                    uint64_t rng = splitmix64(options.seed ^ fnv1a(traj.id) ^
                                              static_cast<uint64_t>(t));
                    int action_id = policy_sample(rollout_policy, key, rng);
                    const std::string& action = vocab[static_cast<size_t>(action_id)];
                    StepOutcome outcome = env->step(action);
                    Step step;
                    step.index = t;
                    step.action = action;
                    step.observation = outcome.observation;
                    int action_tokens = static_cast<int>(count_tokens(action));
                    step.token_span = {tokens, tokens + action_tokens};
                    tokens += action_tokens + static_cast<int>(count_tokens(outcome.observation));
                    traj.steps.push_back(step);
                    obs = outcome.observation;
                    if (outcome.done) {
                        terminal = true;
                        break;
                    }
                }
                traj.terminal = terminal;
                traj.truncated = !terminal;
            } catch (const std::exception&) {
                continue;  // rollout failed to execute; skip it
            }
            rollouts.push_back(std::move(rollout));
        }
        if (rollouts.empty()) continue;  // task skipped, pool still returned

        // judge each rollout to split success from failure
        for (PoolRollout& r : rollouts) {
            std::ostringstream user;
            user << "TASK: " << task.query << "\n";
            user << "REFERENCE STEPS (total " << task.reference_solution.size() << "):\n";
            for (size_t i = 0; i < task.reference_solution.size(); ++i)
                user << "REF-STEP " << i << ": ACTION " << task.reference_solution[i].action
                     << " | EXPECT " << task.reference_solution[i].observation_summary << "\n";
            user << "AGENT TRAJECTORY (total " << r.trajectory.steps.size() << " steps):\n";
            for (const Step& s : r.trajectory.steps) {
                user << ">>> EVAL-STEP " << s.index << " <<<\n";
                user << "<ACTION> " << s.action << " <END>\n";
                user << "<OBSERVATION> " << s.observation << " <END>\n";
            }
            user << "REQUIRED OUTPUT FORMAT:\nRELEVANCE: PASS|FAIL\nCOVERED: "
                    "<indices|NONE>\nSCORE: <0..1>\nRATIONALE: <text>\n";
            CompletionRequest req;
            req.tag = Tag::judge;
            req.temperature = 0.0;
            req.messages = {{"user", user.str()}};
            static const std::regex score_re(R"(SCORE: ([0-9.]+))");
            std::smatch m;
            std::string response = model.complete(req).text;
            r.score = std::regex_search(response, m, score_re) ? std::stod(m[1]) : 0.0;
            r.trajectory.outcome_reward = r.score;
        }

        std::vector<const PoolRollout*> successes, failures;
        for (const PoolRollout& r : rollouts)
            (r.score >= options.success_threshold ? successes : failures).push_back(&r);
        std::stable_sort(successes.begin(), successes.end(),
                         [](const PoolRollout* a, const PoolRollout* b) {
                             return a->score > b->score;
                         });

        auto call_extract = [&](const std::string& group,
                                std::vector<const PoolRollout*> members) -> std::string {
            std::ostringstream prompt;
            prompt << "EXPERIENCE EXTRACTION\n";
            prompt << "GROUP: " << group << "\n";
            prompt << "TASK: " << task.query << "\n";
            char label = 'A';
            for (const PoolRollout* r : members) {
                prompt << render_rollout(*r, label);
                ++label;
                if (label > 'B') break;  // two trajectories are enough context
            }
            CompletionRequest req;
            req.tag = Tag::extract;
            req.temperature = 0.0;
            req.messages = {{"user", prompt.str()}};
            return model.complete(req).text;
        };

        if (!successes.empty())
            add_candidates(call_extract("success", successes), Provenance::success);
        if (!failures.empty())
            add_candidates(call_extract("failure", failures), Provenance::failure);
        if (!successes.empty() && !failures.empty())
            add_candidates(call_extract("comparative", {successes.front(), failures.front()}),
                           Provenance::comparative);
    }
    return pool;
}

}  // namespace evolver
