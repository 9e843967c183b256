#include "evolver/context.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

#include "evolver/optimizer.hpp"
#include "evolver/policy_backend.hpp"
#include "evolver/tokenize.hpp"

#include "json.hpp"

namespace evolver {

const char* to_string(Role role) {
    switch (role) {
        case Role::llm: return "llm";
        case Role::environment: return "environment";
        case Role::memory: return "memory";
        case Role::system: return "system";
        default: return "user";
    }
}

const char* to_string(CmtKind kind) {
    switch (kind) {
        case CmtKind::basic_causal: return "basic_causal";
        case CmtKind::reasoning_augmented: return "reasoning_augmented";
        case CmtKind::sliding_window: return "sliding_window";
        default: return "self_managing";
    }
}

CmtKind cmt_kind_from_string(const std::string& name) {
    if (name == "basic_causal") return CmtKind::basic_causal;
    if (name == "reasoning_augmented") return CmtKind::reasoning_augmented;
    if (name == "sliding_window") return CmtKind::sliding_window;
    if (name == "self_managing") return CmtKind::self_managing;
    throw std::invalid_argument("unknown context template '" + name + "'");
}

Message make_message(Role role, std::string text) {
    Message m;
    m.role = role;
    m.text = std::move(text);
    m.loss_mask = role == Role::llm;
    m.token_count = static_cast<int>(count_tokens(m.text));
    return m;
}

LiveContextTimeline::LiveContextTimeline(std::optional<int> token_budget)
    : token_budget_(token_budget) {}

void LiveContextTimeline::append(Message m) {
    if (m.loss_mask && m.role != Role::llm)
        throw std::invalid_argument("loss_mask=true requires role=llm");
    total_tokens_ += m.token_count;
    messages_.push_back(std::move(m));
}

void LiveContextTimeline::insert(size_t index, Message m) {
    if (m.loss_mask && m.role != Role::llm)
        throw std::invalid_argument("loss_mask=true requires role=llm");
    total_tokens_ += m.token_count;
    messages_.insert(messages_.begin() + static_cast<long>(index), std::move(m));
}

void LiveContextTimeline::replace(size_t index, Message m) {
    total_tokens_ += m.token_count - messages_.at(index).token_count;
    messages_.at(index) = std::move(m);
}

void LiveContextTimeline::erase(size_t index) {
    total_tokens_ -= messages_.at(index).token_count;
    messages_.erase(messages_.begin() + static_cast<long>(index));
}

void TimelineSnapshotRecorder::record_snapshot(const LiveContextTimeline& lct) {
    if (lct.messages().empty() || lct.messages().back().role != Role::llm)
        throw std::logic_error("record_snapshot: no action has been emitted");
    snapshots_.push_back(lct.messages());
}

std::string TrainingSample::text() const {
    std::string out;
    for (size_t i = 0; i < messages.size(); ++i) {
        if (i) out += '\n';
        out += messages[i].text;
    }
    return out;
}

TrainingSample sample_from_messages(const std::vector<Message>& messages) {
    TrainingSample sample;
    sample.messages = messages;
    for (const Message& m : messages) {
        sample.message_first_token.push_back(static_cast<int>(sample.tokens.size()));
        for (const Token& t : tokenize(m.text)) {
            sample.tokens.push_back(t.text);
            sample.loss_mask.push_back(m.role == Role::llm);
        }
    }
    return sample;
}

std::vector<TrainingSample> merge_timelines(const TimelineSnapshotRecorder& tsr) {
    const auto& snapshots = tsr.snapshots();
    if (snapshots.empty()) throw std::invalid_argument("merge_timelines: no snapshots");

    std::vector<TrainingSample> flat;
    flat.reserve(snapshots.size());
    for (const auto& snap : snapshots) flat.push_back(sample_from_messages(snap));

    auto is_prefix = [](const TrainingSample& a, const TrainingSample& b) {
        if (a.tokens.size() > b.tokens.size()) return false;
        return std::equal(a.tokens.begin(), a.tokens.end(), b.tokens.begin());
    };

    // A snapshot that is a token prefix of any later snapshot (equality
    // included, so surviving samples are distinct) is subsumed by it.
    std::vector<size_t> survivors;
    for (size_t i = 0; i < flat.size(); ++i) {
        bool subsumed = false;
        for (size_t j = i + 1; j < flat.size() && !subsumed; ++j)
            if (is_prefix(flat[i], flat[j])) subsumed = true;
        if (!subsumed) survivors.push_back(i);
    }

    // Align loss masks: a token occurrence already emitted by an earlier
    // surviving sample (identical stream prefix up to it) is masked off here.
    std::vector<TrainingSample> out;
    for (size_t si = 0; si < survivors.size(); ++si) {
        TrainingSample sample = std::move(flat[survivors[si]]);
        size_t shared = 0;
        for (size_t sj = 0; sj < si; ++sj) {
            const TrainingSample& prev = out[sj];
            size_t lcp = 0;
            size_t limit = std::min(prev.tokens.size(), sample.tokens.size());
            while (lcp < limit && prev.tokens[lcp] == sample.tokens[lcp]) ++lcp;
            shared = std::max(shared, lcp);
        }
        for (size_t t = 0; t < std::min(shared, sample.loss_mask.size()); ++t)
            sample.loss_mask[t] = false;
        out.push_back(std::move(sample));
    }
    return out;
}

std::pair<std::string, std::string> split_think(const std::string& response) {
    size_t open = response.find("<think>");
    size_t close = response.find("</think>");
    if (open == std::string::npos || close == std::string::npos || close < open)
        return {"", response};
    std::string think = response.substr(open + 7, close - open - 7);
    std::string action = response.substr(close + 8);
    return {think, normalize_whitespace(action)};
}

namespace {

// Index of the first message the fallback may remove (system messages are exempt).
std::optional<size_t> lowest_removable(const LiveContextTimeline& lct) {
    for (size_t i = 0; i < lct.messages().size(); ++i)
        if (lct.messages()[i].role != Role::system) return i;
    return std::nullopt;
}

void forced_trim(LiveContextTimeline& lct) {
    if (!lct.token_budget()) return;
    while (lct.total_tokens() > *lct.token_budget()) {
        auto idx = lowest_removable(lct);
        if (!idx) break;
        lct.erase(*idx);
    }
}

void manage_sliding_window(LiveContextTimeline& lct, Gateway& model, int keep_window) {
    if (!lct.token_budget() || lct.total_tokens() <= *lct.token_budget()) return;
    // keep system + query heads, summarize everything older than the window
    size_t head = std::min<size_t>(2, lct.messages().size());
    size_t n = lct.messages().size();
    if (n <= head + static_cast<size_t>(keep_window)) {
        forced_trim(lct);
        return;
    }
    size_t cut_end = n - static_cast<size_t>(keep_window);
    std::string joined;
    for (size_t i = head; i < cut_end; ++i) {
        joined += lct.messages()[i].text;
        joined += '\n';
    }
    CompletionRequest req;
    req.tag = Tag::summarize;
    req.temperature = 0.0;
    req.messages = {{"user", "SUMMARIZE:\n" + joined}};
    std::string summary = model.complete(req).text;
    for (size_t i = cut_end; i-- > head;) lct.erase(i);
    lct.insert(head, make_message(Role::memory, summary));
    forced_trim(lct);
}

void manage_self_context(LiveContextTimeline& lct, Gateway& model, double temperature) {
    if (!lct.token_budget() || lct.total_tokens() <= *lct.token_budget()) return;
    std::ostringstream prompt;
    prompt << "CONTEXT OPERATION REQUEST\n";
    prompt << "BUDGET: " << *lct.token_budget() << " TOKENS USED: " << lct.total_tokens()
           << "\n";
    for (size_t i = 0; i < lct.messages().size(); ++i) {
        const Message& m = lct.messages()[i];
        auto toks = tokenize(m.text);
        std::string excerpt;
        for (size_t k = 0; k < std::min<size_t>(8, toks.size()); ++k) {
            if (!excerpt.empty()) excerpt += ' ';
            excerpt += toks[k].text;
        }
        prompt << "MSG " << i << " [" << to_string(m.role) << "]: " << excerpt << "\n";
    }
    prompt << "REQUIRED OUTPUT FORMAT (one per message):\nOP <i>: keep|remove|compress\n";

    CompletionRequest req;
    req.tag = Tag::policy;
    req.temperature = temperature;
    req.messages = {{"user", prompt.str()}};
    std::string response = model.complete(req).text;

    static const std::regex op_re(R"(OP (\d+): (keep|remove|compress))");
    std::map<size_t, std::string> ops;
    auto begin = std::sregex_iterator(response.begin(), response.end(), op_re);
    for (auto it = begin; it != std::sregex_iterator(); ++it)
        ops[static_cast<size_t>(std::stoul((*it)[1]))] = (*it)[2];

    // apply from the back so indices stay valid
    for (size_t i = lct.messages().size(); i-- > 0;) {
        auto it = ops.find(i);
        if (it == ops.end()) continue;
        if (lct.messages()[i].role == Role::system) continue;
        if (it->second == "remove") {
            lct.erase(i);
        } else if (it->second == "compress") {
            CompletionRequest sreq;
            sreq.tag = Tag::summarize;
            sreq.temperature = 0.0;
            sreq.messages = {{"user", "SUMMARIZE:\n" + lct.messages()[i].text}};
            std::string summary = model.complete(sreq).text;
            lct.replace(i, make_message(Role::memory, summary));
        }
    }
    forced_trim(lct);  // the policy may have kept everything
}

std::vector<ChatMessage> to_chat(const LiveContextTimeline& lct) {
    std::vector<ChatMessage> chat;
    for (const Message& m : lct.messages()) {
        std::string role;
        switch (m.role) {
            case Role::system: role = "system"; break;
            case Role::user: role = "user"; break;
            case Role::llm: role = "assistant"; break;
            case Role::memory: role = "memory"; break;
            default: role = "environment"; break;
        }
        chat.push_back({role, m.text});
    }
    return chat;
}

}  // namespace

RolloutResult run_template(CmtKind kind, EnvSession& env, const Task& task, Gateway& model,
                           const CmtOptions& options) {
    RolloutResult result;
    Trajectory& traj = result.trajectory;
    traj.id = options.trajectory_id;
    traj.task_id = task.id;
    if (options.experience) {
        traj.guidance = Guidance::experience;
        traj.injected_experience_ids.push_back(options.experience->id);
    }

    std::string system_text = options.system_prompt;
    if (kind == CmtKind::reasoning_augmented)
        system_text +=
            "\nThink before acting: respond as <think>your reasoning</think>action.";
    if (!options.nonce.empty()) system_text += "\nsession " + options.nonce;

    LiveContextTimeline lct(options.token_budget);
    lct.append(make_message(Role::system, system_text));
    if (options.experience) {
        // injection per the {system}<EXP>{exp}</EXP>{query} template
        lct.append(make_message(Role::memory,
                                "<EXP>" + options.experience->content + "</EXP>"));
    }
    lct.append(make_message(Role::user, task.query));
    if (options.token_budget && lct.total_tokens() > *options.token_budget)
        throw std::invalid_argument("token budget below system+task prompt size");

    int canonical_tokens = 0;  // running index into the trajectory token stream
    bool terminal = false;

    try {
        result.initial_observation = env.state();
        lct.append(make_message(Role::environment, result.initial_observation));

        for (int t = 0; t < options.max_steps; ++t) {
            CompletionRequest req;
            req.tag = Tag::policy;
            req.temperature = options.temperature;
            req.messages = to_chat(lct);
            CompletionResponse resp = model.complete(req);

            auto [think, action] = split_think(resp.text);
            if (kind == CmtKind::reasoning_augmented && think.empty())
                throw GatewayError("reasoning template requires a think segment",
                                   Tag::policy, 0);

            Message action_msg = make_message(Role::llm, resp.text);
            DecisionMeta meta;
            meta.state_key = TabularBackend::state_key_from_messages(req.messages);
            meta.logprob = resp.per_token_logprobs.empty() ? 0.0 : resp.per_token_logprobs[0];
            meta.step_index = t;
            meta.action_id = -1;  // resolved by the caller against the vocabulary
            action_msg.decision = meta;
            lct.append(action_msg);
            result.tsr.record_snapshot(lct);

            StepOutcome outcome = env.step(action);

            Step step;
            step.index = t;
            step.action = action;
            step.observation = outcome.observation;
            if (!think.empty()) step.think = think;
            int action_tokens = static_cast<int>(count_tokens(resp.text));
            step.token_span = {canonical_tokens, canonical_tokens + action_tokens};
            canonical_tokens += action_tokens;
            // decision log-prob sits on the first token of the action span
            traj.per_token_logprob_old.resize(static_cast<size_t>(canonical_tokens), 0.0);
            traj.per_token_logprob_old[static_cast<size_t>(step.token_span.start)] =
                meta.logprob;
            canonical_tokens += static_cast<int>(count_tokens(outcome.observation));
            traj.per_token_logprob_old.resize(static_cast<size_t>(canonical_tokens), 0.0);
            traj.steps.push_back(step);

            lct.append(make_message(Role::environment, outcome.observation));

            if (outcome.done) {
                terminal = true;
                break;
            }

            if (kind == CmtKind::sliding_window)
                manage_sliding_window(lct, model, options.sliding_keep_window);
            else if (kind == CmtKind::self_managing)
                manage_self_context(lct, model, options.temperature);
        }
    } catch (const LifecycleError&) {
        // environment failed mid-episode: partial trajectory, truncated
        terminal = false;
    }

    traj.terminal = terminal;
    traj.truncated = !terminal;
    return result;
}

void dump_timeline(const std::string& path, const TimelineSnapshotRecorder& tsr,
                   const std::vector<TrainingSample>& samples) {
    std::ofstream out(path, std::ios::binary);
    for (const auto& snap : tsr.snapshots()) {
        nlohmann::json j;
        j["kind"] = "snapshot";
        j["messages"] = nlohmann::json::array();
        for (const Message& m : snap)
            j["messages"].push_back({{"role", to_string(m.role)},
                                     {"text", m.text},
                                     {"loss_mask", m.loss_mask},
                                     {"token_count", m.token_count}});
        out << j.dump() << '\n';
    }
    for (const TrainingSample& s : samples) {
        nlohmann::json j;
        j["kind"] = "merged_sample";
        j["text"] = s.text();
        j["loss_mask"] = s.loss_mask;
        out << j.dump() << '\n';
    }
}

}  // namespace evolver
