#include "evolver/mock_backend.hpp"

#include <algorithm>
#include <regex>
#include <sstream>

#include "evolver/tokenize.hpp"
#include "evolver/types.hpp"

namespace evolver {

namespace {

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

std::string first_sentence(const std::string& text) {
    size_t dot = text.find('.');
    return dot == std::string::npos ? text : text.substr(0, dot + 1);
}

std::string first_tokens(const std::string& text, size_t n) {
    auto toks = tokenize(text);
    std::string out;
    for (size_t i = 0; i < std::min(n, toks.size()); ++i) {
        if (!out.empty()) out += ' ';
        out += toks[i].text;
    }
    return out;
}

// A step whose observation reports an actual change of state.
bool observation_is_productive(const std::string& obs) {
    return obs.rfind("You moved", 0) == 0 || obs.rfind("You waited", 0) == 0 ||
           obs.rfind("You entered", 0) == 0 || obs.rfind("doc for", 0) == 0 ||
           obs.rfind("call ok", 0) == 0;
}

struct PromptStep {
    std::string action;
    std::string observation;
};

// Parses "STEP <i>: ACTION <a> / OBS <o>" lines.
std::vector<PromptStep> parse_step_lines(const std::string& prompt) {
    std::vector<PromptStep> steps;
    static const std::regex re(R"(STEP (\d+): ACTION (.*) / OBS (.*))");
    for (const std::string& line : split_lines(prompt)) {
        std::smatch m;
        if (std::regex_match(line, m, re)) steps.push_back({m[2], m[3]});
    }
    return steps;
}

// Parses ">>> EVAL-STEP i <<<" blocks with <ACTION>/<OBSERVATION> lines.
std::vector<PromptStep> parse_eval_blocks(const std::string& prompt) {
    std::vector<PromptStep> steps;
    static const std::regex head(R"(>>> EVAL-STEP (\d+) <<<)");
    static const std::regex act(R"(<ACTION> (.*) <END>)");
    static const std::regex obs(R"(<OBSERVATION> (.*) <END>)");
    std::vector<std::string> lines = split_lines(prompt);
    for (size_t i = 0; i < lines.size(); ++i) {
        std::smatch m;
        if (!std::regex_match(lines[i], m, head)) continue;
        PromptStep step;
        for (size_t j = i + 1; j < std::min(lines.size(), i + 4); ++j) {
            std::smatch ma;
            if (std::regex_match(lines[j], ma, act)) step.action = ma[1];
            else if (std::regex_match(lines[j], ma, obs)) step.observation = ma[1];
        }
        steps.push_back(step);
    }
    return steps;
}

struct AdjacentOption {
    std::string direction;
    std::string what;
};

std::vector<AdjacentOption> parse_adjacency(const std::string& obs) {
    std::vector<AdjacentOption> options;
    static const std::regex re(R"((north|south|east|west): ([^;.]+))");
    auto begin = std::sregex_iterator(obs.begin(), obs.end(), re);
    for (auto it = begin; it != std::sregex_iterator(); ++it)
        options.push_back({(*it)[1], normalize_whitespace(std::string((*it)[2]))});
    return options;
}

bool is_building(const std::string& what) {
    return what != "road" && what != "traffic light" && what != "open ground" &&
           what != "the map edge";
}

// Local exploration heuristic shared by the explore and mock-policy tags:
// works from the latest observation alone, choices keyed by a prompt hash so
// distinct sessions wander differently but identically across runs.
std::string walk_action(const std::string& prompt, const std::string& last_obs) {
    uint64_t h = fnv1a(prompt);
    if (last_obs.find("apis:") != std::string::npos) {
        // tool console: show a doc, then call once the doc has been seen
        static const std::regex apis_re(R"(apis: ([^.]*)\.)");
        std::smatch m;
        std::vector<std::string> apis;
        if (std::regex_search(last_obs, m, apis_re)) {
            std::istringstream in(m[1]);
            std::string name;
            while (std::getline(in, name, ',')) apis.push_back(normalize_whitespace(name));
        }
        if (apis.empty()) return "show_api_doc pay_bill";
        std::string api = apis[h % apis.size()];
        bool doc_seen = last_obs.find("docs seen: [") != std::string::npos &&
                        last_obs.find(api, last_obs.find("docs seen: [")) != std::string::npos;
        return doc_seen ? "call " + api : "show_api_doc " + api;
    }

    std::vector<AdjacentOption> options = parse_adjacency(last_obs);
    std::string building_dir;
    std::vector<std::string> moves;
    for (const AdjacentOption& opt : options) {
        if (opt.what == "road") moves.push_back("move " + opt.direction);
        else if (opt.what == "traffic light") moves.push_back("wait_and_cross " + opt.direction);
        else if (is_building(opt.what)) building_dir = opt.direction;
    }
    if (!building_dir.empty() && h % 4 == 0) return "enter";
    if (!moves.empty()) return moves[(h >> 2) % moves.size()];
    if (!building_dir.empty()) return "enter";
    return "move north";
}

std::string last_observation_line(const std::string& prompt) {
    static const std::regex re(R"(OBS (\d+): (.*))");
    std::string last;
    for (const std::string& line : split_lines(prompt)) {
        std::smatch m;
        if (std::regex_match(line, m, re)) last = m[2];
    }
    return last;
}

}  // namespace

namespace mock {

bool observation_is_error(const std::string& observation) {
    for (const char* marker :
         {"unknown operation", "You cannot", "call failed", "nothing to enter",
          "the episode has ended", "cannot cross"}) {
        if (observation.find(marker) != std::string::npos) return true;
    }
    return false;
}

std::string explore_action(const std::string& prompt, const std::string& scenario) {
    if (scenario == "move-enter-cycle") {
        // alternates a move with a (possibly failing) enter
        static const std::regex step_re(R"(STEP (\d+))");
        std::smatch m;
        int step = 0;
        if (std::regex_search(prompt, m, step_re)) step = std::stoi(m[1]);
        return step % 2 == 0 ? "move east" : "enter";
    }
    return walk_action(prompt, last_observation_line(prompt));
}

std::string synthesize_query(const std::string& prompt, const std::string& /*scenario*/) {
    std::vector<PromptStep> steps = parse_step_lines(prompt);
    static const std::regex entered_re(R"(You entered the ([a-z_]+)\.)");
    std::string building;
    std::vector<std::string> calls;
    for (const PromptStep& s : steps) {
        std::smatch m;
        if (std::regex_search(s.observation, m, entered_re)) building = m[1];
        if (s.observation.rfind("call ok", 0) == 0) {
            static const std::regex call_re(R"(call ok: ([a-z_]+))");
            std::smatch mc;
            if (std::regex_search(s.observation, mc, call_re)) calls.push_back(mc[1]);
        }
    }
    if (!building.empty())
        return "QUERY: Navigate the map and enter the " + building + ".";
    if (!calls.empty()) {
        std::sort(calls.begin(), calls.end());
        calls.erase(std::unique(calls.begin(), calls.end()), calls.end());
        std::string joined;
        for (const std::string& c : calls) {
            if (!joined.empty()) joined += " and ";
            joined += c;
        }
        return "QUERY: Use the console to run " + joined + ".";
    }
    return "QUERY: NONE";
}

std::string extract_response(const std::string& prompt, const std::string& scenario) {
    if (prompt.rfind("EXPERIENCE EXTRACTION", 0) == 0) {
        // group kind drives what is distilled
        static const std::regex group_re(R"(GROUP: (success|failure|comparative))");
        std::smatch m;
        std::string group = "success";
        if (std::regex_search(prompt, m, group_re)) group = m[1];

        static const std::regex ctx_re(R"(CONTEXT: (.*))");
        std::string context;
        if (std::regex_search(prompt, m, ctx_re)) context = m[1];

        std::vector<PromptStep> steps = parse_step_lines(prompt);
        std::ostringstream out;
        auto emit = [&](const std::string& when, const std::string& action, bool avoid) {
            out << "EXPERIENCE\n";
            out << "WHEN: " << when << "\n";
            out << "CONTENT: IF " << when << " THEN " << (avoid ? "avoid " : "take ")
                << action << "\n";
        };
        auto state_before = [&](size_t i) {
            return i == 0 ? context : steps[i - 1].observation;
        };
        if (group == "success") {
            std::vector<size_t> productive;
            for (size_t i = 0; i < steps.size(); ++i)
                if (observation_is_productive(steps[i].observation)) productive.push_back(i);
            size_t take = std::min<size_t>(3, productive.size());
            for (size_t k = productive.size() - take; k < productive.size(); ++k) {
                size_t i = productive[k];
                if (state_before(i).empty()) continue;
                emit(state_before(i), steps[i].action, false);
            }
        } else if (group == "failure") {
            for (size_t i = 0; i < steps.size(); ++i) {
                if (observation_is_error(steps[i].observation) && !state_before(i).empty()) {
                    emit(state_before(i), steps[i].action, true);
                    break;
                }
            }
        } else {  // comparative: advise the first success action that diverges
            size_t b_start = prompt.find("TRAJECTORY B");
            std::vector<PromptStep> a_steps, b_steps;
            if (b_start != std::string::npos) {
                a_steps = parse_step_lines(prompt.substr(0, b_start));
                b_steps = parse_step_lines(prompt.substr(b_start));
            } else {
                a_steps = steps;
            }
            for (size_t i = 0; i < a_steps.size(); ++i) {
                std::string before = i == 0 ? context
                                            : a_steps[i - 1].observation;
                if (i >= b_steps.size() || a_steps[i].action != b_steps[i].action) {
                    if (!before.empty()) emit(before, a_steps[i].action, false);
                    break;
                }
            }
        }
        return out.str();
    }

    // reference solution extraction
    if (scenario == "cite-out-of-range") return "STEP 9: fabricated step\n";
    std::vector<PromptStep> steps = parse_step_lines(prompt);

    // loop erasure: a repeated observation means the state cycled back, so
    // everything in between adds nothing to the solution
    std::vector<size_t> kept;
    for (size_t i = 0; i < steps.size(); ++i) {
        bool cycled = false;
        for (size_t k = 0; k < kept.size(); ++k) {
            if (steps[kept[k]].observation == steps[i].observation) {
                kept.resize(k + 1);
                cycled = true;
                break;
            }
        }
        if (!cycled) kept.push_back(i);
    }

    std::ostringstream out;
    for (size_t i : kept) {
        if (observation_is_productive(steps[i].observation))
            out << "STEP " << i << ": " << first_sentence(steps[i].observation) << "\n";
    }
    return out.str();
}

std::string judge_verdict(const std::string& prompt, const std::string& scenario) {
    if (scenario == "judge-garbage") return "not a verdict";

    static const std::regex ref_re(R"(REF-STEP (\d+): ACTION (.*) \| EXPECT (.*))");
    std::vector<PromptStep> refs;
    for (const std::string& line : split_lines(prompt)) {
        std::smatch m;
        if (std::regex_match(line, m, ref_re)) refs.push_back({m[2], m[3]});
    }
    std::vector<PromptStep> traj = parse_eval_blocks(prompt);

    // relevance and repetition guard
    bool all_same = traj.size() >= 2;
    for (size_t i = 1; i < traj.size(); ++i)
        if (traj[i].action != traj[0].action) all_same = false;
    if (all_same) {
        return "RELEVANCE: FAIL\nCOVERED: NONE\nSCORE: 0\n"
               "RATIONALE: repeated identical actions with no justification\n";
    }

    // Intermediate steps match by action or expected observation; the final
    // (goal) step only counts when its expected observation actually shows up.
    auto covered = [&](const PromptStep& ref, bool is_final) {
        for (const PromptStep& s : traj) {
            if (!ref.observation.empty() &&
                s.observation.find(ref.observation) != std::string::npos)
                return true;
            if (!is_final && s.action == ref.action) return true;
        }
        return false;
    };

    std::vector<int> covered_idx;
    for (size_t i = 0; i < refs.size(); ++i)
        if (covered(refs[i], i + 1 == refs.size())) covered_idx.push_back(static_cast<int>(i));

    // Reaching the final reference step makes earlier steps functionally
    // covered even along an alternate route.
    bool full = refs.empty() || (!covered_idx.empty() &&
                                 covered_idx.back() == static_cast<int>(refs.size()) - 1);
    std::ostringstream out;
    out << "RELEVANCE: PASS\n";
    double score;
    if (full) {
        out << "COVERED: ";
        for (size_t i = 0; i < refs.size(); ++i) out << (i ? "," : "") << i;
        if (refs.empty()) out << "NONE";
        out << "\n";
        double k = std::max<size_t>(refs.size(), 1);
        double n = std::max<size_t>(traj.size(), 1);
        score = 0.6 + 0.4 * std::min(1.0, k / n);
    } else {
        out << "COVERED: ";
        if (covered_idx.empty()) out << "NONE";
        for (size_t i = 0; i < covered_idx.size(); ++i)
            out << (i ? "," : "") << covered_idx[i];
        out << "\n";
        double frac = refs.empty() ? 0.0
                                   : static_cast<double>(covered_idx.size()) /
                                         static_cast<double>(refs.size());
        score = 0.4 * frac;
    }
    out << "SCORE: " << score << "\n";
    out << "RATIONALE: " << (full ? "reference covered" : "reference not covered") << "\n";
    return out.str();
}

std::string attribute_labels(const std::string& prompt, const std::string& scenario) {
    if (scenario == "attr-garbage") return "no judgments here";

    static const std::regex score_re(R"(OVERALL PERFORMANCE SCORE (-?[0-9.]+))");
    std::smatch m;
    double score = 0.0;
    if (std::regex_search(prompt, m, score_re)) score = std::stod(m[1]);
    std::vector<PromptStep> steps = parse_eval_blocks(prompt);

    std::ostringstream out;
    for (size_t i = 0; i < steps.size(); ++i) {
        bool err = observation_is_error(steps[i].observation);
        bool revisit = false;
        for (size_t k = 0; k < i; ++k)
            if (steps[k].observation == steps[i].observation) revisit = true;
        bool good;
        const char* why;
        if (score > 0.0) {
            // contributing steps break new ground without failing
            good = !err && !revisit;
            why = err ? "the step failed against the environment"
                      : revisit ? "the step only revisited known ground"
                                : "the step advanced the solution";
        } else {
            bool prev_err = i > 0 && observation_is_error(steps[i - 1].observation);
            good = prev_err && !err;
            why = good ? "the step recovered from the preceding error"
                       : "the step did not correct the failure";
        }
        out << "Step " << i << " Analysis: " << why << "\n";
        out << "Step " << i << " Judgment: " << (good ? "GOOD" : "BAD") << "\n";
    }
    return out.str();
}

std::string refine_order(const std::string& prompt, const std::string& /*scenario*/) {
    static const std::regex cand_re(R"(CAND (\d+):)");
    int count = 0;
    for (const std::string& line : split_lines(prompt)) {
        std::smatch m;
        if (std::regex_search(line, m, cand_re)) ++count;
    }
    std::ostringstream out;
    out << "ORDER: ";
    for (int i = 0; i < count; ++i) out << (i ? "," : "") << i;
    out << "\n";
    return out.str();
}

std::string validate_verdict(const std::string& prompt, const std::string& scenario) {
    if (scenario == "validate-reject-all") return "VERDICT: FAIL\nREASON: rejected by scenario\n";
    static const std::regex when_re(R"(WHEN: (.*))");
    static const std::regex content_re(R"(CONTENT: (.*))");
    std::smatch m;
    bool has_when = std::regex_search(prompt, m, when_re) && m[1].length() > 0;
    bool has_content = std::regex_search(prompt, m, content_re) && m[1].length() > 0;
    if (has_when && has_content) return "VERDICT: PASS\nREASON: actionable and grounded\n";
    return "VERDICT: FAIL\nREASON: missing field\n";
}

std::string summarize(const std::string& prompt, const std::string& /*scenario*/) {
    size_t nl = prompt.find('\n');
    std::string body = nl == std::string::npos ? "" : prompt.substr(nl + 1);
    size_t count = split_lines(body).size();
    return "summary of " + std::to_string(count) + " lines: " + first_tokens(body, 6);
}

std::string policy_action(const std::string& prompt, const std::string& scenario) {
    if (prompt.find("CONTEXT OPERATION REQUEST") != std::string::npos) {
        static const std::regex msg_re(R"(MSG (\d+) \[([a-z]+)\]:)");
        std::ostringstream out;
        for (const std::string& line : split_lines(prompt)) {
            std::smatch m;
            if (!std::regex_search(line, m, msg_re)) continue;
            std::string op = "keep";
            if (scenario == "ctx-remove-env" && m[2] == "environment") op = "remove";
            if (scenario == "ctx-compress-env" && m[2] == "environment") op = "compress";
            out << "OP " << m[1] << ": " << op << "\n";
        }
        return out.str();
    }
    std::string action = walk_action(prompt, last_observation_line(prompt));
    if (prompt.find("<think>") != std::string::npos)
        return "<think>pick " + action + "</think>" + action;
    return action;
}

}  // namespace mock

MockBackend::MockBackend(std::string scenario) : scenario_(std::move(scenario)) {}

void MockBackend::add_canned(uint64_t digest, std::string response) {
    canned_[digest] = std::move(response);
}

void MockBackend::set_responder(Tag tag, std::function<std::string(const CompletionRequest&)> fn) {
    responders_[tag] = std::move(fn);
}

CompletionResponse MockBackend::complete(const CompletionRequest& req) {
    auto canned = canned_.find(request_digest(req));
    if (canned != canned_.end()) return {canned->second, {}};
    auto custom = responders_.find(req.tag);
    if (custom != responders_.end()) return {custom->second(req), {}};

    std::string prompt = flatten_request(req);
    // strip the "role: " prefixes for the text-level parsers
    std::string body;
    for (const ChatMessage& m : req.messages) {
        body += m.text;
        body += '\n';
    }
    switch (req.tag) {
        case Tag::explore: return {mock::explore_action(body, scenario_), {}};
        case Tag::synthesize: return {mock::synthesize_query(body, scenario_), {}};
        case Tag::extract: return {mock::extract_response(body, scenario_), {}};
        case Tag::judge: return {mock::judge_verdict(body, scenario_), {}};
        case Tag::attribute: return {mock::attribute_labels(body, scenario_), {}};
        case Tag::refine: return {mock::refine_order(body, scenario_), {}};
        case Tag::validate: return {mock::validate_verdict(body, scenario_), {}};
        case Tag::summarize: return {mock::summarize(body, scenario_), {}};
        default: return {mock::policy_action(body, scenario_), {}};
    }
}

}  // namespace evolver
