#include "evolver/gateway.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>

#include "evolver/mock_backend.hpp"
#include "evolver/optimizer.hpp"
#include "evolver/policy_backend.hpp"
#include "evolver/tokenize.hpp"

#include "httplib.h"
#include "json.hpp"

namespace evolver {

const char* to_string(Tag tag) {
    switch (tag) {
        case Tag::explore: return "explore";
        case Tag::synthesize: return "synthesize";
        case Tag::judge: return "judge";
        case Tag::attribute: return "attribute";
        case Tag::summarize: return "summarize";
        case Tag::policy: return "policy";
        case Tag::refine: return "refine";
        case Tag::extract: return "extract";
        default: return "validate";
    }
}

std::string flatten_request(const CompletionRequest& req) {
    std::string out;
    for (const ChatMessage& m : req.messages) {
        out += m.role;
        out += ": ";
        out += m.text;
        out += '\n';
    }
    return out;
}

uint64_t request_digest(const CompletionRequest& req) {
    std::string flat = flatten_request(req);
    flat += '|';
    flat += to_string(req.tag);
    flat += '|';
    flat += std::to_string(req.temperature);
    return fnv1a(flat);
}

Gateway::Gateway(std::shared_ptr<Backend> backend, int embedding_dim, std::string log_path)
    : default_backend_(std::move(backend)),
      embedding_dim_(embedding_dim),
      log_path_(std::move(log_path)) {}

void Gateway::route(Tag tag, std::shared_ptr<Backend> backend) {
    routes_.emplace_back(tag, std::move(backend));
}

Backend& Gateway::backend_for(Tag tag) {
    for (auto& [t, b] : routes_)
        if (t == tag) return *b;
    return *default_backend_;
}

CompletionResponse Gateway::complete(const CompletionRequest& req) {
    if (req.temperature < 0.0)
        throw GatewayError("temperature must be >= 0", req.tag, 0);
    const int max_retries = (req.tag == Tag::judge || req.tag == Tag::attribute) ? 1 : 0;
    Backend& backend = backend_for(req.tag);

    int attempt = 0;
    for (;;) {
        auto start = std::chrono::steady_clock::now();
        try {
            CompletionResponse resp = backend.complete(req);
            auto end = std::chrono::steady_clock::now();
            CallRecord rec;
            rec.tag = req.tag;
            rec.digest = request_digest(req);
            rec.latency_ms =
                std::chrono::duration<double, std::milli>(end - start).count();
            rec.request_text = flatten_request(req);
            rec.response_text = resp.text;
            rec.attempts = attempt + 1;
            {
                std::lock_guard<std::mutex> lock(mu_);
                rec.seq = next_seq_++;
                log_.push_back(rec);
                if (!log_path_.empty()) {
                    std::ofstream out(log_path_, std::ios::app);
                    out << "{\"seq\":" << rec.seq << ",\"tag\":\"" << to_string(rec.tag)
                        << "\",\"digest\":\"" << std::hex << rec.digest << std::dec
                        << "\",\"latency_ms\":" << rec.latency_ms << ",\"attempts\":"
                        << rec.attempts << "}\n";
                }
            }
            return resp;
        } catch (const std::exception& e) {
            if (attempt >= max_retries)
                throw GatewayError(std::string("backend '") + backend.name() +
                                       "' failed for tag " + to_string(req.tag) + ": " + e.what(),
                                   req.tag, attempt);
            ++attempt;
        }
    }
}

std::vector<double> Gateway::embed(std::string_view text) const {
    return embed_text(text, embedding_dim_);
}

std::vector<CallRecord> Gateway::call_log() const {
    std::lock_guard<std::mutex> lock(mu_);
    return log_;
}

void Gateway::clear_log() {
    std::lock_guard<std::mutex> lock(mu_);
    log_.clear();
}

// --- tabular backend --------------------------------------------------------

std::string policy_state_key(std::string_view query, std::string_view observation) {
    return normalize_whitespace(std::string(query) + " | " + std::string(observation));
}

std::optional<ExperienceAdvice> parse_advice(const std::string& content) {
    size_t if_pos = content.find("IF ");
    if (if_pos == std::string::npos) return std::nullopt;
    bool avoid = false;
    size_t then_pos = content.find(" THEN take ", if_pos);
    size_t action_start;
    if (then_pos != std::string::npos) {
        action_start = then_pos + 11;
    } else {
        then_pos = content.find(" THEN avoid ", if_pos);
        if (then_pos == std::string::npos) return std::nullopt;
        action_start = then_pos + 12;
        avoid = true;
    }
    ExperienceAdvice advice;
    advice.when = normalize_whitespace(content.substr(if_pos + 3, then_pos - if_pos - 3));
    std::string action = content.substr(action_start);
    while (!action.empty() && (action.back() == '\n' || action.back() == '.'))
        action.pop_back();
    advice.action = normalize_whitespace(action);
    advice.avoid = avoid;
    if (advice.when.empty() || advice.action.empty()) return std::nullopt;
    return advice;
}

TabularBackend::TabularBackend(std::shared_ptr<const PolicySnapshot> policy, uint64_t seed,
                               double advice_bias)
    : policy_(std::move(policy)), seed_(seed), advice_bias_(advice_bias) {}

void TabularBackend::set_policy(std::shared_ptr<const PolicySnapshot> policy) {
    std::lock_guard<std::mutex> lock(mu_);
    policy_ = std::move(policy);
}

std::shared_ptr<const PolicySnapshot> TabularBackend::policy() const {
    std::lock_guard<std::mutex> lock(mu_);
    return policy_;
}

std::string TabularBackend::state_key_from_messages(const std::vector<ChatMessage>& messages) {
    std::string query, observation;
    for (const ChatMessage& m : messages) {
        if (query.empty() && m.role == "user") query = m.text;
        if (m.role == "environment") observation = m.text;  // keep the latest
    }
    return policy_state_key(query, observation);
}

CompletionResponse TabularBackend::complete(const CompletionRequest& req) {
    std::shared_ptr<const PolicySnapshot> policy = this->policy();
    if (!policy || policy->action_vocabulary.empty())
        throw std::runtime_error("tabular backend has no policy");

    std::string key = state_key_from_messages(req.messages);

    // In-context advice shifts sampling only.
    std::map<int, double> bias;
    for (const ChatMessage& m : req.messages) {
        if (m.role != "memory") continue;
        size_t open = m.text.find("<EXP>");
        size_t close = m.text.find("</EXP>");
        if (open == std::string::npos || close == std::string::npos) continue;
        auto advice = parse_advice(m.text.substr(open + 5, close - open - 5));
        if (!advice) continue;
        std::string observation;
        for (const ChatMessage& mm : req.messages)
            if (mm.role == "environment") observation = mm.text;
        if (advice->when != normalize_whitespace(observation)) continue;
        for (size_t a = 0; a < policy->action_vocabulary.size(); ++a) {
            if (policy->action_vocabulary[a] == advice->action)
                bias[static_cast<int>(a)] += advice->avoid ? -advice_bias_ : advice_bias_;
        }
    }

    PolicySnapshot tempered = *policy;
    tempered.temperature = req.temperature;
    uint64_t rng = splitmix64(seed_ ^ request_digest(req));
    int action = policy_sample(tempered, key, rng, bias.empty() ? nullptr : &bias);

    CompletionResponse resp;
    resp.text = policy->action_vocabulary[static_cast<size_t>(action)];
    resp.per_token_logprobs = {policy_log_prob(tempered, key, action)};

    // Reasoning-style prompts ask for an explicit think segment.
    for (const ChatMessage& m : req.messages) {
        if (m.role == "system" && m.text.find("<think>") != std::string::npos) {
            resp.text = "<think>pick " + resp.text + "</think>" + resp.text;
            break;
        }
    }
    return resp;
}

// --- http backend ------------------------------------------------------------

namespace {

class HttpBackend : public Backend {
public:
    explicit HttpBackend(std::string url) : url_(std::move(url)) {
        auto scheme_end = url_.find("://");
        std::string rest = scheme_end == std::string::npos ? url_ : url_.substr(scheme_end + 3);
        auto slash = rest.find('/');
        host_ = "http://" + (slash == std::string::npos ? rest : rest.substr(0, slash));
        path_ = slash == std::string::npos ? "/complete" : rest.substr(slash);
    }

    CompletionResponse complete(const CompletionRequest& req) override {
        nlohmann::json body;
        body["messages"] = nlohmann::json::array();
        for (const ChatMessage& m : req.messages)
            body["messages"].push_back({{"role", m.role}, {"text", m.text}});
        body["temperature"] = req.temperature;
        body["max_tokens"] = req.max_tokens;
        body["tag"] = to_string(req.tag);

        httplib::Client client(host_);
        auto res = client.Post(path_, body.dump(), "application/json");
        if (!res || res->status != 200)
            throw std::runtime_error("http backend error" +
                                     (res ? " status " + std::to_string(res->status) : ""));
        nlohmann::json j = nlohmann::json::parse(res->body);
        CompletionResponse out;
        out.text = j.at("text").get<std::string>();
        if (j.contains("per_token_logprobs"))
            out.per_token_logprobs = j.at("per_token_logprobs").get<std::vector<double>>();
        return out;
    }

    std::string name() const override { return "http"; }

private:
    std::string url_, host_, path_;
};

}  // namespace

std::string backend_kind_from_env(const std::string& configured) {
    const char* env = std::getenv("EVOLVER_MODEL_BACKEND");
    if (env && *env) return env;
    return configured;
}

std::shared_ptr<Backend> make_backend(const std::string& kind, const std::string& http_url,
                                      const std::string& mock_scenario, uint64_t seed) {
    if (kind == "mock") return std::make_shared<MockBackend>(mock_scenario);
    if (kind == "http") return std::make_shared<HttpBackend>(http_url);
    if (kind == "tabular") {
        auto policy = std::make_shared<PolicySnapshot>();
        return std::make_shared<TabularBackend>(policy, seed);
    }
    throw std::invalid_argument("unknown model backend '" + kind + "'");
}

}  // namespace evolver
