#ifndef EVOLVER_GATEWAY_HPP
#define EVOLVER_GATEWAY_HPP

#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "evolver/types.hpp"

namespace evolver {

// Routes mock behavior and audit logs; every request carries one.
enum class Tag {
    explore,
    synthesize,
    judge,
    attribute,
    summarize,
    policy,
    refine,
    extract,
    validate
};

const char* to_string(Tag tag);

struct ChatMessage {
    std::string role;  // system | user | assistant | environment | memory
    std::string text;
};

struct CompletionRequest {
    std::vector<ChatMessage> messages;
    double temperature = 1.0;
    int max_tokens = 0;  // 0 = backend default
    Tag tag = Tag::policy;
};

struct CompletionResponse {
    std::string text;
    std::vector<double> per_token_logprobs;
};

class GatewayError : public std::runtime_error {
public:
    GatewayError(std::string message, Tag tag, int retries)
        : std::runtime_error(std::move(message)), tag(tag), retries(retries) {}
    Tag tag;
    int retries = 0;
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual CompletionResponse complete(const CompletionRequest& req) = 0;
    virtual std::string name() const = 0;
};

struct CallRecord {
    uint64_t seq = 0;
    Tag tag = Tag::policy;
    uint64_t digest = 0;
    double latency_ms = 0.0;
    std::string request_text;   // flattened messages, replayable
    std::string response_text;
    int attempts = 1;
};

uint64_t request_digest(const CompletionRequest& req);
std::string flatten_request(const CompletionRequest& req);

// Single pluggable boundary for completion, embedding and tokenization.
// Judge/attribute calls get one retry on backend failure; policy calls get
// none so recorded log-probs always reflect actual samples.
class Gateway {
public:
    explicit Gateway(std::shared_ptr<Backend> backend, int embedding_dim = kDefaultEmbeddingDim,
                     std::string log_path = "");

    CompletionResponse complete(const CompletionRequest& req);
    std::vector<double> embed(std::string_view text) const;
    int embedding_dim() const { return embedding_dim_; }

    // Per-tag backend routing; unrouted tags use the default backend.
    void route(Tag tag, std::shared_ptr<Backend> backend);

    std::vector<CallRecord> call_log() const;
    void clear_log();

private:
    Backend& backend_for(Tag tag);

    std::shared_ptr<Backend> default_backend_;
    std::vector<std::pair<Tag, std::shared_ptr<Backend>>> routes_;
    int embedding_dim_;
    std::string log_path_;
    mutable std::mutex mu_;
    std::vector<CallRecord> log_;
    uint64_t next_seq_ = 1;
};

// Backend selection honoring the EVOLVER_MODEL_BACKEND environment variable
// (mock | tabular | http). `http_url` is only consulted for the http backend.
std::shared_ptr<Backend> make_backend(const std::string& kind,
                                      const std::string& http_url,
                                      const std::string& mock_scenario,
                                      uint64_t seed);

std::string backend_kind_from_env(const std::string& configured);

}  // namespace evolver

#endif  // EVOLVER_GATEWAY_HPP
