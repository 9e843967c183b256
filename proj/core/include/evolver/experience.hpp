#ifndef EVOLVER_EXPERIENCE_HPP
#define EVOLVER_EXPERIENCE_HPP

#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "evolver/context.hpp"
#include "evolver/env.hpp"
#include "evolver/gateway.hpp"
#include "evolver/types.hpp"

namespace evolver {

// Exhaustive-scan vector store; reads are freely concurrent, inserts
// serialize and are atomic at record granularity.
class ExperiencePool {
public:
    explicit ExperiencePool(int embedding_dim = kDefaultEmbeddingDim);
    ExperiencePool(ExperiencePool&& other) noexcept;
    ExperiencePool& operator=(ExperiencePool&& other) noexcept;

    // Rejects records that fail validation or duplicate an id.
    void insert(Experience experience);
    std::vector<Experience> all() const;
    size_t size() const;
    int embedding_dim() const { return embedding_dim_; }

    void save(const std::string& jsonl_path, const std::string& meta_path) const;
    static ExperiencePool load(const std::string& jsonl_path);

private:
    mutable std::mutex mu_;
    std::vector<Experience> experiences_;
    int embedding_dim_;
};

struct RolloutPlan {
    int n_total = 0;
    int n_vanilla = 0;
    int n_experience = 0;
    double eta = 0.5;
};

// N_e = floor(eta * N) computed exactly; N_v takes the remainder.
RolloutPlan plan_rollout_mix(int n, double eta);

class InjectionError : public std::runtime_error {
public:
    explicit InjectionError(std::string message) : std::runtime_error(std::move(message)) {}
};

class StripError : public std::runtime_error {
public:
    explicit StripError(std::string message) : std::runtime_error(std::move(message)) {}
};

// "{system_prompt}<EXP>{experience}</EXP>{query}"; refuses experience text
// that already contains a marker so stripping stays unambiguous.
std::string inject_experience(const std::string& system_prompt, const Experience& exp,
                              const std::string& query);

// Removes the injected experience message (markers included) from a merged
// training sample and re-derives all token indices. The surviving text equals
// the vanilla-format prompt byte for byte.
TrainingSample strip_experience(const TrainingSample& sample);

// Pre-refinement candidates: exact top-k by cosine between the query
// embedding and experience embeddings, ties broken by ascending id. Exposed
// for the oracle tests.
std::vector<Experience> retrieve_candidates(const std::vector<double>& query_embedding,
                                            const ExperiencePool& pool, int k);

// Candidates then Omega_refine: one model call re-ranks and may re-write
// content; order and content come from the response, length stays <= k.
std::vector<Experience> retrieve(const std::string& query, const ExperiencePool& pool, int k,
                                 Gateway& model);

struct BuildPoolOptions {
    int max_steps = kDefaultMaxSteps;
    uint64_t seed = 0;
    double success_threshold = 0.6;  // judge score splitting success/failure
    double temperature = 1.0;
    int embedding_dim = kDefaultEmbeddingDim;
};

// Pool construction: N_pc rollouts per task under the given policy, judged
// and split into success/failure groups, experiences extracted per group and
// from success/failure pairs, then validated; only validated records enter
// the pool.
ExperiencePool build_pool(const std::vector<Task>& tasks, const PolicySnapshot& policy,
                          const std::function<std::unique_ptr<Environment>()>& env_factory,
                          int n_pc, Gateway& model, const BuildPoolOptions& options);

}  // namespace evolver

#endif  // EVOLVER_EXPERIENCE_HPP
