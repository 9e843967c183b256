#ifndef EVOLVER_ORCHESTRATOR_HPP
#define EVOLVER_ORCHESTRATOR_HPP

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "evolver/attribution.hpp"
#include "evolver/config.hpp"
#include "evolver/context.hpp"
#include "evolver/env.hpp"
#include "evolver/experience.hpp"
#include "evolver/optimizer.hpp"
#include "evolver/questioning.hpp"
#include "evolver/types.hpp"

namespace evolver {

struct RunConfig {
    // environment
    std::string env_name = "gridmap";
    std::map<std::string, std::string> env_config;
    std::string env_url;  // empty: embedded in-process service

    // inputs and outputs
    std::string profile_path;  // empty: built-in profile
    std::string prefs_path;    // empty: defaults
    std::string tasks_path;    // target tasks, required with no_questioning
    std::string out_dir = "run";

    // loop shape
    int task_count = 4;
    int iterations = 200;
    int rollout_n = 8;
    int n_pc = 4;
    int epochs = 4;
    int batch_size = 32;
    int eval_rollouts = 8;
    int max_steps = kDefaultMaxSteps;
    int checkpoint_every = 50;
    int rollout_workers = 4;
    int refresh_pool_every = 0;  // 0: cold start only
    int token_budget = 0;        // 0: unbounded context

    // numerics
    double eta = 0.5;
    double alpha = 0.1;
    ClipConfig clip;
    double lambda = 1.0;
    double hybrid_decay = 0.5;
    double learning_rate = 1.0;  // tabular scale; LLM-scale rates live in config files
    double temperature = 1.0;
    double advice_bias = 2.0;
    int top_k = 5;
    int embedding_dim = kDefaultEmbeddingDim;

    ExplorationConfig exploration;
    CurationConfig curation;

    // modes
    CmtKind cmt = CmtKind::basic_causal;
    StandardizeMode standardize_mode = StandardizeMode::trajectory_level;
    LabelMapping label_mapping;
    bool no_attribution = false;
    bool no_navigating = false;
    bool no_questioning = false;
    bool dump_timelines = false;

    uint64_t seed = 0;
    std::string backend = "tabular";     // policy tag
    std::string aux_backend = "mock";    // every other tag
    std::string mock_scenario = "default";
    std::string http_backend_url;

    std::string resume_path;  // checkpoint file to resume from
};

RunConfig run_config_from_file(const std::string& path);
RunConfig run_config_from_kv(const KeyValueConfig& kv);
std::string run_config_defaults_text();

struct IterationMetrics {
    int step = 0;
    double loss = 0.0;
    double mean_ratio = 0.0;
    double clip_frac_vanilla = 0.0;
    double clip_frac_boosted = 0.0;
    double kl = 0.0;
    double mean_reward = 0.0;  // mean judge score of the group
    double mean_eval = 0.0;    // mean environment evaluate score of the group
};

struct RunState {
    char stage = 'A';
    int iteration = 0;
};

struct RunReport {
    int iterations_run = 0;
    double final_eval = 0.0;
    double oracle_return = 0.0;
    double first_quartile_mean_reward = 0.0;
    double last_quartile_mean_reward = 0.0;
    size_t pool_size = 0;
    size_t task_count = 0;
    std::vector<IterationMetrics> metrics;
    std::string out_dir;

    // First iteration whose trailing-window mean evaluate score reaches
    // threshold; iterations_run + 1 when never reached.
    int iterations_to_eval_threshold(double threshold, int window = 16) const;
};

// Synthesis stage on its own: explore, synthesize, curate. Returns the
// curated task list (may be empty when everything is rejected).
std::vector<Task> synthesize_tasks(const RunConfig& cfg);

// The four-stage loop: (A) task synthesis, (B) trajectory rollout,
// (C) experience summarization, (D) sample construction and optimization.
RunReport run_evolution(const RunConfig& cfg);

// Exhaustive-search return of the environment under a step budget: what a
// perfect policy could score.
double oracle_return(const RunConfig& cfg, const Task& task);

void write_metrics_csv(const std::string& path, const std::vector<IterationMetrics>& rows);
std::vector<IterationMetrics> read_metrics_csv(const std::string& path);

}  // namespace evolver

#endif  // EVOLVER_ORCHESTRATOR_HPP
