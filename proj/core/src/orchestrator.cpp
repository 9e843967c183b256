#include "evolver/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <future>
#include <numeric>
#include <set>
#include <sstream>

#include "evolver/gateway.hpp"
#include "evolver/mock_backend.hpp"
#include "evolver/policy_backend.hpp"
#include "evolver/serialize.hpp"
#include "evolver/tokenize.hpp"

#include "json.hpp"

namespace fs = std::filesystem;

namespace evolver {

namespace {

std::string hex64(uint64_t v) {
    std::ostringstream out;
    out << std::hex << v;
    return out.str();
}

// --- env service with embedded and remote flavors ---------------------------

class EnvService {
public:
    virtual ~EnvService() = default;
    virtual std::string create(const EnvSpec& spec) = 0;
    virtual std::string state(const std::string& id) = 0;
    virtual StepOutcome step(const std::string& id, const std::string& action) = 0;
    virtual EvalOutcome evaluate(const std::string& id, const Task& task) = 0;
    virtual void destroy(const std::string& id) = 0;
};

class EmbeddedEnvService : public EnvService {
public:
    std::string create(const EnvSpec& spec) override { return registry_.create(spec); }
    std::string state(const std::string& id) override { return registry_.state(id); }
    StepOutcome step(const std::string& id, const std::string& action) override {
        return registry_.step(id, action);
    }
    EvalOutcome evaluate(const std::string& id, const Task& task) override {
        return registry_.evaluate(id, task);
    }
    void destroy(const std::string& id) override { registry_.destroy(id); }

private:
    EnvRegistry registry_;
};

class RemoteEnvService : public EnvService {
public:
    explicit RemoteEnvService(const std::string& url) : client_(url) {}
    std::string create(const EnvSpec& spec) override { return client_.create(spec); }
    std::string state(const std::string& id) override { return client_.state(id); }
    StepOutcome step(const std::string& id, const std::string& action) override {
        return client_.step(id, action);
    }
    EvalOutcome evaluate(const std::string& id, const Task& task) override {
        return client_.evaluate(id, task);
    }
    void destroy(const std::string& id) override { client_.destroy(id); }

private:
    EnvHttpClient client_;
};

class ServiceSession : public EnvSession {
public:
    ServiceSession(EnvService& service, std::string id)
        : service_(service), id_(std::move(id)) {}
    std::string state() override { return service_.state(id_); }
    StepOutcome step(const std::string& action) override { return service_.step(id_, action); }

private:
    EnvService& service_;
    std::string id_;
};

std::unique_ptr<EnvService> make_service(const RunConfig& cfg) {
    if (cfg.env_url.empty()) return std::make_unique<EmbeddedEnvService>();
    return std::make_unique<RemoteEnvService>(cfg.env_url);
}

EnvSpec make_spec(const RunConfig& cfg) {
    EnvSpec spec;
    spec.name = cfg.env_name;
    spec.config = cfg.env_config;
    spec.profile = builtin_profile(cfg.env_name);
    return spec;
}

// --- shared gateway construction ---------------------------------------------

struct Stack {
    std::shared_ptr<Gateway> gateway;
    std::shared_ptr<TabularBackend> tabular;  // null when the policy backend is not tabular
};

Stack make_stack(const RunConfig& cfg) {
    Stack stack;
    std::string aux_kind = backend_kind_from_env(cfg.aux_backend);
    auto aux = make_backend(aux_kind == "tabular" ? "mock" : aux_kind, cfg.http_backend_url,
                            cfg.mock_scenario, cfg.seed);
    stack.gateway = std::make_shared<Gateway>(aux, cfg.embedding_dim);

    std::string policy_kind = backend_kind_from_env(cfg.backend);
    if (policy_kind == "tabular") {
        auto policy = std::make_shared<PolicySnapshot>();
        policy->action_vocabulary = builtin_action_vocabulary(cfg.env_name);
        policy->temperature = cfg.temperature;
        stack.tabular =
            std::make_shared<TabularBackend>(policy, splitmix64(cfg.seed ^ 0x9011CCu),
                                             cfg.advice_bias);
        stack.gateway->route(Tag::policy, stack.tabular);
    } else {
        stack.gateway->route(
            Tag::policy, make_backend(policy_kind, cfg.http_backend_url, cfg.mock_scenario,
                                      cfg.seed));
    }
    return stack;
}

UserPreference load_prefs(const RunConfig& cfg) {
    UserPreference prefs;
    prefs.style_rubric = "short imperative task queries grounded in the environment";
    if (!cfg.prefs_path.empty()) {
        std::ifstream in(cfg.prefs_path);
        if (!in) throw std::runtime_error("cannot open preferences: " + cfg.prefs_path);
        std::ostringstream buffer;
        buffer << in.rdbuf();
        prefs = deserialize<UserPreference>(buffer.str());
    }
    return prefs;
}

EnvironmentProfile load_profile(const RunConfig& cfg) {
    if (cfg.profile_path.empty()) return builtin_profile(cfg.env_name);
    std::ifstream in(cfg.profile_path);
    if (!in) throw std::runtime_error("cannot open profile: " + cfg.profile_path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return deserialize<EnvironmentProfile>(buffer.str());
}

// --- rollout machinery --------------------------------------------------------

struct RolloutOutcome {
    RolloutResult rollout;
    JudgeVerdict verdict;
    double eval_score = 0.0;
};

RolloutOutcome run_one_rollout(const RunConfig& cfg, EnvService& service, Gateway& gateway,
                               const Task& task, const std::string& traj_id,
                               const std::string& nonce,
                               const std::optional<Experience>& experience) {
    EnvSpec spec = make_spec(cfg);
    std::string id = service.create(spec);
    RolloutOutcome out;
    try {
        ServiceSession session(service, id);
        CmtOptions options;
        options.max_steps = cfg.max_steps;
        options.temperature = cfg.temperature;
        options.nonce = nonce;
        options.experience = experience;
        options.trajectory_id = traj_id;
        if (cfg.token_budget > 0) options.token_budget = cfg.token_budget;
        out.rollout = run_template(cfg.cmt, session, task, gateway, options);
        out.eval_score = service.evaluate(id, task).score;
    } catch (...) {
        service.destroy(id);
        throw;
    }
    service.destroy(id);
    out.verdict = judge(task, out.rollout.trajectory, gateway);
    out.rollout.trajectory.outcome_reward = out.verdict.score;
    return out;
}

// Sample construction for one trajectory: merge, strip, align, broadcast.
std::vector<TrainSample> build_samples(const RunConfig& cfg, const RolloutOutcome& outcome,
                                       const std::vector<double>* step_advantages,
                                       double trajectory_advantage, double decay,
                                       const std::map<std::string, int>& vocab_index) {
    const Trajectory& traj = outcome.rollout.trajectory;
    if (traj.steps.empty()) return {};

    std::vector<TrainingSample> merged = merge_timelines(outcome.rollout.tsr);
    std::vector<TrainSample> out;
    for (TrainingSample& sample : merged) {
        if (traj.guidance == Guidance::experience) sample = strip_experience(sample);
        if (sample.text().find("<EXP>") != std::string::npos)
            throw std::logic_error("experience marker survived into a training sample");

        TrainSample ts;
        ts.trajectory_id = traj.id;
        ts.guidance = traj.guidance;
        ts.advantage = trajectory_advantage;
        ts.decay = decay;
        ts.n_tokens = static_cast<int>(sample.tokens.size());
        ts.loss_mask = sample.loss_mask;
        ts.logprob_old.assign(sample.tokens.size(), 0.0);

        std::vector<TokenSpan> spans;
        std::vector<double> span_advantages;
        for (size_t i = 0; i < sample.messages.size(); ++i) {
            const Message& m = sample.messages[i];
            if (m.role != Role::llm || !m.decision) continue;
            int first = sample.message_first_token[i];
            if (m.token_count == 0) continue;
            if (!sample.loss_mask[static_cast<size_t>(first)])
                continue;  // occurrence already trained in an earlier sample
            const DecisionMeta& meta = *m.decision;
            ts.logprob_old[static_cast<size_t>(first)] = meta.logprob;
            Decision d;
            d.token_index = first;
            d.state_key = meta.state_key;
            d.step_index = meta.step_index;
            const Step& step = traj.steps[static_cast<size_t>(meta.step_index)];
            auto it = vocab_index.find(step.action);
            if (it == vocab_index.end())
                throw std::logic_error("rollout action missing from vocabulary: " + step.action);
            d.action_id = it->second;
            ts.decisions.push_back(d);
            spans.push_back({first, first + m.token_count});
            if (step_advantages)
                span_advantages.push_back(
                    (*step_advantages)[static_cast<size_t>(meta.step_index)]);
        }
        if (step_advantages) {
            TokenAdvantage tok = broadcast_tokens(span_advantages, spans, ts.n_tokens);
            ts.token_advantage = tok.values;
            // only action-span tokens carry loss
            for (size_t j = 0; j < tok.mask.size(); ++j)
                ts.loss_mask[j] = ts.loss_mask[j] && tok.mask[j];
        }
        out.push_back(std::move(ts));
    }
    return out;
}

// --- checkpoints ---------------------------------------------------------------

nlohmann::json metrics_to_json(const std::vector<IterationMetrics>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const IterationMetrics& m : rows)
        arr.push_back({{"step", m.step},
                       {"loss", m.loss},
                       {"mean_ratio", m.mean_ratio},
                       {"clip_frac_vanilla", m.clip_frac_vanilla},
                       {"clip_frac_boosted", m.clip_frac_boosted},
                       {"kl", m.kl},
                       {"mean_reward", m.mean_reward},
                       {"mean_eval", m.mean_eval}});
    return arr;
}

std::vector<IterationMetrics> metrics_from_json(const nlohmann::json& arr) {
    std::vector<IterationMetrics> rows;
    for (const auto& j : arr) {
        IterationMetrics m;
        m.step = j.at("step").get<int>();
        m.loss = j.at("loss").get<double>();
        m.mean_ratio = j.at("mean_ratio").get<double>();
        m.clip_frac_vanilla = j.at("clip_frac_vanilla").get<double>();
        m.clip_frac_boosted = j.at("clip_frac_boosted").get<double>();
        m.kl = j.at("kl").get<double>();
        m.mean_reward = j.at("mean_reward").get<double>();
        m.mean_eval = j.at("mean_eval").get<double>();
        rows.push_back(m);
    }
    return rows;
}

void write_checkpoint(const std::string& path, int iteration, const PolicySnapshot& policy,
                      const std::vector<Task>& tasks, const ExperiencePool& pool,
                      const std::vector<IterationMetrics>& rows) {
    nlohmann::json j;
    j["stage"] = "D";
    j["iteration"] = iteration;
    j["policy"] = policy;
    j["tasks"] = tasks;
    j["experiences"] = pool.all();
    j["embedding_dim"] = pool.embedding_dim();
    j["metrics"] = metrics_to_json(rows);
    std::ofstream out(path, std::ios::binary);
    out << j.dump() << '\n';
}

struct CheckpointData {
    int iteration = 0;
    PolicySnapshot policy;
    std::vector<Task> tasks;
    std::vector<Experience> experiences;
    int embedding_dim = kDefaultEmbeddingDim;
    std::vector<IterationMetrics> metrics;
};

CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    nlohmann::json j;
    in >> j;
    CheckpointData data;
    data.iteration = j.at("iteration").get<int>();
    data.policy = j.at("policy").get<PolicySnapshot>();
    data.tasks = j.at("tasks").get<std::vector<Task>>();
    data.experiences = j.at("experiences").get<std::vector<Experience>>();
    data.embedding_dim = j.at("embedding_dim").get<int>();
    data.metrics = metrics_from_json(j.at("metrics"));
    return data;
}

}  // namespace

// --- metrics csv -----------------------------------------------------------------

void write_metrics_csv(const std::string& path, const std::vector<IterationMetrics>& rows) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot open metrics file: " + path);
    std::fprintf(f, "step,loss,mean_ratio,clip_frac_vanilla,clip_frac_boosted,kl,mean_reward\n");
    for (const IterationMetrics& m : rows)
        std::fprintf(f, "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", m.step, m.loss,
                     m.mean_ratio, m.clip_frac_vanilla, m.clip_frac_boosted, m.kl,
                     m.mean_reward);
    std::fclose(f);
}

std::vector<IterationMetrics> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metrics file: " + path);
    std::vector<IterationMetrics> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        IterationMetrics m;
        std::istringstream ls(line);
        char comma;
        ls >> m.step >> comma >> m.loss >> comma >> m.mean_ratio >> comma >>
            m.clip_frac_vanilla >> comma >> m.clip_frac_boosted >> comma >> m.kl >> comma >>
            m.mean_reward;
        rows.push_back(m);
    }
    return rows;
}

int RunReport::iterations_to_eval_threshold(double threshold, int window) const {
    std::deque<double> recent;
    double sum = 0.0;
    for (size_t i = 0; i < metrics.size(); ++i) {
        recent.push_back(metrics[i].mean_eval);
        sum += metrics[i].mean_eval;
        if (static_cast<int>(recent.size()) > window) {
            sum -= recent.front();
            recent.pop_front();
        }
        if (sum / static_cast<double>(recent.size()) >= threshold)
            return static_cast<int>(i) + 1;
    }
    return iterations_run + 1;
}

// --- stage A: task synthesis --------------------------------------------------

std::vector<Task> synthesize_tasks(const RunConfig& cfg) {
    Stack stack = make_stack(cfg);
    std::unique_ptr<EnvService> service = make_service(cfg);
    EnvironmentProfile profile = load_profile(cfg);
    UserPreference prefs = load_prefs(cfg);

    AcceptedCorpus corpus;
    const int max_attempts = std::max(cfg.task_count * 4, 8);
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        if (static_cast<int>(corpus.size()) >= cfg.task_count) break;
        EnvSpec spec = make_spec(cfg);
        std::string id = service->create(spec);
        try {
            ServiceSession session(*service, id);
            ExplorationConfig ecfg = cfg.exploration;
            ecfg.max_steps = std::min(ecfg.max_steps, cfg.max_steps);
            Trajectory traj = explore(session, profile, ecfg, *stack.gateway, id);
            service->destroy(id);
            if (traj.steps.empty()) continue;
            Task task = synthesize_task(traj, prefs, *stack.gateway);
            task.reference_solution =
                extract_reference_solution(traj, task, *stack.gateway);
            if (task.reference_solution.empty()) continue;
            curate_realtime(task, corpus, cfg.curation);
        } catch (const SynthesisError&) {
            continue;
        } catch (const ExtractionError&) {
            continue;
        } catch (...) {
            service->destroy(id);
            throw;
        }
    }

    auto factory = [&cfg]() { return make_environment(make_spec(cfg)); };
    return curate_post(corpus.tasks(), factory, cfg.curation);
}

// --- oracle -----------------------------------------------------------------------

double oracle_return(const RunConfig& cfg, const Task& task) {
    // breadth-first search over observation-deduplicated states, replaying
    // action prefixes against fresh instances
    std::vector<std::string> vocab = builtin_action_vocabulary(cfg.env_name);
    struct Node {
        std::vector<int> actions;
    };
    std::set<std::string> seen;
    std::deque<Node> queue;
    queue.push_back({});
    double best = 0.0;

    auto replay = [&](const std::vector<int>& actions, bool& done_out) {
        std::unique_ptr<Environment> env = make_environment(make_spec(cfg));
        done_out = false;
        std::string obs = env->state();
        for (int a : actions) {
            StepOutcome out = env->step(vocab[static_cast<size_t>(a)]);
            obs = out.observation;
            if (out.done) {
                done_out = true;
                break;
            }
        }
        best = std::max(best, env->evaluate(task).score);
        return obs;
    };

    while (!queue.empty()) {
        Node node = queue.front();
        queue.pop_front();
        bool done = false;
        std::string obs = replay(node.actions, done);
        if (best >= 1.0) return 1.0;
        if (done || static_cast<int>(node.actions.size()) >= cfg.max_steps) continue;
        if (!seen.insert(obs).second) continue;
        for (size_t a = 0; a < vocab.size(); ++a) {
            Node next = node;
            next.actions.push_back(static_cast<int>(a));
            queue.push_back(next);
        }
    }
    return best;
}

// --- the four-stage loop -------------------------------------------------------

RunReport run_evolution(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    fs::create_directories(cfg.out_dir + "/checkpoints");
    if (cfg.dump_timelines) fs::create_directories(cfg.out_dir + "/timelines");

    Stack stack = make_stack(cfg);
    std::unique_ptr<EnvService> service = make_service(cfg);

    PolicySnapshot policy;
    policy.action_vocabulary = builtin_action_vocabulary(cfg.env_name);
    policy.temperature = cfg.temperature;

    std::map<std::string, int> vocab_index;
    for (size_t i = 0; i < policy.action_vocabulary.size(); ++i)
        vocab_index[policy.action_vocabulary[i]] = static_cast<int>(i);

    std::vector<Task> tasks;
    ExperiencePool pool(cfg.embedding_dim);
    std::vector<IterationMetrics> metrics;
    int start_iteration = 0;

    if (!cfg.resume_path.empty()) {
        CheckpointData data = read_checkpoint(cfg.resume_path);
        policy = data.policy;
        tasks = data.tasks;
        pool = ExperiencePool(data.embedding_dim);
        for (Experience& e : data.experiences) pool.insert(std::move(e));
        metrics = data.metrics;
        start_iteration = data.iteration;
    } else {
        // Stage A: task synthesis (or provided target tasks)
        if (cfg.no_questioning) {
            if (cfg.tasks_path.empty())
                throw std::runtime_error("no_questioning requires a tasks file");
            tasks = read_jsonl<Task>(cfg.tasks_path);
        } else {
            tasks = synthesize_tasks(cfg);
        }
        if (tasks.empty()) throw std::runtime_error("no tasks to train on");
        write_jsonl(cfg.out_dir + "/tasks.jsonl", tasks);

        // Stage C cold start: pool construction from the initial policy
        if (!cfg.no_navigating) {
            BuildPoolOptions popts;
            popts.max_steps = cfg.max_steps;
            popts.seed = splitmix64(cfg.seed ^ 0xC01D5Au);
            popts.temperature = cfg.temperature;
            popts.embedding_dim = cfg.embedding_dim;
            auto factory = [&cfg]() { return make_environment(make_spec(cfg)); };
            pool = build_pool(tasks, policy, factory, cfg.n_pc, *stack.gateway, popts);
            pool.save(cfg.out_dir + "/experiences.jsonl", cfg.out_dir + "/pool.meta");
        }
    }

    std::vector<Task> target_tasks, synthetic_tasks;
    for (const Task& t : tasks)
        (t.origin == TaskOrigin::target ? target_tasks : synthetic_tasks).push_back(t);
    // with provided target tasks only, the sampler runs on them directly
    if (synthetic_tasks.empty()) {
        synthetic_tasks = target_tasks;
        target_tasks.clear();
        for (Task& t : synthetic_tasks) t.origin = TaskOrigin::synthetic;
    }
    HybridSampler sampler(target_tasks, synthetic_tasks, cfg.lambda,
                          splitmix64(cfg.seed ^ 0x5A3B1Eu), cfg.hybrid_decay);

    if (stack.tabular) stack.tabular->set_policy(std::make_shared<PolicySnapshot>(policy));

    const std::string traj_path = cfg.out_dir + "/trajectories.jsonl";
    const std::string attr_path = cfg.out_dir + "/attribution.jsonl";
    if (start_iteration == 0) {
        std::ofstream(traj_path, std::ios::trunc);
        std::ofstream(attr_path, std::ios::trunc);
    }

    for (int iter = start_iteration; iter < cfg.iterations; ++iter) {
        // Stage C refresh (optional)
        if (!cfg.no_navigating && cfg.refresh_pool_every > 0 && iter > 0 &&
            iter % cfg.refresh_pool_every == 0) {
            BuildPoolOptions popts;
            popts.max_steps = cfg.max_steps;
            popts.seed = splitmix64(cfg.seed ^ 0xC01D5Au ^ static_cast<uint64_t>(iter));
            popts.temperature = cfg.temperature;
            popts.embedding_dim = cfg.embedding_dim;
            auto factory = [&cfg]() { return make_environment(make_spec(cfg)); };
            pool = build_pool(tasks, policy, factory, cfg.n_pc, *stack.gateway, popts);
            pool.save(cfg.out_dir + "/experiences.jsonl", cfg.out_dir + "/pool.meta");
        }

        // Stage B: experience-mixed rollout
        HybridDraw draw = sampler.next();
        const Task& task = draw.task;
        double eta = cfg.no_navigating || pool.size() == 0 ? 0.0 : cfg.eta;
        RolloutPlan plan = plan_rollout_mix(cfg.rollout_n, eta);

        std::vector<Experience> retrieved;
        if (plan.n_experience > 0)
            retrieved = retrieve(task.query, pool, cfg.top_k, *stack.gateway);
        if (retrieved.empty()) plan = plan_rollout_mix(cfg.rollout_n, 0.0);

        uint64_t iter_seed = splitmix64(cfg.seed ^ (static_cast<uint64_t>(iter) + 1));
        std::vector<RolloutOutcome> outcomes(static_cast<size_t>(plan.n_total));
        auto run_slot = [&](int slot) {
            std::optional<Experience> exp;
            if (slot < plan.n_experience)
                exp = retrieved[static_cast<size_t>(slot) % retrieved.size()];
            std::string traj_id =
                "traj-" + std::to_string(iter) + "-" + std::to_string(slot);
            std::string nonce = hex64(splitmix64(iter_seed ^ (static_cast<uint64_t>(slot) + 1)));
            outcomes[static_cast<size_t>(slot)] = run_one_rollout(
                cfg, *service, *stack.gateway, task, traj_id, nonce, exp);
        };
        if (cfg.rollout_workers > 1) {
            std::vector<std::future<void>> futures;
            for (int slot = 0; slot < plan.n_total; ++slot)
                futures.push_back(std::async(std::launch::async, run_slot, slot));
            for (auto& f : futures) f.get();
        } else {
            for (int slot = 0; slot < plan.n_total; ++slot) run_slot(slot);
        }

        for (const RolloutOutcome& o : outcomes)
            append_jsonl(traj_path, o.rollout.trajectory);
        if (cfg.dump_timelines) {
            for (const RolloutOutcome& o : outcomes)
                dump_timeline(cfg.out_dir + "/timelines/" + o.rollout.trajectory.id + ".jsonl",
                              o.rollout.tsr, merge_timelines(o.rollout.tsr));
        }

        // Stage D: sample construction and optimization
        std::vector<double> outcome_rewards;
        double eval_sum = 0.0;
        for (const RolloutOutcome& o : outcomes) {
            outcome_rewards.push_back(o.verdict.score);
            eval_sum += o.eval_score;
        }

        TrainBatch batch;
        if (!cfg.no_attribution) {
            // per-trajectory attribution, standardized per channel within the group
            std::vector<std::vector<double>> attr_series(outcomes.size());
            for (size_t i = 0; i < outcomes.size(); ++i) {
                const Trajectory& traj = outcomes[i].rollout.trajectory;
                if (traj.steps.empty()) continue;
                std::vector<AttributionLabel> labels = attribute_trajectory(
                    task, traj, outcomes[i].verdict.score, *stack.gateway);
                attr_series[i] = quantify(labels, cfg.label_mapping);
                AttributionRecord record;
                record.trajectory_id = traj.id;
                AttributionPrompt prompt =
                    build_attribution_prompt(task, traj, outcomes[i].verdict.score);
                record.prompt_digest = fnv1a(prompt.system_text + prompt.user_text);
                for (const AttributionLabel& l : labels) {
                    record.labels.push_back(l.label == AttrLabel::GOOD ? "GOOD" : "BAD");
                    record.rationales.push_back(l.rationale);
                }
                append_attribution_record(attr_path, record);
            }
            std::vector<std::vector<double>> attr_hat =
                standardize_attribution(attr_series, cfg.standardize_mode);
            std::vector<double> out_hat = standardize_outcome(outcome_rewards);
            for (size_t i = 0; i < outcomes.size(); ++i) {
                if (outcomes[i].rollout.trajectory.steps.empty()) continue;
                std::vector<double> fused = fuse(attr_hat[i], out_hat[i], cfg.alpha);
                std::vector<double> step_adv = advantage(fused);
                std::vector<TrainSample> samples =
                    build_samples(cfg, outcomes[i], &step_adv, 0.0,
                                  draw.advantage_decay.value_or(1.0), vocab_index);
                for (TrainSample& s : samples) batch.samples.push_back(std::move(s));
            }
        } else {
            std::vector<double> advantages = group_advantage(outcome_rewards);
            for (size_t i = 0; i < outcomes.size(); ++i) {
                if (outcomes[i].rollout.trajectory.steps.empty()) continue;
                std::vector<TrainSample> samples =
                    build_samples(cfg, outcomes[i], nullptr, advantages[i],
                                  draw.advantage_decay.value_or(1.0), vocab_index);
                for (TrainSample& s : samples) batch.samples.push_back(std::move(s));
            }
        }

        IterationMetrics row;
        row.step = iter;
        row.mean_reward = outcome_rewards.empty()
                              ? 0.0
                              : std::accumulate(outcome_rewards.begin(), outcome_rewards.end(),
                                                0.0) /
                                    static_cast<double>(outcome_rewards.size());
        row.mean_eval = outcomes.empty()
                            ? 0.0
                            : eval_sum / static_cast<double>(outcomes.size());

        if (!batch.samples.empty() && cfg.epochs > 0) {
            PolicySnapshot policy_old = policy;
            // the token-level loss is a mean over unmasked tokens, so the
            // per-decision gradient scale shrinks with span length; restore
            // the trajectory-mean scale through the step size
            double lr = cfg.learning_rate;
            if (!batch.samples.empty() && batch.samples.front().token_advantage) {
                long masked = 0;
                for (const TrainSample& s : batch.samples)
                    masked += std::count(s.loss_mask.begin(), s.loss_mask.end(), true);
                lr *= static_cast<double>(masked) / static_cast<double>(batch.samples.size());
            }
            LossStats stats;
            for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
                stats = navigating_loss(batch, cfg.clip, policy, policy_old);
                sgd_update(policy, stats.grad, lr);
            }
            row.loss = stats.loss;
            row.mean_ratio = stats.mean_ratio;
            row.clip_frac_vanilla = stats.clip_frac_vanilla;
            row.clip_frac_boosted = stats.clip_frac_boosted;
            row.kl = stats.kl;
            if (stack.tabular)
                stack.tabular->set_policy(std::make_shared<PolicySnapshot>(policy));
        }
        metrics.push_back(row);
        write_metrics_csv(cfg.out_dir + "/metrics.csv", metrics);

        int done_iter = iter + 1;
        if (cfg.checkpoint_every > 0 &&
            (done_iter % cfg.checkpoint_every == 0 || done_iter == cfg.iterations)) {
            write_checkpoint(cfg.out_dir + "/checkpoints/ckpt-" + std::to_string(done_iter) +
                                 ".json",
                             done_iter, policy, tasks, pool, metrics);
        }
    }

    // final evaluation pass: vanilla rollouts under the trained policy
    RunReport report;
    report.iterations_run = cfg.iterations;
    report.metrics = metrics;
    report.pool_size = pool.size();
    report.task_count = tasks.size();
    report.out_dir = cfg.out_dir;

    double eval_sum = 0.0;
    int eval_n = 0;
    double oracle_sum = 0.0;
    for (const Task& task : tasks) {
        oracle_sum += oracle_return(cfg, task);
        for (int e = 0; e < cfg.eval_rollouts; ++e) {
            std::string nonce =
                hex64(splitmix64(cfg.seed ^ 0xEA11u ^ (static_cast<uint64_t>(eval_n) + 1)));
            RolloutOutcome out = run_one_rollout(cfg, *service, *stack.gateway, task,
                                                 "eval-" + std::to_string(eval_n), nonce,
                                                 std::nullopt);
            eval_sum += out.eval_score;
            ++eval_n;
        }
    }
    report.final_eval = eval_n > 0 ? eval_sum / eval_n : 0.0;
    report.oracle_return = tasks.empty() ? 0.0 : oracle_sum / static_cast<double>(tasks.size());

    size_t q = metrics.size() / 4;
    if (q > 0) {
        double first = 0.0, last = 0.0;
        for (size_t i = 0; i < q; ++i) first += metrics[i].mean_reward;
        for (size_t i = metrics.size() - q; i < metrics.size(); ++i)
            last += metrics[i].mean_reward;
        report.first_quartile_mean_reward = first / static_cast<double>(q);
        report.last_quartile_mean_reward = last / static_cast<double>(q);
    }

    std::ofstream rep(cfg.out_dir + "/report.txt");
    rep << "iterations: " << report.iterations_run << "\n";
    rep << "tasks: " << report.task_count << "\n";
    rep << "pool_size: " << report.pool_size << "\n";
    rep << "oracle_return: " << report.oracle_return << "\n";
    rep << "final_eval: " << report.final_eval << "\n";
    rep << "mean_reward_first_quartile: " << report.first_quartile_mean_reward << "\n";
    rep << "mean_reward_last_quartile: " << report.last_quartile_mean_reward << "\n";
    rep << "iterations_to_0.8_oracle: "
        << report.iterations_to_eval_threshold(0.8 * report.oracle_return) << "\n";
    return report;
}

// --- config glue ------------------------------------------------------------------

RunConfig run_config_from_kv(const KeyValueConfig& kv) {
    RunConfig cfg;
    cfg.env_name = kv.get_or("env", "name", cfg.env_name);
    cfg.env_url = kv.get_or("env", "url", cfg.env_url);
    if (auto v = kv.get("env", "start")) cfg.env_config["start"] = *v;
    if (auto v = kv.get("env", "goal")) cfg.env_config["goal"] = *v;
    if (auto v = kv.get("env", "required_calls")) cfg.env_config["required_calls"] = *v;

    cfg.profile_path = kv.get_or("run", "profile", cfg.profile_path);
    cfg.prefs_path = kv.get_or("run", "prefs", cfg.prefs_path);
    cfg.tasks_path = kv.get_or("run", "tasks", cfg.tasks_path);
    cfg.out_dir = kv.get_or("run", "out_dir", cfg.out_dir);
    cfg.task_count = kv.get_int("run", "task_count", cfg.task_count);
    cfg.iterations = kv.get_int("run", "iterations", cfg.iterations);
    cfg.rollout_n = kv.get_int("run", "rollout_n", cfg.rollout_n);
    cfg.n_pc = kv.get_int("run", "n_pc", cfg.n_pc);
    cfg.epochs = kv.get_int("run", "epochs", cfg.epochs);
    cfg.batch_size = kv.get_int("run", "batch_size", cfg.batch_size);
    cfg.eval_rollouts = kv.get_int("run", "eval_rollouts", cfg.eval_rollouts);
    cfg.max_steps = kv.get_int("run", "max_steps", cfg.max_steps);
    cfg.checkpoint_every = kv.get_int("run", "checkpoint_every", cfg.checkpoint_every);
    cfg.rollout_workers = kv.get_int("run", "rollout_workers", cfg.rollout_workers);
    cfg.refresh_pool_every = kv.get_int("run", "refresh_pool_every", cfg.refresh_pool_every);
    cfg.token_budget = kv.get_int("run", "token_budget", cfg.token_budget);
    cfg.seed = static_cast<uint64_t>(kv.get_int("run", "seed", static_cast<int>(cfg.seed)));
    cfg.dump_timelines = kv.get_bool("run", "dump_timelines", cfg.dump_timelines);

    cfg.eta = kv.get_double("navigating", "eta", cfg.eta);
    cfg.top_k = kv.get_int("navigating", "top_k", cfg.top_k);
    cfg.advice_bias = kv.get_double("navigating", "advice_bias", cfg.advice_bias);

    cfg.alpha = kv.get_double("attribution", "alpha", cfg.alpha);
    std::string mode = kv.get_or("attribution", "standardize_mode", "trajectory_level");
    cfg.standardize_mode = mode == "step_level" ? StandardizeMode::step_level
                                                : StandardizeMode::trajectory_level;
    cfg.label_mapping.good = kv.get_double("attribution", "good", cfg.label_mapping.good);
    cfg.label_mapping.bad = kv.get_double("attribution", "bad", cfg.label_mapping.bad);

    cfg.clip.eps_low = kv.get_double("clip", "eps_low", cfg.clip.eps_low);
    cfg.clip.eps_high = kv.get_double("clip", "eps_high", cfg.clip.eps_high);
    cfg.clip.eps_high_boost = kv.get_double("clip", "eps_high_boost", cfg.clip.eps_high_boost);
    cfg.clip.kl_beta = kv.get_double("clip", "kl_beta", cfg.clip.kl_beta);

    cfg.lambda = kv.get_double("hybrid", "lambda", cfg.lambda);
    cfg.hybrid_decay = kv.get_double("hybrid", "decay", cfg.hybrid_decay);

    cfg.learning_rate = kv.get_double("optimizer", "learning_rate", cfg.learning_rate);
    cfg.temperature = kv.get_double("optimizer", "temperature", cfg.temperature);
    cfg.embedding_dim = kv.get_int("optimizer", "embedding_dim", cfg.embedding_dim);

    cfg.exploration.n_breadth = kv.get_int("exploration", "n_breadth", cfg.exploration.n_breadth);
    cfg.exploration.n_depth_window =
        kv.get_int("exploration", "n_depth_window", cfg.exploration.n_depth_window);
    cfg.exploration.max_steps = kv.get_int("exploration", "max_steps", cfg.exploration.max_steps);
    cfg.exploration.temperature =
        kv.get_double("exploration", "temperature", cfg.exploration.temperature);

    cfg.curation.lexical_threshold =
        kv.get_double("curation", "lexical_threshold", cfg.curation.lexical_threshold);
    cfg.curation.semantic_threshold =
        kv.get_double("curation", "semantic_threshold", cfg.curation.semantic_threshold);
    cfg.curation.feasibility_required =
        kv.get_bool("curation", "feasibility_required", cfg.curation.feasibility_required);

    cfg.cmt = cmt_kind_from_string(kv.get_or("run", "cmt", to_string(cfg.cmt)));
    cfg.no_attribution = kv.get_bool("ablation", "no_attribution", cfg.no_attribution);
    cfg.no_navigating = kv.get_bool("ablation", "no_navigating", cfg.no_navigating);
    cfg.no_questioning = kv.get_bool("ablation", "no_questioning", cfg.no_questioning);

    cfg.backend = kv.get_or("model", "backend", cfg.backend);
    cfg.aux_backend = kv.get_or("model", "aux_backend", cfg.aux_backend);
    cfg.mock_scenario = kv.get_or("model", "mock_scenario", cfg.mock_scenario);
    cfg.http_backend_url = kv.get_or("model", "http_url", cfg.http_backend_url);
    return cfg;
}

RunConfig run_config_from_file(const std::string& path) {
    return run_config_from_kv(KeyValueConfig::parse_file(path));
}

std::string run_config_defaults_text() {
    RunConfig cfg;
    KeyValueConfig kv;
    kv.set("env", "name", cfg.env_name);
    kv.set("env", "goal", "hospital");
    kv.set("run", "out_dir", cfg.out_dir);
    kv.set("run", "task_count", std::to_string(cfg.task_count));
    kv.set("run", "iterations", std::to_string(cfg.iterations));
    kv.set("run", "rollout_n", std::to_string(cfg.rollout_n));
    kv.set("run", "n_pc", std::to_string(cfg.n_pc));
    kv.set("run", "epochs", std::to_string(cfg.epochs));
    kv.set("run", "batch_size", std::to_string(cfg.batch_size));
    kv.set("run", "eval_rollouts", std::to_string(cfg.eval_rollouts));
    kv.set("run", "max_steps", std::to_string(cfg.max_steps));
    kv.set("run", "checkpoint_every", std::to_string(cfg.checkpoint_every));
    kv.set("run", "rollout_workers", std::to_string(cfg.rollout_workers));
    kv.set("run", "refresh_pool_every", std::to_string(cfg.refresh_pool_every));
    kv.set("run", "token_budget", std::to_string(cfg.token_budget));
    kv.set("run", "seed", std::to_string(cfg.seed));
    kv.set("run", "cmt", to_string(cfg.cmt));
    kv.set("run", "dump_timelines", cfg.dump_timelines ? "true" : "false");
    kv.set("navigating", "eta", "0.5");
    kv.set("navigating", "top_k", std::to_string(cfg.top_k));
    kv.set("navigating", "advice_bias", "2.0");
    kv.set("attribution", "alpha", "0.1");
    kv.set("attribution", "standardize_mode", "trajectory_level");
    kv.set("attribution", "good", "1.0");
    kv.set("attribution", "bad", "-1.0");
    kv.set("clip", "eps_low", "0.28");
    kv.set("clip", "eps_high", "0.28");
    kv.set("clip", "eps_high_boost", "0.6");
    kv.set("clip", "kl_beta", "0.001");
    kv.set("hybrid", "lambda", "1.0");
    kv.set("hybrid", "decay", "0.5");
    kv.set("optimizer", "learning_rate", "1.0");
    kv.set("optimizer", "temperature", "1.0");
    kv.set("optimizer", "embedding_dim", std::to_string(cfg.embedding_dim));
    kv.set("exploration", "n_breadth", "3");
    kv.set("exploration", "n_depth_window", "17");
    kv.set("exploration", "max_steps", std::to_string(cfg.exploration.max_steps));
    kv.set("exploration", "temperature", "1.0");
    kv.set("curation", "lexical_threshold", "0.8");
    kv.set("curation", "semantic_threshold", "0.85");
    kv.set("curation", "feasibility_required", "true");
    kv.set("ablation", "no_attribution", "false");
    kv.set("ablation", "no_navigating", "false");
    kv.set("ablation", "no_questioning", "false");
    kv.set("model", "backend", cfg.backend);
    kv.set("model", "aux_backend", cfg.aux_backend);
    kv.set("model", "mock_scenario", cfg.mock_scenario);
    return kv.dump();
}

}  // namespace evolver
