#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "evolver/env.hpp"
#include "evolver/experience.hpp"
#include "evolver/gateway.hpp"
#include "evolver/orchestrator.hpp"
#include "evolver/serialize.hpp"

#include "CLI11.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitEmpty = 2;
constexpr int kExitUsage = 64;

evolver::RunConfig load_config(const std::string& config_path, uint64_t seed, bool seed_set) {
    evolver::RunConfig cfg;
    if (!config_path.empty()) cfg = evolver::run_config_from_file(config_path);
    if (seed_set) cfg.seed = seed;
    return cfg;
}

// minimal polyline chart; good enough to eyeball a training run
void write_svg_curve(const std::string& path, const std::string& title,
                     const std::vector<double>& ys) {
    const double w = 720, h = 360, margin = 40;
    double lo = 0.0, hi = 1e-9;
    for (double y : ys) {
        lo = std::min(lo, y);
        hi = std::max(hi, y);
    }
    if (hi - lo < 1e-12) hi = lo + 1.0;
    std::ostringstream points;
    for (size_t i = 0; i < ys.size(); ++i) {
        double x = margin + (w - 2 * margin) * (ys.size() > 1 ? static_cast<double>(i) /
                                                                    (ys.size() - 1)
                                                              : 0.0);
        double y = h - margin - (h - 2 * margin) * (ys[i] - lo) / (hi - lo);
        points << x << "," << y << " ";
    }
    std::ofstream out(path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h
        << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << margin << "' y='24' font-family='monospace' font-size='14'>" << title
        << "</text>\n";
    out << "<line x1='" << margin << "' y1='" << h - margin << "' x2='" << w - margin
        << "' y2='" << h - margin << "' stroke='black'/>\n";
    out << "<line x1='" << margin << "' y1='" << margin << "' x2='" << margin << "' y2='"
        << h - margin << "' stroke='black'/>\n";
    out << "<text x='4' y='" << margin << "' font-family='monospace' font-size='11'>" << hi
        << "</text>\n";
    out << "<text x='4' y='" << h - margin << "' font-family='monospace' font-size='11>'"
        << "" << lo << "</text>\n";
    out << "<polyline fill='none' stroke='purple' stroke-width='1.5' points='" << points.str()
        << "'/>\n";
    out << "</svg>\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"evolver: self-evolving agent training loop"};
    app.require_subcommand(1);

    std::string config_path;
    uint64_t seed = 0;
    bool seed_set = false;
    app.add_option("--config", config_path, "run configuration file");
    auto* seed_opt = app.add_option("--seed", seed, "master seed");

    // synthesize
    auto* synth = app.add_subcommand("synthesize", "explore and synthesize curated tasks");
    std::string synth_env = "gridmap", synth_profile, synth_prefs, synth_out = "tasks.jsonl";
    int synth_count = 4;
    synth->add_option("--env", synth_env, "environment name");
    synth->add_option("--profile", synth_profile, "environment profile json file");
    synth->add_option("--prefs", synth_prefs, "user preference json file");
    synth->add_option("--count", synth_count, "accepted task target");
    synth->add_option("--out", synth_out, "output tasks.jsonl");

    // pool build | query
    auto* pool_cmd = app.add_subcommand("pool", "experience pool operations");
    auto* pool_build = pool_cmd->add_subcommand("build", "build the cold-start pool");
    std::string pool_tasks = "tasks.jsonl", pool_out = "experiences.jsonl";
    pool_build->add_option("--tasks", pool_tasks, "tasks jsonl");
    pool_build->add_option("--out", pool_out, "output experiences jsonl");
    auto* pool_query = pool_cmd->add_subcommand("query", "query the pool");
    std::string query_text, pool_path = "experiences.jsonl";
    int top_k = 5;
    pool_query->add_option("--pool", pool_path, "experiences jsonl");
    pool_query->add_option("--query", query_text, "query text")->required();
    pool_query->add_option("--top-k", top_k, "results to return");

    // rollout
    auto* rollout_cmd = app.add_subcommand("rollout", "roll out trajectories for tasks");
    std::string rollout_tasks = "tasks.jsonl", rollout_out = "trajectories.jsonl";
    int rollout_n = 8;
    rollout_cmd->add_option("--tasks", rollout_tasks, "tasks jsonl");
    rollout_cmd->add_option("--n", rollout_n, "rollouts per task");
    rollout_cmd->add_option("--out", rollout_out, "output trajectories jsonl");

    // train
    auto* train_cmd = app.add_subcommand("train", "run optimization iterations only");
    int train_iters = 0;
    train_cmd->add_option("--iterations", train_iters, "override iteration count");

    // evolve
    auto* evolve_cmd = app.add_subcommand("evolve", "run the full four-stage loop");
    std::string resume_path;
    bool no_attr = false, no_nav = false, no_quest = false, embedded_env = true;
    std::string tasks_file, env_url;
    int refresh_pool = -1;
    evolve_cmd->add_option("--resume", resume_path, "checkpoint to resume from");
    evolve_cmd->add_flag("--no-attribution", no_attr, "outcome-only advantages");
    evolve_cmd->add_flag("--no-navigating", no_nav, "disable experience guidance");
    evolve_cmd->add_flag("--no-questioning", no_quest, "use a provided task file");
    evolve_cmd->add_option("--tasks", tasks_file, "task file for --no-questioning");
    evolve_cmd->add_option("--env-url", env_url, "remote env service base url");
    evolve_cmd->add_flag("--embedded-env,!--no-embedded-env", embedded_env,
                         "spawn the env service in-process (default)");
    evolve_cmd->add_option("--refresh-pool-every", refresh_pool,
                           "rebuild the pool every N iterations");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a policy checkpoint");
    std::string eval_ckpt;
    int eval_rollouts = 8;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint json")->required();
    eval_cmd->add_option("--rollouts", eval_rollouts, "rollouts per task");

    // serve-env
    auto* serve_cmd = app.add_subcommand("serve-env", "serve environments over http");
    std::string host = "127.0.0.1";
    int port = 8088;
    serve_cmd->add_option("--host", host, "bind host");
    serve_cmd->add_option("--port", port, "bind port");

    // plot
    auto* plot_cmd = app.add_subcommand("plot", "emit reward/loss curves from metrics.csv");
    std::string metrics_path = "metrics.csv", plot_dir = ".";
    plot_cmd->add_option("metrics", metrics_path, "metrics csv path");
    plot_cmd->add_option("--out-dir", plot_dir, "directory for the svg files");

    // config
    auto* config_cmd = app.add_subcommand("config", "configuration helpers");
    bool show_defaults = false;
    config_cmd->add_flag("--defaults", show_defaults, "print every default");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << app.help() << "\n";
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    seed_set = seed_opt->count() > 0;

    try {
        evolver::RunConfig cfg = load_config(config_path, seed, seed_set);

        if (*synth) {
            cfg.env_name = synth_env;
            if (!synth_profile.empty()) cfg.profile_path = synth_profile;
            if (!synth_prefs.empty()) cfg.prefs_path = synth_prefs;
            cfg.task_count = synth_count;
            std::vector<evolver::Task> tasks = evolver::synthesize_tasks(cfg);
            if (tasks.empty()) {
                std::cerr << "all candidates rejected\n";
                return kExitEmpty;
            }
            evolver::write_jsonl(synth_out, tasks);
            std::cout << "accepted " << tasks.size() << " tasks -> " << synth_out << "\n";
            return kExitOk;
        }

        if (*pool_build) {
            auto tasks = evolver::read_jsonl<evolver::Task>(pool_tasks);
            if (tasks.empty()) return kExitEmpty;
            auto backend = evolver::make_backend("mock", "", cfg.mock_scenario, cfg.seed);
            evolver::Gateway gateway(backend, cfg.embedding_dim);
            evolver::PolicySnapshot policy;
            policy.action_vocabulary = evolver::builtin_action_vocabulary(cfg.env_name);
            policy.temperature = cfg.temperature;
            evolver::BuildPoolOptions opts;
            opts.max_steps = cfg.max_steps;
            opts.seed = cfg.seed;
            opts.embedding_dim = cfg.embedding_dim;
            evolver::EnvSpec spec{cfg.env_name, cfg.env_config,
                                  evolver::builtin_profile(cfg.env_name)};
            auto factory = [&spec]() { return evolver::make_environment(spec); };
            evolver::ExperiencePool pool =
                evolver::build_pool(tasks, policy, factory, cfg.n_pc, gateway, opts);
            pool.save(pool_out, pool_out + ".meta");
            std::cout << "pool size " << pool.size() << " -> " << pool_out << "\n";
            return pool.size() > 0 ? kExitOk : kExitEmpty;
        }

        if (*pool_query) {
            evolver::ExperiencePool pool = evolver::ExperiencePool::load(pool_path);
            if (pool.size() == 0) return kExitEmpty;
            auto backend = evolver::make_backend("mock", "", cfg.mock_scenario, cfg.seed);
            evolver::Gateway gateway(backend, pool.embedding_dim());
            auto results = evolver::retrieve(query_text, pool, top_k, gateway);
            for (const auto& e : results)
                std::cout << e.id << "\t" << e.when_to_use << "\t" << e.content << "\n";
            return results.empty() ? kExitEmpty : kExitOk;
        }

        if (*rollout_cmd) {
            auto tasks = evolver::read_jsonl<evolver::Task>(rollout_tasks);
            if (tasks.empty()) return kExitEmpty;
            cfg.tasks_path = rollout_tasks;
            cfg.no_questioning = true;
            cfg.no_navigating = true;
            cfg.iterations = 0;
            cfg.epochs = 0;
            cfg.rollout_n = rollout_n;
            // one pass of rollouts without optimization
            evolver::RunConfig rcfg = cfg;
            rcfg.out_dir = std::filesystem::path(rollout_out).parent_path().empty()
                               ? "."
                               : std::filesystem::path(rollout_out).parent_path().string();
            rcfg.iterations = static_cast<int>(tasks.size());
            rcfg.checkpoint_every = 0;
            evolver::RunReport report = evolver::run_evolution(rcfg);
            std::filesystem::copy_file(rcfg.out_dir + "/trajectories.jsonl", rollout_out,
                                       std::filesystem::copy_options::overwrite_existing);
            std::cout << "rolled out " << rcfg.iterations * rcfg.rollout_n
                      << " trajectories -> " << rollout_out << "\n";
            return kExitOk;
        }

        if (*train_cmd || *evolve_cmd) {
            if (*evolve_cmd) {
                if (!resume_path.empty()) cfg.resume_path = resume_path;
                cfg.no_attribution = cfg.no_attribution || no_attr;
                cfg.no_navigating = cfg.no_navigating || no_nav;
                cfg.no_questioning = cfg.no_questioning || no_quest;
                if (!tasks_file.empty()) cfg.tasks_path = tasks_file;
                if (!env_url.empty() || !embedded_env) cfg.env_url = env_url;
                if (refresh_pool >= 0) cfg.refresh_pool_every = refresh_pool;
            }
            if (*train_cmd && train_iters > 0) cfg.iterations = train_iters;
            evolver::RunReport report = evolver::run_evolution(cfg);
            std::cout << "final_eval " << report.final_eval << " oracle "
                      << report.oracle_return << " pool " << report.pool_size << " -> "
                      << report.out_dir << "\n";
            return kExitOk;
        }

        if (*eval_cmd) {
            cfg.resume_path = eval_ckpt;
            cfg.iterations = 0;  // no training, checkpoint carries the iteration count
            cfg.eval_rollouts = eval_rollouts;
            evolver::RunConfig ecfg = cfg;
            ecfg.out_dir = cfg.out_dir + "-eval";
            // resume at the checkpoint's iteration so the loop body is skipped
            evolver::RunReport report = evolver::run_evolution(ecfg);
            std::cout << "final_eval " << report.final_eval << " oracle "
                      << report.oracle_return << "\n";
            return kExitOk;
        }

        if (*serve_cmd) {
            evolver::EnvRegistry registry;
            evolver::EnvHttpServer server(registry);
            std::cout << "serving environments on http://" << host << ":" << port << "\n";
            server.listen(host, port);
            return kExitOk;
        }

        if (*plot_cmd) {
            auto rows = evolver::read_metrics_csv(metrics_path);
            if (rows.empty()) return kExitEmpty;
            std::vector<double> rewards, losses;
            for (const auto& r : rows) {
                rewards.push_back(r.mean_reward);
                losses.push_back(r.loss);
            }
            std::filesystem::create_directories(plot_dir);
            write_svg_curve(plot_dir + "/reward.svg", "mean reward per iteration", rewards);
            write_svg_curve(plot_dir + "/loss.svg", "loss per iteration", losses);
            std::cout << "wrote " << plot_dir << "/reward.svg and " << plot_dir
                      << "/loss.svg\n";
            return kExitOk;
        }

        if (*config_cmd) {
            if (show_defaults) std::cout << evolver::run_config_defaults_text();
            return kExitOk;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
