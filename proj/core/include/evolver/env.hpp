#ifndef EVOLVER_ENV_HPP
#define EVOLVER_ENV_HPP

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "evolver/types.hpp"

namespace evolver {

struct StepOutcome {
    std::string observation;
    bool done = false;
    std::map<std::string, std::string> info;
};

struct EvalOutcome {
    double score = 0.0;
    std::string detail;
};

struct EnvSpec {
    std::string name;
    std::map<std::string, std::string> config;
    EnvironmentProfile profile;  // filled from the registry default when empty
};

// One live environment episode. Invalid actions are soft failures: the
// observation describes the error and the state is unchanged; only an
// undefined operation name is flagged in info["error"], which feasibility
// replay treats as a hard failure.
class Environment {
public:
    virtual ~Environment() = default;
    virtual std::string state() const = 0;
    virtual StepOutcome step(const std::string& action) = 0;
    virtual EvalOutcome evaluate(const Task& task) const = 0;
    virtual std::vector<std::string> action_vocabulary() const = 0;
    virtual bool done() const = 0;
};

using EnvFactory = std::function<std::unique_ptr<Environment>()>;

std::unique_ptr<Environment> make_environment(const EnvSpec& spec);
EnvironmentProfile builtin_profile(const std::string& env_name);
std::vector<std::string> builtin_action_vocabulary(const std::string& env_name);
bool environment_registered(const std::string& env_name);

class RegistryError : public std::runtime_error {
public:
    explicit RegistryError(std::string message) : std::runtime_error(std::move(message)) {}
};

class LifecycleError : public std::runtime_error {
public:
    enum class Kind { not_found, destroyed };
    LifecycleError(std::string message, Kind kind)
        : std::runtime_error(std::move(message)), kind(kind) {}
    Kind kind;
};

enum class InstanceStatus { active, done, destroyed };

// Instance lifecycle on top of make_environment. Create/step/destroy are safe
// to call concurrently across distinct ids; per-instance operations serialize
// on the instance's own mutex, there is no global lock on the step path.
class EnvRegistry {
public:
    std::string create(const EnvSpec& spec);
    std::string state(const std::string& instance_id) const;
    StepOutcome step(const std::string& instance_id, const std::string& action);
    EvalOutcome evaluate(const std::string& instance_id, const Task& task) const;
    void destroy(const std::string& instance_id);  // idempotent on destroyed ids
    InstanceStatus status(const std::string& instance_id) const;
    int step_count(const std::string& instance_id) const;

private:
    struct Instance {
        std::unique_ptr<Environment> env;
        EnvSpec spec;
        InstanceStatus status = InstanceStatus::active;
        int step_count = 0;
        mutable std::mutex mu;
    };

    std::shared_ptr<Instance> find(const std::string& instance_id) const;

    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<Instance>> instances_;
    std::set<std::string> destroyed_;
    uint64_t next_id_ = 1;
};

// Serves an EnvRegistry over HTTP:
//   POST   /instances                {"spec":...}   -> {"instance_id"}
//   GET    /instances/{id}/state                    -> {"state"}
//   POST   /instances/{id}/step      {"action"}     -> {"observation","done","info"}
//   POST   /instances/{id}/evaluate  {"task"}       -> {"score","detail"}
//   DELETE /instances/{id}                          -> {"ok"}
// 404 unknown id, 409 destroyed, 400 malformed.
class EnvHttpServer {
public:
    explicit EnvHttpServer(EnvRegistry& registry);
    ~EnvHttpServer();
    int listen_on_any_port(const std::string& host = "127.0.0.1");
    void listen(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Same interface contract as EnvRegistry, over the wire.
class EnvHttpClient {
public:
    explicit EnvHttpClient(std::string base_url);
    std::string create(const EnvSpec& spec);
    std::string state(const std::string& instance_id) const;
    StepOutcome step(const std::string& instance_id, const std::string& action);
    EvalOutcome evaluate(const std::string& instance_id, const Task& task) const;
    void destroy(const std::string& instance_id);

private:
    std::string base_url_;
};

void to_json_spec(const EnvSpec& spec, std::string& out);
EnvSpec spec_from_json(const std::string& body);

}  // namespace evolver

#endif  // EVOLVER_ENV_HPP
