#include "evolver/env.hpp"
#include "evolver/env_detail.hpp"

namespace evolver {

bool environment_registered(const std::string& env_name) {
    return env_name == "gridmap" || env_name == "toolbox";
}

std::unique_ptr<Environment> make_environment(const EnvSpec& spec) {
    if (spec.name == "gridmap") return make_gridmap(spec);
    if (spec.name == "toolbox") return make_toolbox(spec);
    throw RegistryError("unknown environment '" + spec.name + "'");
}

EnvironmentProfile builtin_profile(const std::string& env_name) {
    if (env_name == "gridmap") return gridmap_profile();
    if (env_name == "toolbox") return toolbox_profile();
    throw RegistryError("unknown environment '" + env_name + "'");
}

std::vector<std::string> builtin_action_vocabulary(const std::string& env_name) {
    if (env_name == "gridmap") return gridmap_vocabulary();
    if (env_name == "toolbox") return toolbox_vocabulary();
    throw RegistryError("unknown environment '" + env_name + "'");
}

std::string EnvRegistry::create(const EnvSpec& spec) {
    auto instance = std::make_shared<Instance>();
    instance->env = make_environment(spec);  // throws RegistryError on unknown names
    instance->spec = spec;
    std::lock_guard<std::mutex> lock(mu_);
    std::string id = "env-" + std::to_string(next_id_++);
    instances_[id] = std::move(instance);
    return id;
}

std::shared_ptr<EnvRegistry::Instance> EnvRegistry::find(const std::string& instance_id) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = instances_.find(instance_id);
    if (it != instances_.end()) return it->second;
    if (destroyed_.count(instance_id))
        throw LifecycleError("instance '" + instance_id + "' destroyed",
                             LifecycleError::Kind::destroyed);
    throw LifecycleError("instance '" + instance_id + "' not found",
                         LifecycleError::Kind::not_found);
}

std::string EnvRegistry::state(const std::string& instance_id) const {
    auto instance = find(instance_id);
    std::lock_guard<std::mutex> lock(instance->mu);
    return instance->env->state();
}

StepOutcome EnvRegistry::step(const std::string& instance_id, const std::string& action) {
    auto instance = find(instance_id);
    std::lock_guard<std::mutex> lock(instance->mu);
    StepOutcome outcome = instance->env->step(action);
    instance->step_count += 1;
    if (outcome.done) instance->status = InstanceStatus::done;
    return outcome;
}

EvalOutcome EnvRegistry::evaluate(const std::string& instance_id, const Task& task) const {
    auto instance = find(instance_id);
    std::lock_guard<std::mutex> lock(instance->mu);
    return instance->env->evaluate(task);
}

void EnvRegistry::destroy(const std::string& instance_id) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = instances_.find(instance_id);
    if (it != instances_.end()) {
        instances_.erase(it);
        destroyed_.insert(instance_id);
        return;
    }
    if (destroyed_.count(instance_id)) return;  // idempotent ack
    throw LifecycleError("instance '" + instance_id + "' not found",
                         LifecycleError::Kind::not_found);
}

InstanceStatus EnvRegistry::status(const std::string& instance_id) const {
    {
        std::lock_guard<std::mutex> lock(mu_);
        if (destroyed_.count(instance_id)) return InstanceStatus::destroyed;
    }
    auto instance = find(instance_id);
    std::lock_guard<std::mutex> lock(instance->mu);
    return instance->status;
}

int EnvRegistry::step_count(const std::string& instance_id) const {
    auto instance = find(instance_id);
    std::lock_guard<std::mutex> lock(instance->mu);
    return instance->step_count;
}

}  // namespace evolver
