#include "evolver/env.hpp"
#include "evolver/serialize.hpp"

#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace evolver {

namespace {

nlohmann::json spec_to_json(const EnvSpec& spec) {
    nlohmann::json j;
    j["name"] = spec.name;
    j["config"] = spec.config;
    j["profile"] = spec.profile;
    return j;
}

EnvSpec json_to_spec(const nlohmann::json& j) {
    EnvSpec spec;
    spec.name = j.at("name").get<std::string>();
    if (j.contains("config")) spec.config = j.at("config").get<std::map<std::string, std::string>>();
    if (j.contains("profile")) spec.profile = j.at("profile").get<EnvironmentProfile>();
    return spec;
}

// Maps lifecycle errors onto the wire contract.
template <typename Fn>
void guard(httplib::Response& res, Fn&& fn) {
    try {
        fn();
    } catch (const LifecycleError& e) {
        res.status = e.kind == LifecycleError::Kind::destroyed ? 409 : 404;
        res.set_content(nlohmann::json({{"error", e.what()}}).dump(), "application/json");
    } catch (const RegistryError& e) {
        res.status = 400;
        res.set_content(nlohmann::json({{"error", e.what()}}).dump(), "application/json");
    } catch (const std::exception& e) {
        res.status = 400;
        res.set_content(nlohmann::json({{"error", e.what()}}).dump(), "application/json");
    }
}

}  // namespace

void to_json_spec(const EnvSpec& spec, std::string& out) { out = spec_to_json(spec).dump(); }

EnvSpec spec_from_json(const std::string& body) {
    return json_to_spec(nlohmann::json::parse(body));
}

struct EnvHttpServer::Impl {
    explicit Impl(EnvRegistry& registry) : registry(registry) {
        server.Post("/instances", [this](const httplib::Request& req, httplib::Response& res) {
            guard(res, [&] {
                nlohmann::json body = nlohmann::json::parse(req.body);
                EnvSpec spec = json_to_spec(body.at("spec"));
                std::string id = this->registry.create(spec);
                res.set_content(nlohmann::json({{"instance_id", id}}).dump(),
                                "application/json");
            });
        });
        server.Get(R"(/instances/([^/]+)/state)",
                   [this](const httplib::Request& req, httplib::Response& res) {
                       guard(res, [&] {
                           std::string state = this->registry.state(req.matches[1]);
                           res.set_content(nlohmann::json({{"state", state}}).dump(),
                                           "application/json");
                       });
                   });
        server.Post(R"(/instances/([^/]+)/step)",
                    [this](const httplib::Request& req, httplib::Response& res) {
                        guard(res, [&] {
                            nlohmann::json body = nlohmann::json::parse(req.body);
                            StepOutcome out = this->registry.step(
                                req.matches[1], body.at("action").get<std::string>());
                            res.set_content(nlohmann::json({{"observation", out.observation},
                                                            {"done", out.done},
                                                            {"info", out.info}})
                                                .dump(),
                                            "application/json");
                        });
                    });
        server.Post(R"(/instances/([^/]+)/evaluate)",
                    [this](const httplib::Request& req, httplib::Response& res) {
                        guard(res, [&] {
                            nlohmann::json body = nlohmann::json::parse(req.body);
                            Task task = body.at("task").get<Task>();
                            EvalOutcome out = this->registry.evaluate(req.matches[1], task);
                            res.set_content(nlohmann::json({{"score", out.score},
                                                            {"detail", out.detail}})
                                                .dump(),
                                            "application/json");
                        });
                    });
        server.Delete(R"(/instances/([^/]+))",
                      [this](const httplib::Request& req, httplib::Response& res) {
                          guard(res, [&] {
                              this->registry.destroy(req.matches[1]);
                              res.set_content(nlohmann::json({{"ok", true}}).dump(),
                                              "application/json");
                          });
                      });
    }

    EnvRegistry& registry;
    httplib::Server server;
    std::thread thread;
};

EnvHttpServer::EnvHttpServer(EnvRegistry& registry) : impl_(std::make_unique<Impl>(registry)) {}

EnvHttpServer::~EnvHttpServer() { stop(); }

int EnvHttpServer::listen_on_any_port(const std::string& host) {
    int port = impl_->server.bind_to_any_port(host);
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return port;
}

void EnvHttpServer::listen(const std::string& host, int port) {
    impl_->server.listen(host, port);
}

void EnvHttpServer::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
    if (impl_ && impl_->thread.joinable()) impl_->thread.join();
}

EnvHttpClient::EnvHttpClient(std::string base_url) : base_url_(std::move(base_url)) {}

namespace {

nlohmann::json expect_json(const httplib::Result& res, const std::string& what) {
    if (!res) throw std::runtime_error("env service unreachable during " + what);
    nlohmann::json j = nlohmann::json::parse(res->body);
    if (res->status == 404)
        throw LifecycleError(j.value("error", what), LifecycleError::Kind::not_found);
    if (res->status == 409)
        throw LifecycleError(j.value("error", what), LifecycleError::Kind::destroyed);
    if (res->status != 200) throw RegistryError(j.value("error", what));
    return j;
}

}  // namespace

std::string EnvHttpClient::create(const EnvSpec& spec) {
    httplib::Client client(base_url_);
    nlohmann::json body;
    body["spec"] = spec_to_json(spec);
    auto res = client.Post("/instances", body.dump(), "application/json");
    return expect_json(res, "create").at("instance_id").get<std::string>();
}

std::string EnvHttpClient::state(const std::string& instance_id) const {
    httplib::Client client(base_url_);
    auto res = client.Get("/instances/" + instance_id + "/state");
    return expect_json(res, "state").at("state").get<std::string>();
}

StepOutcome EnvHttpClient::step(const std::string& instance_id, const std::string& action) {
    httplib::Client client(base_url_);
    nlohmann::json body{{"action", action}};
    auto res = client.Post("/instances/" + instance_id + "/step", body.dump(),
                           "application/json");
    nlohmann::json j = expect_json(res, "step");
    StepOutcome out;
    out.observation = j.at("observation").get<std::string>();
    out.done = j.at("done").get<bool>();
    out.info = j.at("info").get<std::map<std::string, std::string>>();
    return out;
}

EvalOutcome EnvHttpClient::evaluate(const std::string& instance_id, const Task& task) const {
    httplib::Client client(base_url_);
    nlohmann::json body;
    body["task"] = task;
    auto res = client.Post("/instances/" + instance_id + "/evaluate", body.dump(),
                           "application/json");
    nlohmann::json j = expect_json(res, "evaluate");
    return {j.at("score").get<double>(), j.at("detail").get<std::string>()};
}

void EnvHttpClient::destroy(const std::string& instance_id) {
    httplib::Client client(base_url_);
    auto res = client.Delete("/instances/" + instance_id);
    expect_json(res, "destroy");
}

}  // namespace evolver
