#include <algorithm>
#include <set>
#include <sstream>

#include "evolver/env.hpp"
#include "evolver/env_detail.hpp"

namespace evolver {

namespace {

const std::vector<std::string>& toolbox_apis() {
    static const std::vector<std::string> apis = {"pay_bill", "get_balance", "send_message",
                                                  "book_ride"};
    return apis;
}

// Mock multi-API console. Argument schemas are hidden: a call only succeeds
// after show_api_doc has revealed the api's schema inside this episode.
class ToolBoxEnv : public Environment {
public:
    explicit ToolBoxEnv(const EnvSpec& spec) {
        auto it = spec.config.find("required_calls");
        std::string required = it != spec.config.end() ? it->second : "pay_bill,get_balance";
        std::istringstream in(required);
        std::string name;
        while (std::getline(in, name, ',')) {
            name = normalize_whitespace(name);
            if (name.empty()) continue;
            if (std::find(toolbox_apis().begin(), toolbox_apis().end(), name) ==
                toolbox_apis().end())
                throw RegistryError("toolbox: unknown required api '" + name + "'");
            required_.insert(name);
        }
        if (required_.empty()) throw RegistryError("toolbox: required_calls is empty");
    }

    std::string state() const override { return console_text("Tool console ready."); }

    StepOutcome step(const std::string& action) override {
        if (done_) return {"the episode has ended. " + console_text(""), true, {}};
        std::istringstream in(action);
        std::string op, api;
        in >> op >> api;

        if (op == "show_api_doc") {
            if (!known_api(api))
                return {"call failed: no api named '" + api + "'. " + console_text(""),
                        false,
                        {{"error", "bad_argument"}}};
            docs_seen_.insert(api);
            return {"doc for " + api + ": requires its schema token. " + console_text(""),
                    false,
                    {}};
        }
        if (op == "call") {
            if (!known_api(api))
                return {"call failed: no api named '" + api + "'. " + console_text(""),
                        false,
                        {{"error", "bad_argument"}}};
            if (!docs_seen_.count(api))
                return {"call failed: unknown argument schema for " + api +
                            "; consult show_api_doc. " + console_text(""),
                        false,
                        {}};
            calls_done_.insert(api);
            bool all = std::includes(calls_done_.begin(), calls_done_.end(),
                                     required_.begin(), required_.end());
            if (all) done_ = true;
            return {"call ok: " + api + " executed. " + console_text(""), done_, {}};
        }
        return {"unknown operation '" + op + "'. " + console_text(""),
                false,
                {{"error", "unknown_operation"}}};
    }

    EvalOutcome evaluate(const Task& /*task*/) const override {
        size_t hit = 0;
        for (const std::string& api : required_)
            if (calls_done_.count(api)) ++hit;
        double score = static_cast<double>(hit) / static_cast<double>(required_.size());
        return {score, std::to_string(hit) + " of " + std::to_string(required_.size()) +
                           " required calls made"};
    }

    std::vector<std::string> action_vocabulary() const override {
        return builtin_action_vocabulary("toolbox");
    }

    bool done() const override { return done_; }

private:
    static bool known_api(const std::string& api) {
        return std::find(toolbox_apis().begin(), toolbox_apis().end(), api) !=
               toolbox_apis().end();
    }

    std::string console_text(const std::string& prefix) const {
        std::ostringstream out;
        if (!prefix.empty()) out << prefix << " ";
        out << "apis: ";
        for (size_t i = 0; i < toolbox_apis().size(); ++i)
            out << (i ? ", " : "") << toolbox_apis()[i];
        out << ". docs seen: [" << join(docs_seen_) << "]. calls completed: ["
            << join(calls_done_) << "].";
        return out.str();
    }

    static std::string join(const std::set<std::string>& items) {
        std::string out;
        for (const std::string& s : items) {
            if (!out.empty()) out += ", ";
            out += s;
        }
        return out;
    }

    std::set<std::string> required_;
    std::set<std::string> docs_seen_;
    std::set<std::string> calls_done_;
    bool done_ = false;
};

}  // namespace

std::unique_ptr<Environment> make_toolbox(const EnvSpec& spec) {
    return std::make_unique<ToolBoxEnv>(spec);
}

EnvironmentProfile toolbox_profile() {
    EnvironmentProfile p;
    p.entities = {
        {"console", "a tool console exposing several remote apis"},
        {"pay_bill", "api that settles an open bill"},
        {"get_balance", "api that reports the account balance"},
        {"send_message", "api that delivers a message"},
        {"book_ride", "api that schedules a ride"},
    };
    p.attributes = {
        {"api_doc", "hidden argument schema revealed by show_api_doc", "console"},
    };
    p.operations = {
        {"show_api_doc", "reveal the argument schema of an api"},
        {"call", "invoke an api whose schema has been revealed"},
    };
    return p;
}

std::vector<std::string> toolbox_vocabulary() {
    std::vector<std::string> vocab;
    for (const std::string& api : toolbox_apis()) vocab.push_back("show_api_doc " + api);
    for (const std::string& api : toolbox_apis()) vocab.push_back("call " + api);
    return vocab;
}

}  // namespace evolver
