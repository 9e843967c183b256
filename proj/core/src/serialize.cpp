#include "evolver/serialize.hpp"

#include <fstream>
#include <regex>

namespace evolver {

namespace {

template <typename E>
E enum_from_string(const std::string& s, std::initializer_list<std::pair<const char*, E>> table,
                   const char* field) {
    for (const auto& [name, value] : table)
        if (s == name) return value;
    throw DecodeError("unknown value '" + s + "'", 0, field);
}

}  // namespace

void to_json(nlohmann::json& j, const Difficulty& d) {
    j = {{"n_entities", d.n_entities},
         {"n_attributes", d.n_attributes},
         {"n_operations", d.n_operations},
         {"level", to_string(d.level)}};
}

void from_json(const nlohmann::json& j, Difficulty& d) {
    j.at("n_entities").get_to(d.n_entities);
    j.at("n_attributes").get_to(d.n_attributes);
    j.at("n_operations").get_to(d.n_operations);
    d.level = enum_from_string<DifficultyLevel>(
        j.at("level").get<std::string>(),
        {{"easy", DifficultyLevel::easy},
         {"medium", DifficultyLevel::medium},
         {"hard", DifficultyLevel::hard}},
        "level");
}

void to_json(nlohmann::json& j, const UserPreference& p) {
    j = {{"difficulty", p.difficulty}, {"style_rubric", p.style_rubric}};
}

void from_json(const nlohmann::json& j, UserPreference& p) {
    j.at("difficulty").get_to(p.difficulty);
    j.at("style_rubric").get_to(p.style_rubric);
}

void to_json(nlohmann::json& j, const EnvironmentProfile& p) {
    j = nlohmann::json::object();
    j["entities"] = nlohmann::json::array();
    for (const auto& e : p.entities)
        j["entities"].push_back({{"name", e.name}, {"description", e.description}});
    j["attributes"] = nlohmann::json::array();
    for (const auto& a : p.attributes)
        j["attributes"].push_back(
            {{"name", a.name}, {"description", a.description}, {"entity", a.entity}});
    j["operations"] = nlohmann::json::array();
    for (const auto& o : p.operations)
        j["operations"].push_back({{"name", o.name}, {"description", o.description}});
}

void from_json(const nlohmann::json& j, EnvironmentProfile& p) {
    p = {};
    for (const auto& e : j.at("entities"))
        p.entities.push_back({e.at("name").get<std::string>(),
                              e.at("description").get<std::string>()});
    for (const auto& a : j.at("attributes"))
        p.attributes.push_back({a.at("name").get<std::string>(),
                                a.at("description").get<std::string>(),
                                a.at("entity").get<std::string>()});
    for (const auto& o : j.at("operations"))
        p.operations.push_back({o.at("name").get<std::string>(),
                                o.at("description").get<std::string>()});
}

void to_json(nlohmann::json& j, const Task& t) {
    j = nlohmann::json::object();
    j["id"] = t.id;
    j["query"] = t.query;
    j["reference_solution"] = nlohmann::json::array();
    for (const auto& s : t.reference_solution)
        j["reference_solution"].push_back(
            {{"action", s.action}, {"observation_summary", s.observation_summary}});
    j["difficulty"] = t.difficulty;
    j["origin"] = to_string(t.origin);
    if (t.embedding) j["embedding"] = *t.embedding;
}

void from_json(const nlohmann::json& j, Task& t) {
    t = {};
    j.at("id").get_to(t.id);
    j.at("query").get_to(t.query);
    for (const auto& s : j.at("reference_solution"))
        t.reference_solution.push_back({s.at("action").get<std::string>(),
                                        s.at("observation_summary").get<std::string>()});
    j.at("difficulty").get_to(t.difficulty);
    t.origin = enum_from_string<TaskOrigin>(
        j.at("origin").get<std::string>(),
        {{"synthetic", TaskOrigin::synthetic}, {"target", TaskOrigin::target}},
        "origin");
    if (j.contains("embedding"))
        t.embedding = j.at("embedding").get<std::vector<double>>();
}

void to_json(nlohmann::json& j, const Step& s) {
    j = {{"index", s.index},
         {"action", s.action},
         {"observation", s.observation},
         {"token_span", {{"start", s.token_span.start}, {"end", s.token_span.end}}}};
    if (s.think) j["think"] = *s.think;
}

void from_json(const nlohmann::json& j, Step& s) {
    s = {};
    j.at("index").get_to(s.index);
    j.at("action").get_to(s.action);
    j.at("observation").get_to(s.observation);
    s.token_span.start = j.at("token_span").at("start").get<int>();
    s.token_span.end = j.at("token_span").at("end").get<int>();
    if (j.contains("think")) s.think = j.at("think").get<std::string>();
}

void to_json(nlohmann::json& j, const Trajectory& t) {
    j = {{"id", t.id},
         {"task_id", t.task_id},
         {"steps", t.steps},
         {"terminal", t.terminal},
         {"truncated", t.truncated},
         {"guidance", to_string(t.guidance)},
         {"injected_experience_ids", t.injected_experience_ids},
         {"outcome_reward", t.outcome_reward},
         {"per_token_logprob_old", t.per_token_logprob_old}};
}

void from_json(const nlohmann::json& j, Trajectory& t) {
    t = {};
    j.at("id").get_to(t.id);
    j.at("task_id").get_to(t.task_id);
    j.at("steps").get_to(t.steps);
    j.at("terminal").get_to(t.terminal);
    j.at("truncated").get_to(t.truncated);
    t.guidance = enum_from_string<Guidance>(
        j.at("guidance").get<std::string>(),
        {{"vanilla", Guidance::vanilla}, {"experience", Guidance::experience}},
        "guidance");
    j.at("injected_experience_ids").get_to(t.injected_experience_ids);
    j.at("outcome_reward").get_to(t.outcome_reward);
    j.at("per_token_logprob_old").get_to(t.per_token_logprob_old);
}

void to_json(nlohmann::json& j, const Experience& e) {
    j = {{"id", e.id},
         {"when_to_use", e.when_to_use},
         {"content", e.content},
         {"embedding", e.embedding},
         {"provenance", to_string(e.provenance)},
         {"validated", e.validated}};
}

void from_json(const nlohmann::json& j, Experience& e) {
    e = {};
    j.at("id").get_to(e.id);
    j.at("when_to_use").get_to(e.when_to_use);
    j.at("content").get_to(e.content);
    j.at("embedding").get_to(e.embedding);
    e.provenance = enum_from_string<Provenance>(
        j.at("provenance").get<std::string>(),
        {{"success", Provenance::success},
         {"failure", Provenance::failure},
         {"comparative", Provenance::comparative}},
        "provenance");
    j.at("validated").get_to(e.validated);
}

void to_json(nlohmann::json& j, const PolicySnapshot& p) {
    j = {{"kind", p.kind == PolicyKind::tabular_softmax ? "tabular_softmax" : "external"},
         {"action_vocabulary", p.action_vocabulary},
         {"logits", p.logits},
         {"temperature", p.temperature}};
}

void from_json(const nlohmann::json& j, PolicySnapshot& p) {
    p = {};
    p.kind = enum_from_string<PolicyKind>(
        j.at("kind").get<std::string>(),
        {{"tabular_softmax", PolicyKind::tabular_softmax},
         {"external", PolicyKind::external}},
        "kind");
    j.at("action_vocabulary").get_to(p.action_vocabulary);
    j.at("logits").get_to(p.logits);
    j.at("temperature").get_to(p.temperature);
}

std::string guess_failed_field(const std::string& what) {
    // nlohmann reports missing keys as: [json.exception.out_of_range.403] key 'x' not found
    static const std::regex key_re("key '([^']+)'");
    std::smatch m;
    if (std::regex_search(what, m, key_re)) return m[1];
    return "";
}

template <typename T>
void write_jsonl(const std::string& path, const std::vector<T>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    for (const auto& r : records) out << serialize(r) << '\n';
}

template <typename T>
void append_jsonl(const std::string& path, const T& record) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw std::runtime_error("cannot open for append: " + path);
    out << serialize(record) << '\n';
}

template <typename T>
std::vector<T> read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for read: " + path);
    std::vector<T> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            records.push_back(deserialize<T>(line));
        } catch (const DecodeError& e) {
            throw DecodeError(path + ":" + std::to_string(line_no) + ": " + e.what(),
                              e.offset, e.field);
        }
    }
    return records;
}

template void write_jsonl<Task>(const std::string&, const std::vector<Task>&);
template void write_jsonl<Trajectory>(const std::string&, const std::vector<Trajectory>&);
template void write_jsonl<Experience>(const std::string&, const std::vector<Experience>&);
template void append_jsonl<Task>(const std::string&, const Task&);
template void append_jsonl<Trajectory>(const std::string&, const Trajectory&);
template void append_jsonl<Experience>(const std::string&, const Experience&);
template std::vector<Task> read_jsonl<Task>(const std::string&);
template std::vector<Trajectory> read_jsonl<Trajectory>(const std::string&);
template std::vector<Experience> read_jsonl<Experience>(const std::string&);

}  // namespace evolver
