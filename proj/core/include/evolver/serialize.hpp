#ifndef EVOLVER_SERIALIZE_HPP
#define EVOLVER_SERIALIZE_HPP

#include <stdexcept>
#include <string>
#include <vector>

#include "evolver/types.hpp"

#include "json.hpp"

namespace evolver {

// Raised when bytes cannot be decoded into a record. Carries the byte offset
// where parsing stopped and the field that failed, when known.
class DecodeError : public std::runtime_error {
public:
    DecodeError(std::string message, size_t offset, std::string field)
        : std::runtime_error(std::move(message)), offset(offset), field(std::move(field)) {}
    size_t offset = 0;
    std::string field;
};

void to_json(nlohmann::json& j, const Difficulty& d);
void from_json(const nlohmann::json& j, Difficulty& d);
void to_json(nlohmann::json& j, const UserPreference& p);
void from_json(const nlohmann::json& j, UserPreference& p);
void to_json(nlohmann::json& j, const EnvironmentProfile& p);
void from_json(const nlohmann::json& j, EnvironmentProfile& p);
void to_json(nlohmann::json& j, const Task& t);
void from_json(const nlohmann::json& j, Task& t);
void to_json(nlohmann::json& j, const Step& s);
void from_json(const nlohmann::json& j, Step& s);
void to_json(nlohmann::json& j, const Trajectory& t);
void from_json(const nlohmann::json& j, Trajectory& t);
void to_json(nlohmann::json& j, const Experience& e);
void from_json(const nlohmann::json& j, Experience& e);
void to_json(nlohmann::json& j, const PolicySnapshot& p);
void from_json(const nlohmann::json& j, PolicySnapshot& p);

std::string guess_failed_field(const std::string& what);

// One record per line, UTF-8, LF endings.
template <typename T>
std::string serialize(const T& record) {
    nlohmann::json j = record;
    return j.dump();
}

template <typename T>
T deserialize(const std::string& bytes) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes);
    } catch (const nlohmann::json::parse_error& e) {
        throw DecodeError(e.what(), e.byte, "");
    }
    try {
        return j.get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw DecodeError(e.what(), bytes.size(), guess_failed_field(e.what()));
    }
}

template <typename T>
void write_jsonl(const std::string& path, const std::vector<T>& records);

template <typename T>
void append_jsonl(const std::string& path, const T& record);

template <typename T>
std::vector<T> read_jsonl(const std::string& path);

extern template void write_jsonl<Task>(const std::string&, const std::vector<Task>&);
extern template void write_jsonl<Trajectory>(const std::string&, const std::vector<Trajectory>&);
extern template void write_jsonl<Experience>(const std::string&, const std::vector<Experience>&);
extern template void append_jsonl<Task>(const std::string&, const Task&);
extern template void append_jsonl<Trajectory>(const std::string&, const Trajectory&);
extern template void append_jsonl<Experience>(const std::string&, const Experience&);
extern template std::vector<Task> read_jsonl<Task>(const std::string&);
extern template std::vector<Trajectory> read_jsonl<Trajectory>(const std::string&);
extern template std::vector<Experience> read_jsonl<Experience>(const std::string&);

}  // namespace evolver

#endif  // EVOLVER_SERIALIZE_HPP
