#include "evolver/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "evolver/types.hpp"

namespace evolver {

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_text(buffer.str());
}

KeyValueConfig KeyValueConfig::parse_text(const std::string& text) {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = normalize_whitespace(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::runtime_error("config line " + std::to_string(line_no) +
                                         ": unterminated section header");
            section = normalize_whitespace(line.substr(1, line.size() - 2));
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     ": expected key = value");
        std::string key = normalize_whitespace(line.substr(0, eq));
        std::string value = normalize_whitespace(line.substr(eq + 1));
        cfg.values_[section + "." + key] = value;
    }
    return cfg;
}

std::optional<std::string> KeyValueConfig::get(const std::string& section,
                                               const std::string& key) const {
    auto it = values_.find(section + "." + key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::string KeyValueConfig::get_or(const std::string& section, const std::string& key,
                                   const std::string& fallback) const {
    auto v = get(section, key);
    return v ? *v : fallback;
}

double KeyValueConfig::get_double(const std::string& section, const std::string& key,
                                  double fallback) const {
    auto v = get(section, key);
    return v ? std::stod(*v) : fallback;
}

int KeyValueConfig::get_int(const std::string& section, const std::string& key,
                            int fallback) const {
    auto v = get(section, key);
    return v ? std::stoi(*v) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& section, const std::string& key,
                              bool fallback) const {
    auto v = get(section, key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw std::runtime_error("config value for " + section + "." + key + " is not a boolean");
}

void KeyValueConfig::set(const std::string& section, const std::string& key,
                         const std::string& value) {
    values_[section + "." + key] = value;
}

std::string KeyValueConfig::dump() const {
    std::string current_section;
    std::ostringstream out;
    bool first = true;
    for (const auto& [path, value] : values_) {
        size_t dot = path.find('.');
        std::string section = path.substr(0, dot);
        std::string key = path.substr(dot + 1);
        if (section != current_section || first) {
            if (!first) out << "\n";
            out << "[" << section << "]\n";
            current_section = section;
            first = false;
        }
        out << key << " = " << value << "\n";
    }
    return out.str();
}

}  // namespace evolver
