#ifndef EVOLVER_CONFIG_HPP
#define EVOLVER_CONFIG_HPP

#include <map>
#include <optional>
#include <string>

namespace evolver {

// Flat sectioned key-value file:
//   [section]
//   key = value    # comment
class KeyValueConfig {
public:
    static KeyValueConfig parse_file(const std::string& path);
    static KeyValueConfig parse_text(const std::string& text);

    std::optional<std::string> get(const std::string& section, const std::string& key) const;
    std::string get_or(const std::string& section, const std::string& key,
                       const std::string& fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    int get_int(const std::string& section, const std::string& key, int fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

    void set(const std::string& section, const std::string& key, const std::string& value);
    std::string dump() const;

private:
    // key: "section.key"
    std::map<std::string, std::string> values_;
};

}  // namespace evolver

#endif  // EVOLVER_CONFIG_HPP
