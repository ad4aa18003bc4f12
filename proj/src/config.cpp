#include "xdseg/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>

#include "xdseg/errors.hpp"

namespace xdseg {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

}  // namespace

KeyValueConfig KeyValueConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    KeyValueConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                              ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        if (key.empty())
            throw ConfigError("config: " + path + ":" + std::to_string(lineno) + ": empty key");
        cfg.values_[key] = trim(t.substr(eq + 1));
    }
    return cfg;
}

std::string KeyValueConfig::env_name(const std::string& key) {
    std::string name = "XDSEG_";
    for (char c : key)
        name += (c == '.' || c == '-') ? '_' : static_cast<char>(std::toupper(
                                                   static_cast<unsigned char>(c)));
    return name;
}

void KeyValueConfig::apply_env_overrides() {
    // Existing keys can be overridden; new keys can also arrive purely by env.
    for (auto& [key, value] : values_)
        if (const char* env = std::getenv(env_name(key).c_str())) value = env;
}

std::string KeyValueConfig::get(const std::string& key, const std::string& fallback) const {
    if (const char* env = std::getenv(env_name(key).c_str())) return env;
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
    const std::string s = get(key, "");
    if (s.empty()) return fallback;
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "': '" + s + "' is not a number");
    }
}

std::size_t KeyValueConfig::get_size(const std::string& key, std::size_t fallback) const {
    const std::string s = get(key, "");
    if (s.empty()) return fallback;
    try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "': '" + s + "' is not a count");
    }
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    const std::string s = get(key, "");
    if (s.empty()) return fallback;
    try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "': '" + s + "' is not an integer");
    }
}

}  // namespace xdseg
