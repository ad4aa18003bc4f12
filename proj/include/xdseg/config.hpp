#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace xdseg {

// Experiment settings as a flat `key = value` document ('#' starts a
// comment). Precedence: command-line flag > XDSEG_* environment variable >
// file value > built-in default; the CLI applies flags, this class handles
// the rest. Key "mim.epochs" maps to the variable XDSEG_MIM_EPOCHS.
class KeyValueConfig {
  public:
    KeyValueConfig() = default;

    static KeyValueConfig from_file(const std::string& path);

    // Pulls every XDSEG_<KEY> variable into the map (overriding file values).
    void apply_env_overrides();

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::size_t get_size(const std::string& key, std::size_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    const std::map<std::string, std::string>& values() const { return values_; }

    static std::string env_name(const std::string& key);  // "a.b" -> "XDSEG_A_B"

  private:
    std::map<std::string, std::string> values_;
};

}  // namespace xdseg
