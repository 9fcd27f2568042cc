#pragma once

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fairsel/common.hpp"
#include "fairsel/csv.hpp"

namespace fairsel {

// key = value config files. '#' starts a comment, blank lines skipped,
// whitespace around key and value trimmed. Duplicate keys are an error so a
// typo cannot silently lose a setting.
class KvConfig {
public:
    KvConfig() = default;

    static KvConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        KvConfig cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string val = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
            if (cfg.values_.count(key))
                throw ConfigError(path + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
            cfg.values_[key] = val;
        }
        return cfg;
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("missing config key: " + key);
        return it->second;
    }
    std::string get_string(const std::string& key, const std::string& dflt) const {
        return has(key) ? get_string(key) : dflt;
    }

    double get_double(const std::string& key) const {
        return parse_double(get_string(key), "config key " + key);
    }
    double get_double(const std::string& key, double dflt) const {
        return has(key) ? get_double(key) : dflt;
    }

    long long get_int(const std::string& key) const {
        return parse_int(get_string(key), "config key " + key);
    }
    long long get_int(const std::string& key, long long dflt) const {
        return has(key) ? get_int(key) : dflt;
    }

    bool get_bool(const std::string& key) const {
        const std::string v = get_string(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("config key " + key + ": expected boolean, got '" + v + "'");
    }
    bool get_bool(const std::string& key, bool dflt) const {
        return has(key) ? get_bool(key) : dflt;
    }

    // Rejects keys outside the allowlist so misspelled settings fail loudly.
    void require_known(const std::set<std::string>& allowed) const {
        for (const auto& [k, v] : values_) {
            if (!allowed.count(k))
                throw ConfigError("unknown config key: " + k);
        }
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        size_t b = s.find_first_not_of(" \t");
        if (b == std::string::npos) return "";
        size_t e = s.find_last_not_of(" \t");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

}  // namespace fairsel
