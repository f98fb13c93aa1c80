#pragma once
// Flat key=value run configuration: file parsing, flag-override merging, and
// typed lookups with defaults. Unknown keys are rejected by each consumer
// against its own allowed set, so typos fail loudly.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include "vts/common.hpp"

namespace vts::config {

using KV = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

// Lines are `key = value`; blank lines and `#` comments are skipped.
inline KV parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    KV kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string s = detail::trim(line);
        if (s.empty() || s[0] == '#') continue;
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                              ": expected key = value");
        const std::string key = detail::trim(s.substr(0, eq));
        const std::string value = detail::trim(s.substr(eq + 1));
        if (key.empty())
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": empty key");
        if (kv.count(key))
            throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                              ": duplicate key: " + key);
        kv[key] = value;
    }
    return kv;
}

// Command-line overrides win over file entries.
inline KV merge(KV base, const KV& overrides) {
    for (const auto& [k, v] : overrides) base[k] = v;
    return base;
}

inline void require_known(const KV& kv, const std::set<std::string>& allowed) {
    for (const auto& [k, v] : kv)
        if (!allowed.count(k)) throw ConfigError("unknown config key: " + k);
}

namespace detail {

template <typename T, typename Parse>
T lookup(const KV& kv, const std::string& key, T def, Parse parse) {
    const auto it = kv.find(key);
    if (it == kv.end()) return def;
    try {
        std::size_t used = 0;
        const T v = parse(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing text");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " has invalid value: " + it->second);
    }
}

}  // namespace detail

inline int get_int(const KV& kv, const std::string& key, int def) {
    return detail::lookup(kv, key, def,
                          [](const std::string& s, std::size_t* u) { return std::stoi(s, u); });
}

inline double get_double(const KV& kv, const std::string& key, double def) {
    return detail::lookup(kv, key, def,
                          [](const std::string& s, std::size_t* u) { return std::stod(s, u); });
}

inline std::uint64_t get_u64(const KV& kv, const std::string& key, std::uint64_t def) {
    return detail::lookup(kv, key, def, [](const std::string& s, std::size_t* u) {
        return static_cast<std::uint64_t>(std::stoull(s, u));
    });
}

inline std::string get_string(const KV& kv, const std::string& key, const std::string& def) {
    const auto it = kv.find(key);
    return it == kv.end() ? def : it->second;
}

}  // namespace vts::config
