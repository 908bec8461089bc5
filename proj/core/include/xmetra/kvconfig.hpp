#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "xmetra/errors.hpp"

namespace xmetra {

// Flat key-value configuration with dotted section keys, e.g.
//   meta.alpha = 0.001
// Lines starting with '#' are comments. CLI overrides replace file values.
class KvConfig {
public:
    static KvConfig from_file(const std::string& path);
    static KvConfig from_string(const std::string& text);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;

    std::string get_string(const std::string& key) const;  // ConfigError when absent
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    // Comma-separated lists; empty or absent -> fallback.
    std::vector<double> get_doubles(const std::string& key,
                                    const std::vector<double>& fallback) const;
    std::vector<std::uint64_t> get_uints(const std::string& key,
                                         const std::vector<std::uint64_t>& fallback) const;
    std::vector<std::string> get_strings(const std::string& key,
                                         const std::vector<std::string>& fallback) const;

    const std::map<std::string, std::string>& entries() const { return kv_; }

    // Rejects keys outside `known`; catches config typos early.
    void require_known_keys(const std::set<std::string>& known) const;

    // Sorted key=value lines (the config echo file).
    std::string echo() const;

private:
    std::map<std::string, std::string> kv_;
    std::set<std::string> accessed_;
};

}  // namespace xmetra
