#include "xmetra/kvconfig.hpp"

#include <fstream>
#include <sstream>

namespace xmetra {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(value);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace

KvConfig KvConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return from_string(buf.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

KvConfig KvConfig::from_string(const std::string& text) {
    KvConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key=value, got '" +
                              stripped + "'");
        const std::string key = trim(stripped.substr(0, eq));
        if (key.empty())
            throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        cfg.kv_[key] = trim(stripped.substr(eq + 1));
    }
    return cfg;
}

void KvConfig::set(const std::string& key, const std::string& value) {
    if (key.empty()) throw ConfigError("config: empty key in override");
    kv_[key] = value;
}

bool KvConfig::has(const std::string& key) const { return kv_.count(key) != 0; }

std::string KvConfig::get_string(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("config: missing required key '" + key + "'");
    return it->second;
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        std::size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' is not a number: " + it->second);
    }
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        std::size_t pos = 0;
        const std::int64_t v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' is not an integer: " + it->second);
    }
}

std::uint64_t KvConfig::get_uint(const std::string& key, std::uint64_t fallback) const {
    const std::int64_t v = get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError("config: key '" + key + "' must be non-negative");
    return static_cast<std::uint64_t>(v);
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config: key '" + key + "' is not a boolean: " + it->second);
}

std::vector<double> KvConfig::get_doubles(const std::string& key,
                                          const std::vector<double>& fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end() || trim(it->second).empty()) return fallback;
    std::vector<double> out;
    for (const std::string& item : split_list(it->second)) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ConfigError("config: key '" + key + "' has a non-numeric item: " + item);
        }
    }
    return out;
}

std::vector<std::uint64_t> KvConfig::get_uints(
    const std::string& key, const std::vector<std::uint64_t>& fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end() || trim(it->second).empty()) return fallback;
    std::vector<std::uint64_t> out;
    for (const std::string& item : split_list(it->second)) {
        try {
            const long long v = std::stoll(item);
            if (v < 0) throw std::invalid_argument("negative");
            out.push_back(static_cast<std::uint64_t>(v));
        } catch (const std::exception&) {
            throw ConfigError("config: key '" + key + "' has a bad integer item: " + item);
        }
    }
    return out;
}

std::vector<std::string> KvConfig::get_strings(const std::string& key,
                                               const std::vector<std::string>& fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end() || trim(it->second).empty()) return fallback;
    return split_list(it->second);
}

void KvConfig::require_known_keys(const std::set<std::string>& known) const {
    for (const auto& [key, value] : kv_) {
        if (!known.count(key))
            throw ConfigError("config: unknown key '" + key + "'");
    }
}

std::string KvConfig::echo() const {
    std::ostringstream out;
    for (const auto& [key, value] : kv_) out << key << " = " << value << '\n';
    return out.str();
}

}  // namespace xmetra
