#include "ardx/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ardx {

namespace {

std::string trim(const std::string& s) {
    const size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

} // namespace

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return from_string(buf.str(), path);
}

RunConfig RunConfig::from_string(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    cfg.origin_ = origin;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                                     ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": empty key");
        if (cfg.kv_.count(key))
            throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": duplicate key " +
                                     key);
        cfg.kv_[key] = value;
    }
    return cfg;
}

std::string RunConfig::require(const std::string& key) {
    const auto it = kv_.find(key);
    if (it == kv_.end()) throw std::runtime_error(origin_ + ": missing required key " + key);
    consumed_.insert(key);
    return it->second;
}

std::string RunConfig::get_str(const std::string& key) { return require(key); }

std::string RunConfig::get_str(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    return require(key);
}

long long RunConfig::get_int(const std::string& key) {
    const std::string v = require(key);
    size_t used = 0;
    long long out = 0;
    try {
        out = std::stoll(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty())
        throw std::runtime_error(origin_ + ": key " + key + " is not an integer: " + v);
    return out;
}

long long RunConfig::get_int(const std::string& key, long long fallback) {
    return has(key) ? get_int(key) : fallback;
}

double RunConfig::get_double(const std::string& key) {
    const std::string v = require(key);
    size_t used = 0;
    double out = 0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty())
        throw std::runtime_error(origin_ + ": key " + key + " is not a number: " + v);
    return out;
}

double RunConfig::get_double(const std::string& key, double fallback) {
    return has(key) ? get_double(key) : fallback;
}

bool RunConfig::get_bool(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const std::string v = require(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::runtime_error(origin_ + ": key " + key + " is not a boolean: " + v);
}

uint64_t RunConfig::get_seed(uint64_t fallback) {
    return uint64_t(get_int("seed", (long long)fallback));
}

void RunConfig::finish() const {
    std::string unknown;
    for (const auto& [k, v] : kv_)
        if (!consumed_.count(k)) unknown += unknown.empty() ? k : ", " + k;
    if (!unknown.empty())
        throw std::runtime_error(origin_ + ": unknown config keys: " + unknown);
}

} // namespace ardx
