#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

namespace ardx {

// Line-oriented "key = value" run configuration. Every key read through a
// getter is marked consumed; finish() rejects anything left over, so a
// typo'd key aborts before any computation.
class RunConfig {
public:
    RunConfig() = default;
    static RunConfig from_file(const std::string& path);
    static RunConfig from_string(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& key) const { return kv_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { kv_[key] = value; }

    std::string get_str(const std::string& key);
    std::string get_str(const std::string& key, const std::string& fallback);
    long long get_int(const std::string& key);
    long long get_int(const std::string& key, long long fallback);
    double get_double(const std::string& key);
    double get_double(const std::string& key, double fallback);
    bool get_bool(const std::string& key, bool fallback);
    uint64_t get_seed(uint64_t fallback); // the shared "seed" key

    // throws listing unconsumed keys
    void finish() const;

private:
    std::string require(const std::string& key);
    std::map<std::string, std::string> kv_;
    std::set<std::string> consumed_;
    std::string origin_ = "<empty>";
};

} // namespace ardx
