#pragma once

// Flat `key = value` run configuration. `[section]` lines prefix the keys
// that follow with "section.". Lines starting with '#' are comments.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace sadet {

class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& message)
        : std::runtime_error("config key '" + key + "': " + message), key_(std::move(key))
    {
    }
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

class Config {
public:
    static Config parse(std::istream& in);
    static Config load(const std::string& path);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const { return entries_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::uint64_t get_uint64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    /// Keys that were never read by a getter, in sorted order.
    std::vector<std::string> unused_keys() const;
    /// Throws ConfigError naming the first unread key.
    void require_all_used() const;

private:
    struct Entry {
        std::string value;
        mutable bool used = false;
    };
    const Entry* find(const std::string& key) const;

    std::map<std::string, Entry> entries_;
};

} // namespace sadet
