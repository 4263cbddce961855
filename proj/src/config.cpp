#include "sadet/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <istream>

namespace sadet {

namespace {

std::string trim(const std::string& s)
{
    const auto b = std::find_if_not(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
    const auto e = std::find_if_not(s.rbegin(), s.rend(), [](unsigned char c) { return std::isspace(c); }).base();
    return b < e ? std::string(b, e) : std::string();
}

template <typename T>
T parse_integer(const std::string& key, const std::string& text)
{
    T value{};
    const char* last = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), last, value);
    if (ec != std::errc() || ptr != last) throw ConfigError(key, "expected an integer, got '" + text + "'");
    return value;
}

} // namespace

Config Config::parse(std::istream& in)
{
    Config cfg;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno), "unterminated section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
        }
        std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno), "empty key");
        if (!section.empty()) key = section + "." + key;
        if (cfg.has(key)) throw ConfigError(key, "defined twice");
        cfg.entries_[key].value = trim(line.substr(eq + 1));
    }
    return cfg;
}

Config Config::load(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("--config", "cannot open " + path);
    return parse(in);
}

void Config::set(const std::string& key, const std::string& value) { entries_[key].value = value; }

const Config::Entry* Config::find(const std::string& key) const
{
    const auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    it->second.used = true;
    return &it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const
{
    const Entry* e = find(key);
    return e ? e->value : fallback;
}

double Config::get_double(const std::string& key, double fallback) const
{
    const Entry* e = find(key);
    if (!e) return fallback;
    try {
        std::size_t used = 0;
        const double v = std::stod(e->value, &used);
        if (used != e->value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key, "expected a number, got '" + e->value + "'");
    }
}

int Config::get_int(const std::string& key, int fallback) const
{
    const Entry* e = find(key);
    return e ? parse_integer<int>(key, e->value) : fallback;
}

std::uint64_t Config::get_uint64(const std::string& key, std::uint64_t fallback) const
{
    const Entry* e = find(key);
    return e ? parse_integer<std::uint64_t>(key, e->value) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const
{
    const Entry* e = find(key);
    if (!e) return fallback;
    if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
    if (e->value == "false" || e->value == "0" || e->value == "no") return false;
    throw ConfigError(key, "expected true/false, got '" + e->value + "'");
}

std::vector<std::string> Config::unused_keys() const
{
    std::vector<std::string> out;
    for (const auto& [key, entry] : entries_) {
        if (!entry.used) out.push_back(key);
    }
    return out;
}

void Config::require_all_used() const
{
    const auto unused = unused_keys();
    if (!unused.empty()) throw ConfigError(unused.front(), "unknown key");
}

} // namespace sadet
