#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace plip::cfg {

/// Flat "key = value" settings. '#' starts a comment; later assignments win.
class ConfigMap {
public:
    static ConfigMap parse(const std::string& text, const std::string& origin = "<config>");
    static ConfigMap load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) > 0; }
    /// Copies every key of `other` over this map.
    void merge(const ConfigMap& other);

    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::int64_t> get_int_list(const std::string& key, const std::vector<std::int64_t>& fallback) const;
    std::vector<std::string> get_string_list(const std::string& key, const std::vector<std::string>& fallback) const;

    /// Throws ConfigError naming the first key not in `known`.
    void check_known(const std::vector<std::string>& known) const;

    const std::map<std::string, std::string>& values() const noexcept { return values_; }
    /// Sorted "key=value" lines.
    std::string to_text() const;

private:
    std::map<std::string, std::string> values_;
};

std::string format_double(double v);
std::string join_ints(const std::vector<std::int64_t>& v);

}  // namespace plip::cfg
