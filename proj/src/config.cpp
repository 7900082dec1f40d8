#include "plip/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "plip/errors.hpp"

namespace plip::cfg {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
    std::int64_t out = 0;
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || p != end) throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
    return out;
}

}  // namespace

ConfigMap ConfigMap::parse(const std::string& text, const std::string& origin) {
    ConfigMap m;
    std::istringstream in(text);
    std::string line;
    int no = 0;
    while (std::getline(in, line)) {
        ++no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + " line " + std::to_string(no) + ": expected key = value");
        const auto key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(origin + " line " + std::to_string(no) + ": empty key");
        m.values_[key] = trim(line.substr(eq + 1));
    }
    return m;
}

ConfigMap ConfigMap::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

void ConfigMap::merge(const ConfigMap& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string ConfigMap::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

std::int64_t ConfigMap::get_int(const std::string& key, std::int64_t fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_int(key, it->second);
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        std::size_t used = 0;
        const double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + it->second + "' is not a number");
    }
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto& v = it->second;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<std::int64_t> ConfigMap::get_int_list(const std::string& key, const std::vector<std::int64_t>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::int64_t> out;
    for (const auto& s : split_commas(it->second)) out.push_back(parse_int(key, s));
    return out;
}

std::vector<std::string> ConfigMap::get_string_list(const std::string& key, const std::vector<std::string>& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : split_commas(it->second);
}

void ConfigMap::check_known(const std::vector<std::string>& known) const {
    for (const auto& [k, _] : values_)
        if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown config key '" + k + "'");
}

std::string ConfigMap::to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string join_ints(const std::vector<std::int64_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

}  // namespace plip::cfg
