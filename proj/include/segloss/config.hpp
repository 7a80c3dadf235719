#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "segloss/errors.hpp"

namespace segloss {

// Flat key = value configuration. '#' starts a comment, blank lines are
// skipped, keys must be unique. Callers list the keys they understand via
// check_known so typos fail loudly instead of silently using defaults.
class KeyValueConfig {
public:
    static KeyValueConfig parse_string(const std::string& text) {
        KeyValueConfig cfg;
        std::istringstream in(text);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const std::size_t eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw ValidationError("config line " + std::to_string(line_no) + ": empty key");
            if (value.empty())
                throw ValidationError("config line " + std::to_string(line_no) + ": empty value for " + key);
            if (!cfg.entries_.emplace(key, value).second)
                throw ValidationError("config line " + std::to_string(line_no) + ": duplicate key " + key);
        }
        return cfg;
    }

    static KeyValueConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("config: cannot open " + path);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return parse_string(text);
    }

    bool has(const std::string& key) const { return entries_.count(key) != 0; }

    std::string get_string(const std::string& key) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) throw ValidationError("config: missing required key " + key);
        return it->second;
    }

    std::string get_string_or(const std::string& key, const std::string& fallback) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key) const { return to_double(key, get_string(key)); }
    double get_double_or(const std::string& key, double fallback) const {
        return has(key) ? get_double(key) : fallback;
    }

    std::uint64_t get_u64(const std::string& key) const { return to_u64(key, get_string(key)); }
    std::uint64_t get_u64_or(const std::string& key, std::uint64_t fallback) const {
        return has(key) ? get_u64(key) : fallback;
    }

    bool get_bool(const std::string& key) const {
        const std::string v = get_string(key);
        if (v == "true") return true;
        if (v == "false") return false;
        throw ValidationError("config: key " + key + " must be true or false, got " + v);
    }
    bool get_bool_or(const std::string& key, bool fallback) const { return has(key) ? get_bool(key) : fallback; }

    std::vector<double> get_doubles(const std::string& key) const {
        std::vector<double> out;
        for (const std::string& item : split(get_string(key), ',')) out.push_back(to_double(key, item));
        if (out.empty()) throw ValidationError("config: key " + key + " lists no values");
        return out;
    }

    std::vector<std::size_t> get_sizes(const std::string& key) const {
        std::vector<std::size_t> out;
        for (const std::string& item : split(get_string(key), 'x'))
            out.push_back(static_cast<std::size_t>(to_u64(key, item)));
        if (out.empty()) throw ValidationError("config: key " + key + " lists no extents");
        return out;
    }

    std::vector<std::string> get_list(const std::string& key) const {
        std::vector<std::string> out = split(get_string(key), ',');
        if (out.empty()) throw ValidationError("config: key " + key + " lists no entries");
        return out;
    }

    // Rejects keys outside the accepted schema, naming each stranger.
    void check_known(const std::set<std::string>& known) const {
        std::string strangers;
        for (const auto& [key, value] : entries_) {
            if (!known.count(key)) {
                if (!strangers.empty()) strangers += ", ";
                strangers += key;
            }
        }
        if (!strangers.empty()) throw ValidationError("config: unknown keys: " + strangers);
    }

    const std::map<std::string, std::string>& entries() const { return entries_; }

    static std::vector<std::string> split(const std::string& text, char sep) {
        std::vector<std::string> out;
        std::string item;
        std::istringstream in(text);
        while (std::getline(in, item, sep)) {
            const std::string t = trim(item);
            if (!t.empty()) out.push_back(t);
        }
        return out;
    }

private:
    static std::string trim(const std::string& s) {
        const std::size_t from = s.find_first_not_of(" \t\r\n");
        if (from == std::string::npos) return "";
        const std::size_t to = s.find_last_not_of(" \t\r\n");
        return s.substr(from, to - from + 1);
    }

    static double to_double(const std::string& key, const std::string& value) {
        try {
            std::size_t used = 0;
            const double v = std::stod(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
            return v;
        } catch (const std::exception&) {
            throw ValidationError("config: key " + key + " is not a number: " + value);
        }
    }

    static std::uint64_t to_u64(const std::string& key, const std::string& value) {
        try {
            std::size_t used = 0;
            if (!value.empty() && value[0] == '-') throw std::invalid_argument(value);
            const std::uint64_t v = std::stoull(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
            return v;
        } catch (const std::exception&) {
            throw ValidationError("config: key " + key + " is not a non-negative integer: " + value);
        }
    }

    std::map<std::string, std::string> entries_;
};

} // namespace segloss
