// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace djscc {

// Flat "key = value" text, one pair per line, '#' starts a comment. Used for
// the run configuration file and the model-config echo in checkpoints.

inline std::string kv_trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

/// Parse; duplicate keys are rejected. Order of first appearance preserved.
struct kv_text {
    std::vector<std::pair<std::string, std::string>> entries;

    static kv_text parse(const std::string& text) {
        kv_text out;
        std::size_t lineno = 0, pos = 0;
        while (pos <= text.size()) {
            const auto nl = text.find('\n', pos);
            std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
            pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = kv_trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("config line " + std::to_string(lineno) +
                                            ": expected 'key = value', got '" + line + "'");
            std::string key = kv_trim(line.substr(0, eq));
            std::string val = kv_trim(line.substr(eq + 1));
            if (key.empty())
                throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
            for (const auto& [k, v] : out.entries)
                if (k == key) throw std::invalid_argument("config: duplicate key '" + key + "'");
            out.entries.emplace_back(std::move(key), std::move(val));
        }
        return out;
    }

    bool has(const std::string& key) const {
        for (const auto& [k, v] : entries)
            if (k == key) return true;
        return false;
    }

    const std::string& get(const std::string& key) const {
        for (const auto& [k, v] : entries)
            if (k == key) return v;
        throw std::invalid_argument("config: missing key '" + key + "'");
    }
};

inline std::string kv_format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    // trim to the shortest representation that round-trips
    for (int prec = 1; prec < 17; ++prec) {
        char c[64];
        std::snprintf(c, sizeof c, "%.*g", prec, v);
        double back = 0;
        std::sscanf(c, "%lf", &back);
        if (back == v) return c;
    }
    return buf;
}

inline double kv_parse_double(const std::string& key, const std::string& s) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw std::invalid_argument("config: key '" + key + "': '" + s + "' is not a number");
    }
}

inline long long kv_parse_int(const std::string& key, const std::string& s) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw std::invalid_argument("config: key '" + key + "': '" + s + "' is not an integer");
    }
}

inline bool kv_parse_bool(const std::string& key, const std::string& s) {
    if (s == "1" || s == "true" || s == "yes") return true;
    if (s == "0" || s == "false" || s == "no") return false;
    throw std::invalid_argument("config: key '" + key + "': '" + s + "' is not a boolean");
}

/// Comma-separated list; empty string means empty list.
inline std::vector<std::string> kv_split_list(const std::string& s) {
    std::vector<std::string> out;
    if (kv_trim(s).empty()) return out;
    std::size_t pos = 0;
    while (true) {
        const auto c = s.find(',', pos);
        out.push_back(kv_trim(s.substr(pos, c == std::string::npos ? std::string::npos : c - pos)));
        if (c == std::string::npos) break;
        pos = c + 1;
    }
    return out;
}

}  // namespace djscc
