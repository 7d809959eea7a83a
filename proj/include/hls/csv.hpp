#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hls/errors.hpp"

namespace hls {

/// Shortest round-trip-safe text for a double (17 significant digits).
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Table {
    std::string name; // file stem
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add(std::vector<std::string> row) {
        if (row.size() != header.size())
            throw config_error("table " + name + ": row has " + std::to_string(row.size()) + " fields, header has " +
                               std::to_string(header.size()));
        rows.push_back(std::move(row));
    }

    std::size_t column(const std::string& key) const {
        for (std::size_t j = 0; j < header.size(); ++j)
            if (header[j] == key) return j;
        throw config_error("table " + name + ": no column '" + key + "'");
    }

    std::string to_csv() const {
        std::string out;
        auto line = [&](const std::vector<std::string>& r) {
            for (std::size_t j = 0; j < r.size(); ++j) {
                if (j) out += ',';
                out += r[j];
            }
            out += '\n';
        };
        line(header);
        for (const auto& r : rows) line(r);
        return out;
    }
};

/// Parses simple comma-separated text: first line is the header, no quoting.
inline Table parse_csv(const std::string& text, const std::string& name = "csv") {
    Table t;
    t.name = name;
    std::istringstream in(text);
    std::string line;
    auto split = [](const std::string& s) {
        std::vector<std::string> f;
        std::string cur;
        for (char c : s) {
            if (c == ',') {
                f.push_back(cur);
                cur.clear();
            } else if (c != '\r') {
                cur += c;
            }
        }
        f.push_back(cur);
        for (auto& x : f) {
            const auto b = x.find_first_not_of(" \t");
            const auto e = x.find_last_not_of(" \t");
            x = b == std::string::npos ? std::string{} : x.substr(b, e - b + 1);
        }
        return f;
    };
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r" || line[0] == '#') continue;
        if (t.header.empty()) {
            t.header = split(line);
            continue;
        }
        auto r = split(line);
        if (r.size() != t.header.size())
            throw config_error(name + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                               " fields, got " + std::to_string(r.size()));
        t.rows.push_back(std::move(r));
    }
    if (t.header.empty()) throw config_error(name + ": empty file");
    return t;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Table read_csv(const std::string& path) { return parse_csv(read_text_file(path), path); }

inline double parse_double(const std::string& s, const std::string& what) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = b + s.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc{} || p != e) throw config_error(what + ": '" + s + "' is not a number");
    return v;
}

inline std::size_t parse_size(const std::string& s, const std::string& what) {
    std::size_t v = 0;
    const char* b = s.data();
    const char* e = b + s.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc{} || p != e) {
        // accept integral values written in scientific notation, e.g. 5e5
        const double d = parse_double(s, what);
        if (d < 0.0 || d != static_cast<double>(static_cast<std::size_t>(d)))
            throw config_error(what + ": '" + s + "' is not a nonnegative integer");
        return static_cast<std::size_t>(d);
    }
    return v;
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s + sep) {
        if (c == sep) {
            const auto b = cur.find_first_not_of(" \t");
            const auto e = cur.find_last_not_of(" \t");
            if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
            cur.clear();
        } else {
            cur += c;
        }
    }
    return out;
}

} // namespace hls
