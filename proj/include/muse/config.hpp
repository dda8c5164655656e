#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "muse/common.hpp"

namespace muse {

// Flat key=value configuration with TOML-style syntax: `[section]` headers,
// dotted keys, `#` comments, strings, numbers, booleans and flat arrays.
// CLI overrides use the same `dotted.key=value` grammar.
class Config {
public:
    Config() = default;

    static Config parse_string(const std::string& text) {
        Config cfg;
        std::istringstream in(text);
        std::string line;
        std::string section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string t = strip(strip_comment(line));
            if (t.empty()) continue;
            if (t.front() == '[') {
                if (t.back() != ']') throw config_error("config line " + std::to_string(lineno) + ": bad section header");
                section = strip(t.substr(1, t.size() - 2));
                if (section.empty()) throw config_error("config line " + std::to_string(lineno) + ": empty section");
                continue;
            }
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw config_error("config line " + std::to_string(lineno) + ": expected key = value");
            std::string key = strip(t.substr(0, eq));
            const std::string value = strip(t.substr(eq + 1));
            if (key.empty() || value.empty())
                throw config_error("config line " + std::to_string(lineno) + ": empty key or value");
            if (!section.empty()) key = section + "." + key;
            cfg.values_[key] = value;
        }
        return cfg;
    }

    static Config parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw config_error("config file not readable: " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_string(ss.str());
    }

    // "a.b=v" override, same value grammar as the file format.
    void apply_override(const std::string& expr) {
        const auto eq = expr.find('=');
        if (eq == std::string::npos) throw config_error("override must be key=value: " + expr);
        const std::string key = strip(expr.substr(0, eq));
        const std::string value = strip(expr.substr(eq + 1));
        if (key.empty() || value.empty()) throw config_error("override must be key=value: " + expr);
        values_[key] = value;
    }

    void set(const std::string& key, const std::string& raw) { values_[key] = raw; }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_str(const std::string& key) const { return unquote(raw(key)); }
    std::string get_str(const std::string& key, const std::string& def) const {
        return has(key) ? get_str(key) : def;
    }

    long long get_int(const std::string& key) const {
        const std::string v = raw(key);
        try {
            std::size_t pos = 0;
            const long long r = std::stoll(v, &pos);
            if (pos != v.size()) throw config_error("");
            return r;
        } catch (...) {
            throw config_error("config key " + key + ": not an integer: " + v);
        }
    }
    long long get_int(const std::string& key, long long def) const { return has(key) ? get_int(key) : def; }

    Real get_real(const std::string& key) const {
        const std::string v = raw(key);
        try {
            std::size_t pos = 0;
            const Real r = std::stod(v, &pos);
            if (pos != v.size()) throw config_error("");
            return r;
        } catch (...) {
            throw config_error("config key " + key + ": not a number: " + v);
        }
    }
    Real get_real(const std::string& key, Real def) const { return has(key) ? get_real(key) : def; }

    bool get_bool(const std::string& key) const {
        const std::string v = raw(key);
        if (v == "true") return true;
        if (v == "false") return false;
        throw config_error("config key " + key + ": expected true|false, got " + v);
    }
    bool get_bool(const std::string& key, bool def) const { return has(key) ? get_bool(key) : def; }

    std::vector<std::string> get_str_list(const std::string& key) const {
        const std::string v = raw(key);
        if (v.size() < 2 || v.front() != '[' || v.back() != ']')
            throw config_error("config key " + key + ": expected [a, b, ...]");
        std::vector<std::string> out;
        std::string item;
        for (std::size_t i = 1; i + 1 < v.size(); ++i) {
            if (v[i] == ',') {
                out.push_back(unquote(strip(item)));
                item.clear();
            } else {
                item.push_back(v[i]);
            }
        }
        const std::string last = strip(item);
        if (!last.empty()) out.push_back(unquote(last));
        return out;
    }
    std::vector<std::string> get_str_list(const std::string& key, std::vector<std::string> def) const {
        return has(key) ? get_str_list(key) : std::move(def);
    }

    // Canonical serialization: sorted dotted keys, one per line. Used both
    // for the snapshot written into artifact directories and for the hash.
    std::string serialize() const {
        std::string out;
        for (const auto& [k, v] : values_) {
            out += k;
            out += " = ";
            out += v;
            out += "\n";
        }
        return out;
    }

    std::string hash() const { return hex64(fnv1a(serialize())); }

    void write_snapshot(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw error("cannot write config snapshot: " + path);
        out << serialize();
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    std::string raw(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) throw config_error("missing config key: " + key);
        return it->second;
    }

    static std::string strip_comment(const std::string& s) {
        bool in_str = false;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '"') in_str = !in_str;
            if (s[i] == '#' && !in_str) return s.substr(0, i);
        }
        return s;
    }

    static std::string strip(const std::string& s) {
        std::size_t b = 0;
        std::size_t e = s.size();
        while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
        while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
        return s.substr(b, e - b);
    }

    static std::string unquote(const std::string& s) {
        if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
        return s;
    }

    std::map<std::string, std::string> values_;
};

}  // namespace muse
