#include "chanfuse/textconfig.hpp"

#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>

namespace chanfuse {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_fields(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream iss(s);
    std::string tok;
    while (iss >> tok) out.push_back(tok);
    return out;
}

}  // namespace

TextConfig TextConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path);
}

TextConfig TextConfig::parse_string(const std::string& text, const std::string& source_name) {
    TextConfig cfg;
    cfg.source_ = source_name;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(source_name, lineno, "expected 'key = value', got '" + line + "'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ParseError(source_name, lineno, "empty key");
        cfg.entries_.push_back({key, split_fields(value), lineno});
    }
    return cfg;
}

bool TextConfig::has(const std::string& key) const { return find(key) != nullptr; }

const TextConfig::Entry* TextConfig::find(const std::string& key) const {
    for (const auto& e : entries_)
        if (e.key == key) return &e;
    return nullptr;
}

std::vector<const TextConfig::Entry*> TextConfig::find_all(const std::string& key) const {
    std::vector<const Entry*> out;
    for (const auto& e : entries_)
        if (e.key == key) out.push_back(&e);
    return out;
}

double TextConfig::parse_double_field(const Entry& e, size_t idx, const std::string& source) {
    if (idx >= e.fields.size())
        throw ParseError(source, e.line, "key '" + e.key + "' needs at least " +
                                             std::to_string(idx + 1) + " value field(s)");
    const std::string& f = e.fields[idx];
    if (f == "inf" || f == "+inf") return std::numeric_limits<double>::infinity();
    if (f == "-inf") return -std::numeric_limits<double>::infinity();
    try {
        size_t pos = 0;
        double v = std::stod(f, &pos);
        if (pos != f.size()) throw std::invalid_argument(f);
        return v;
    } catch (const std::exception&) {
        throw ParseError(source, e.line, "key '" + e.key + "': bad number '" + f + "'");
    }
}

long long TextConfig::parse_int_field(const Entry& e, size_t idx, const std::string& source) {
    if (idx >= e.fields.size())
        throw ParseError(source, e.line, "key '" + e.key + "' needs at least " +
                                             std::to_string(idx + 1) + " value field(s)");
    const std::string& f = e.fields[idx];
    try {
        size_t pos = 0;
        long long v = std::stoll(f, &pos);
        if (pos != f.size()) throw std::invalid_argument(f);
        return v;
    } catch (const std::exception&) {
        throw ParseError(source, e.line, "key '" + e.key + "': bad integer '" + f + "'");
    }
}

std::string TextConfig::get_str(const std::string& key) const {
    const Entry* e = find(key);
    if (!e) throw ParseError(source_, 0, "missing required key '" + key + "'");
    if (e->fields.empty()) throw ParseError(source_, e->line, "key '" + key + "' has no value");
    return e->fields[0];
}

std::string TextConfig::get_str(const std::string& key, const std::string& fallback) const {
    const Entry* e = find(key);
    if (!e) return fallback;
    if (e->fields.empty()) throw ParseError(source_, e->line, "key '" + key + "' has no value");
    return e->fields[0];
}

long long TextConfig::get_int(const std::string& key) const {
    const Entry* e = find(key);
    if (!e) throw ParseError(source_, 0, "missing required key '" + key + "'");
    return parse_int_field(*e, 0, source_);
}

long long TextConfig::get_int(const std::string& key, long long fallback) const {
    const Entry* e = find(key);
    return e ? parse_int_field(*e, 0, source_) : fallback;
}

double TextConfig::get_double(const std::string& key) const {
    const Entry* e = find(key);
    if (!e) throw ParseError(source_, 0, "missing required key '" + key + "'");
    return parse_double_field(*e, 0, source_);
}

double TextConfig::get_double(const std::string& key, double fallback) const {
    const Entry* e = find(key);
    return e ? parse_double_field(*e, 0, source_) : fallback;
}

bool TextConfig::get_bool(const std::string& key) const {
    const Entry* e = find(key);
    if (!e) throw ParseError(source_, 0, "missing required key '" + key + "'");
    if (e->fields.empty()) throw ParseError(source_, e->line, "key '" + key + "' has no value");
    const std::string& f = e->fields[0];
    if (f == "true" || f == "1" || f == "yes") return true;
    if (f == "false" || f == "0" || f == "no") return false;
    throw ParseError(source_, e->line, "key '" + key + "': bad boolean '" + f + "'");
}

bool TextConfig::get_bool(const std::string& key, bool fallback) const {
    return has(key) ? get_bool(key) : fallback;
}

Vec3 TextConfig::get_vec3(const std::string& key) const {
    const Entry* e = find(key);
    if (!e) throw ParseError(source_, 0, "missing required key '" + key + "'");
    if (e->fields.size() != 3)
        throw ParseError(source_, e->line, "key '" + key + "' needs exactly 3 coordinates");
    return {parse_double_field(*e, 0, source_), parse_double_field(*e, 1, source_),
            parse_double_field(*e, 2, source_)};
}

std::vector<double> TextConfig::get_doubles(const std::string& key) const {
    const Entry* e = find(key);
    if (!e) throw ParseError(source_, 0, "missing required key '" + key + "'");
    std::vector<double> out;
    for (size_t i = 0; i < e->fields.size(); ++i) out.push_back(parse_double_field(*e, i, source_));
    return out;
}

}  // namespace chanfuse
