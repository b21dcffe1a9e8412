#pragma once

#include <optional>
#include <string>
#include <vector>

#include "chanfuse/common.hpp"

namespace chanfuse {

// Line-oriented `key = value` dialect shared by scene, wiring, dataset and
// experiment files. '#' starts a comment, values are whitespace-separated
// fields, repeated keys accumulate in file order.
class TextConfig {
  public:
    struct Entry {
        std::string key;
        std::vector<std::string> fields;
        int line = 0;
    };

    static TextConfig parse_file(const std::string& path);
    static TextConfig parse_string(const std::string& text, const std::string& source_name);

    const std::string& source() const { return source_; }
    bool has(const std::string& key) const;
    const Entry* find(const std::string& key) const;  // first occurrence or nullptr
    std::vector<const Entry*> find_all(const std::string& key) const;

    // Typed single-value getters; throw ParseError on missing key / bad value.
    std::string get_str(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& fallback) const;
    long long get_int(const std::string& key) const;
    long long get_int(const std::string& key, long long fallback) const;
    double get_double(const std::string& key) const;  // accepts "inf"
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key) const;
    bool get_bool(const std::string& key, bool fallback) const;
    Vec3 get_vec3(const std::string& key) const;
    std::vector<double> get_doubles(const std::string& key) const;  // all fields of first entry

    static double parse_double_field(const Entry& e, size_t idx, const std::string& source);
    static long long parse_int_field(const Entry& e, size_t idx, const std::string& source);

    const std::vector<Entry>& entries() const { return entries_; }

  private:
    std::string source_;
    std::vector<Entry> entries_;
};

}  // namespace chanfuse
