// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

namespace tcfnet {

// Flat key=value run configuration. File values load first, command-line
// overrides land on top, and the whole effective config is echoed (with its
// hash) into every results directory.
class RunConfig {
public:
    static RunConfig from_file(const std::string& path);

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) > 0; }
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;

    const std::map<std::string, std::string>& values() const { return values_; }

    // Sorted key=value lines; the hash is FNV-1a over this form.
    std::string canonical() const;
    std::string hash() const;

    void save(const std::string& path) const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace tcfnet
