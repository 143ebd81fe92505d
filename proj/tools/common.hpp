#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcbm/prior.hpp"

// Exit codes: 0 success, 1 check/metric failure, 2 usage/config error,
// 3 I/O or format error.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key=value configuration: a plain config file (one pair per line,
// '#' comments) merged with command-line overrides, command line winning.
struct RunConfig {
    std::map<std::string, std::string> values;

    static const std::set<std::string>& known_keys();

    void set(const std::string& key, const std::string& value);
    void load_file(const std::string& path);

    bool has(const std::string& key) const { return values.count(key) != 0; }
    std::string str(const std::string& key, const std::string& fallback) const;
    std::string require(const std::string& key) const;
    double num(const std::string& key, double fallback) const;
    double positive(const std::string& key, double fallback) const;
    long integer(const std::string& key, long fallback) const;
    std::uint64_t seed(const std::string& key, std::uint64_t fallback) const;
    bool flag(const std::string& key) const;

    std::vector<double> grid(const std::string& key, const std::string& fallback) const;
    std::vector<int> int_list(const std::string& key, const std::string& fallback) const;
    std::pair<double, double> betas() const;
    tcbm::prior::CorrelationSchedule schedule() const;
};

int run_verify(const RunConfig& cfg);
