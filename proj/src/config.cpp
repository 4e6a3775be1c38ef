#include "tslr/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace tslr {

std::map<std::string, std::string> read_key_value_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io_failure, "cannot open " + path);
    std::map<std::string, std::string> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto notspace = line.find_first_not_of(" \t");
        if (notspace == std::string::npos) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorCode::invalid_config,
                        "missing '=' at " + path + ":" + std::to_string(line_no));
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t");
            auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

double parse_clock_minutes(const std::string& s) {
    auto colon = s.find(':');
    try {
        if (colon != std::string::npos) {
            int h = std::stoi(s.substr(0, colon));
            int m = std::stoi(s.substr(colon + 1));
            if (h < 0 || h > 24 || m < 0 || m > 59) throw std::out_of_range(s);
            return h * 60.0 + m;
        }
        return std::stod(s);
    } catch (const std::exception&) {
        throw Error(ErrorCode::invalid_config, "bad clock value '" + s + "'");
    }
}

namespace {

double require_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw Error(ErrorCode::invalid_config, "bad value for " + key + ": '" + value + "'");
    }
}

long long require_int(const std::string& key, const std::string& value) {
    double v = require_double(key, value);
    if (v != std::floor(v))
        throw Error(ErrorCode::invalid_config, key + " must be an integer");
    return static_cast<long long>(v);
}

void check(bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::invalid_config, what);
}

} // namespace

void RunConfig::apply(const std::string& key, const std::string& value) {
    // stage into a copy so a rejected key leaves the config untouched
    RunConfig staged = *this;
    staged.apply_checked(key, value);
    *this = staged;
}

void RunConfig::apply_checked(const std::string& key, const std::string& value) {
    if (key == "rank") {
        rank = static_cast<int>(require_int(key, value));
        check(rank >= 1, "rank must be >= 1");
    } else if (key == "lambda") {
        lambda = require_double(key, value);
        check(lambda >= 0.0, "lambda must be >= 0");
    } else if (key == "seed") {
        seed = static_cast<std::uint64_t>(require_int(key, value));
    } else if (key == "threads") {
        threads = static_cast<int>(require_int(key, value));
        check(threads >= 0, "threads must be >= 0");
    } else if (key == "max_outer") {
        fit.max_outer = static_cast<int>(require_int(key, value));
        check(fit.max_outer >= 1, "max_outer must be >= 1");
    } else if (key == "rel_tol") {
        fit.rel_tol = require_double(key, value);
        check(fit.rel_tol > 0.0, "rel_tol must be > 0");
    } else if (key == "qp_dense_cap") {
        fit.qp_dense_cap = static_cast<int>(require_int(key, value));
        check(fit.qp_dense_cap >= 1, "qp_dense_cap must be >= 1");
    } else if (key == "nmf_init_iterations") {
        fit.nmf_init_iterations = static_cast<int>(require_int(key, value));
        check(fit.nmf_init_iterations >= 1, "nmf_init_iterations must be >= 1");
    } else if (key == "rules.max_sleep_hours") {
        rules.max_sleep_hours = require_double(key, value);
    } else if (key == "rules.max_awake_hours") {
        rules.max_awake_hours = require_double(key, value);
    } else if (key == "rules.night_start") {
        rules.night_start_minutes = parse_clock_minutes(value);
    } else if (key == "rules.night_end") {
        rules.night_end_minutes = parse_clock_minutes(value);
    } else if (key == "rules.isolation_gap_days") {
        rules.isolation_gap_days = static_cast<int>(require_int(key, value));
    } else if (key == "rules.max_missing_fraction") {
        rules.max_missing_fraction = require_double(key, value);
    } else if (key == "components") {
        components.clear();
        std::stringstream ss(value);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            int c = static_cast<int>(require_int(key, tok));
            check(c >= 1, "component numbers are 1-based");
            components.push_back(c);
        }
    } else if (key == "outlier_percentile") {
        outlier_percentile = require_double(key, value);
        check(outlier_percentile > 0.0 && outlier_percentile < 100.0,
              "outlier_percentile outside (0, 100)");
    } else if (key == "cluster_k") {
        cluster_k = static_cast<int>(require_int(key, value));
        check(cluster_k >= 1, "cluster_k must be >= 1");
    } else if (key == "kmeans_restarts") {
        kmeans_restarts = static_cast<int>(require_int(key, value));
        check(kmeans_restarts >= 1, "kmeans_restarts must be >= 1");
    } else if (key == "sample_minutes") {
        sample_minutes = static_cast<int>(require_int(key, value));
        check(sample_minutes >= 1, "sample_minutes must be >= 1");
    } else if (key == "min_observed_fraction") {
        min_observed_fraction = require_double(key, value);
        check(min_observed_fraction > 0.0 && min_observed_fraction <= 1.0,
              "min_observed_fraction outside (0, 1]");
    } else if (key == "sigma") {
        sigma = require_double(key, value);
        check(sigma >= 0.0, "sigma must be >= 0");
    } else if (key == "cv.folds") {
        cv.folds = static_cast<int>(require_int(key, value));
        check(cv.folds >= 2, "cv.folds must be >= 2");
    } else if (key == "cv.grid_size") {
        cv.grid_size = static_cast<int>(require_int(key, value));
        check(cv.grid_size >= 1, "cv.grid_size must be >= 1");
    } else if (key == "cv.lo_factor") {
        cv.lo_factor = require_double(key, value);
        check(cv.lo_factor > 0.0, "cv.lo_factor must be > 0");
    } else if (key == "cv.hi_factor") {
        cv.hi_factor = require_double(key, value);
        check(cv.hi_factor > 0.0, "cv.hi_factor must be > 0");
    } else if (key == "error_metric") {
        if (value == "mae") use_rmse = false;
        else if (value == "rmse") use_rmse = true;
        else throw Error(ErrorCode::invalid_config, "error_metric must be mae or rmse");
    } else {
        throw Error(ErrorCode::invalid_config, "unknown config key '" + key + "'");
    }
    rules.validate();
}

void RunConfig::apply_file(const std::string& path) {
    for (const auto& [k, v] : read_key_value_file(path)) apply(k, v);
}

std::string RunConfig::echo() const {
    std::ostringstream out;
    out << "rank=" << rank << "\n"
        << "lambda=" << lambda << "\n"
        << "seed=" << seed << "\n"
        << "threads=" << threads << "\n"
        << "max_outer=" << fit.max_outer << "\n"
        << "rel_tol=" << fit.rel_tol << "\n"
        << "qp_dense_cap=" << fit.qp_dense_cap << "\n"
        << "nmf_init_iterations=" << fit.nmf_init_iterations << "\n"
        << "rules.max_sleep_hours=" << rules.max_sleep_hours << "\n"
        << "rules.max_awake_hours=" << rules.max_awake_hours << "\n"
        << "rules.night_start=" << rules.night_start_minutes << "\n"
        << "rules.night_end=" << rules.night_end_minutes << "\n"
        << "rules.isolation_gap_days=" << rules.isolation_gap_days << "\n"
        << "rules.max_missing_fraction=" << rules.max_missing_fraction << "\n";
    out << "components=";
    if (components.empty()) out << "1,2,3";
    else
        for (std::size_t i = 0; i < components.size(); ++i)
            out << (i ? "," : "") << components[i];
    out << "\n"
        << "outlier_percentile=" << outlier_percentile << "\n"
        << "cluster_k=" << cluster_k << "\n"
        << "kmeans_restarts=" << kmeans_restarts << "\n"
        << "sample_minutes=" << sample_minutes << "\n"
        << "min_observed_fraction=" << min_observed_fraction << "\n"
        << "sigma=" << sigma << "\n"
        << "cv.folds=" << cv.folds << "\n"
        << "cv.grid_size=" << cv.grid_size << "\n"
        << "cv.lo_factor=" << cv.lo_factor << "\n"
        << "cv.hi_factor=" << cv.hi_factor << "\n"
        << "error_metric=" << (use_rmse ? "rmse" : "mae") << "\n";
    return out.str();
}

std::vector<int> RunConfig::component_indices(int r) const {
    std::vector<int> out;
    if (components.empty()) {
        for (int j = 0; j < std::min(3, r); ++j) out.push_back(j);
    } else {
        for (int c : components) {
            if (c < 1 || c > r)
                throw Error(ErrorCode::invalid_config,
                            "component " + std::to_string(c) + " outside 1.." + std::to_string(r));
            out.push_back(c - 1);
        }
    }
    return out;
}

} // namespace tslr
