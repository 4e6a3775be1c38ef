#ifndef TSLR_CONFIG_HPP
#define TSLR_CONFIG_HPP

#include <map>
#include <string>
#include <vector>

#include "tslr/analytics.hpp"
#include "tslr/solver.hpp"
#include "tslr/synth.hpp"
#include "tslr/types.hpp"

namespace tslr {

// key=value lines, '#' comments, unknown keys rejected by the consumer
std::map<std::string, std::string> read_key_value_file(const std::string& path);

// "HH:MM" or plain minutes
double parse_clock_minutes(const std::string& s);

// Resolved run settings: built-in defaults, overridden by a config file,
// overridden by flags. Every value is validated on assignment and the
// resolved set is echoed at the start of each run.
struct RunConfig {
    int rank = 5;
    double lambda = 1e5;
    std::uint64_t seed = 0;
    int threads = 0;

    FitOptions fit;           // rel_tol, max_outer, qp_dense_cap, nmf iterations
    FilterRules rules;
    std::vector<int> components;  // 1-based in config/flags, empty = first 3
    double outlier_percentile = 98.0;
    int cluster_k = 2;
    int kmeans_restarts = 10;
    int sample_minutes = 10;
    double min_observed_fraction = 0.7;
    double sigma = 0.0;  // 0 = cross-validate
    CvOptions cv;
    bool use_rmse = false;

    // Applies one key; throws invalid-config on unknown keys or bad values,
    // leaving the configuration unchanged in that case.
    void apply(const std::string& key, const std::string& value);
    void apply_file(const std::string& path);

    // key=value listing of the resolved configuration
    std::string echo() const;

    // 0-based component indices for the analytics layer
    std::vector<int> component_indices(int r) const;

private:
    void apply_checked(const std::string& key, const std::string& value);
};

} // namespace tslr

#endif
